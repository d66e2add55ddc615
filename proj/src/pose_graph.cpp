#include "coloc/pose_graph.hpp"

#include <algorithm>
#include <deque>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "coloc/wire.hpp"

namespace coloc {
namespace {

constexpr double kCovarianceFloor = 1e-9;

Eigen::Matrix3d information_from_covariance(const Covariance3& cov) {
  const Covariance3 repaired = repair_psd(cov, kCovarianceFloor);
  Eigen::Matrix3d info = repaired.ldlt().solve(Eigen::Matrix3d::Identity());
  return 0.5 * (info + info.transpose());
}

// Rows of L with L^T L = information, dropping the null space.
Eigen::MatrixXd sqrt_information(const Eigen::MatrixXd& information) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(information);
  const Eigen::VectorXd& values = eig.eigenvalues();
  const double cutoff = 1e-14 * std::max(1.0, values.cwiseAbs().maxCoeff());
  std::vector<int> kept;
  for (int i = 0; i < values.size(); ++i)
    if (values(i) > cutoff) kept.push_back(i);
  Eigen::MatrixXd out(kept.size(), information.cols());
  for (std::size_t r = 0; r < kept.size(); ++r)
    out.row(r) = std::sqrt(values(kept[r])) * eig.eigenvectors().col(kept[r]).transpose();
  return out;
}

// Residual of a between factor and its Jacobians w.r.t. both endpoints.
struct BetweenLinearization {
  Eigen::Vector3d error;
  Eigen::Matrix3d d_from;
  Eigen::Matrix3d d_to;
};

BetweenLinearization linearize_between(const Pose2d& from, const Pose2d& to,
                                       const Pose2d& measured) {
  const Pose2d predicted = between(from, to);
  const auto jp = jacobians_between(from, to);
  const auto jz = jacobians_between(measured, predicted);
  BetweenLinearization lin;
  lin.error = between(measured, predicted).vector();
  lin.d_from = jz.wrt_b * jp.wrt_a;
  lin.d_to = jz.wrt_b * jp.wrt_b;
  return lin;
}

Eigen::VectorXd marginal_error(const Factor& f, const std::vector<const Pose2d*>& poses) {
  Eigen::VectorXd e(3 * poses.size());
  for (std::size_t k = 0; k < poses.size(); ++k) {
    const Pose2d mean = Pose2d::FromVector(f.linear_mean.segment<3>(3 * k));
    e.segment<3>(3 * k) = tangent_diff(*poses[k], mean);
  }
  return e;
}

// Whitened residual and per-key Jacobian blocks of any factor.
struct Linearization {
  Eigen::VectorXd residual;
  std::vector<Eigen::MatrixXd> blocks;
};

Linearization linearize(const Factor& f, const std::vector<const Pose2d*>& poses) {
  Linearization lin;
  const auto& L = f.sqrt_information;
  switch (f.kind) {
    case FactorKind::MapPrior:
      lin.residual = L * tangent_diff(*poses[0], f.measurement.mean);
      lin.blocks.push_back(L);
      break;
    case FactorKind::TemporalBetween:
    case FactorKind::SpatialBetween: {
      const auto b = linearize_between(*poses[0], *poses[1], f.measurement.mean);
      lin.residual = L * b.error;
      lin.blocks.push_back(L * b.d_from);
      lin.blocks.push_back(L * b.d_to);
      break;
    }
    case FactorKind::DenseMarginal:
      lin.residual = L * marginal_error(f, poses);
      for (std::size_t k = 0; k < poses.size(); ++k) lin.blocks.push_back(L.middleCols(3 * k, 3));
      break;
  }
  return lin;
}

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t a) {
    while (parent_[a] != a) a = parent_[a] = parent_[parent_[a]];
    return a;
  }
  void unite(std::size_t a, std::size_t b) { parent_[find(a)] = find(b); }

 private:
  std::vector<std::size_t> parent_;
};

// Working set for one optimization: active nodes and the factors among them.
// The sparsity pattern of the normal equations is built once; each iteration
// only refills values through precomputed slots.
struct Problem {
  std::vector<NodeKey> keys;
  std::map<NodeKey, int> index;
  std::vector<Pose2d> x;
  struct Term {
    const Factor* factor;
    std::vector<int> vars;
  };
  std::vector<Term> terms;

  Eigen::SparseMatrix<double> H;  // lower triangle
  std::vector<int> slots;
  std::vector<int> diagonal_slots;

  double term_cost(const Term& t, const std::vector<Pose2d>& states) const {
    const Factor& f = *t.factor;
    switch (f.kind) {
      case FactorKind::MapPrior: {
        const Eigen::Vector3d e = tangent_diff(states[t.vars[0]], f.measurement.mean);
        return e.dot(f.information.topLeftCorner<3, 3>() * e);
      }
      case FactorKind::TemporalBetween:
      case FactorKind::SpatialBetween: {
        const Pose2d predicted = between(states[t.vars[0]], states[t.vars[1]]);
        const Eigen::Vector3d e = between(f.measurement.mean, predicted).vector();
        return e.dot(f.information.topLeftCorner<3, 3>() * e);
      }
      case FactorKind::DenseMarginal: {
        Eigen::VectorXd e(3 * t.vars.size());
        for (std::size_t k = 0; k < t.vars.size(); ++k) {
          const Pose2d mean = Pose2d::FromVector(f.linear_mean.segment<3>(3 * k));
          e.segment<3>(3 * k) = tangent_diff(states[t.vars[k]], mean);
        }
        return e.dot(f.information * e);
      }
    }
    return 0.0;
  }

  double cost(const std::vector<Pose2d>& states) const {
    double c = 0.0;
    for (const auto& t : terms) c += term_cost(t, states);
    return 0.5 * c;
  }

  template <typename Visit>
  void for_each_entry(const Term& t, Visit&& visit) const {
    const std::size_t m = t.vars.size();
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = 0; b < m; ++b) {
        const int row = t.vars[a], col = t.vars[b];
        if (row < col) continue;
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c) {
            if (row == col && r < c) continue;
            visit(3 * row + r, 3 * col + c, static_cast<int>(3 * a) + r, static_cast<int>(3 * b) + c);
          }
      }
  }

  void build_pattern() {
    const int n = 3 * static_cast<int>(x.size());
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(terms.size() * 27 + n);
    for (const auto& t : terms)
      for_each_entry(t, [&](int row, int col, int, int) { triplets.emplace_back(row, col, 0.0); });
    // Keep every diagonal entry structurally present for damping.
    for (int i = 0; i < n; ++i) triplets.emplace_back(i, i, 0.0);
    H.resize(n, n);
    H.setFromTriplets(triplets.begin(), triplets.end());
    H.makeCompressed();

    auto slot_of = [&](int row, int col) {
      const int* inner = H.innerIndexPtr();
      const int begin = H.outerIndexPtr()[col], end = H.outerIndexPtr()[col + 1];
      return static_cast<int>(std::lower_bound(inner + begin, inner + end, row) - inner);
    };
    slots.clear();
    slots.reserve(triplets.size());
    for (const auto& t : terms)
      for_each_entry(t, [&](int row, int col, int, int) { slots.push_back(slot_of(row, col)); });
    diagonal_slots.resize(n);
    for (int i = 0; i < n; ++i) diagonal_slots[i] = slot_of(i, i);
  }

  template <typename Block, typename Gradient>
  void accumulate(const Term& t, const Block& h, const Gradient& gl, const int*& slot,
                  Eigen::VectorXd& g) {
    double* values = H.valuePtr();
    for (std::size_t a = 0; a < t.vars.size(); ++a)
      g.segment<3>(3 * t.vars[a]) += gl.template segment<3>(3 * a);
    for_each_entry(t, [&](int, int, int lr, int lc) { values[*slot++] += h(lr, lc); });
  }

  // Refills H (lower triangle of J^T W J) and g = J^T W r at the current x.
  void normal_equations(Eigen::VectorXd& g) {
    g = Eigen::VectorXd::Zero(H.rows());
    std::fill(H.valuePtr(), H.valuePtr() + H.nonZeros(), 0.0);
    const int* slot = slots.data();
    for (const auto& t : terms) {
      const Factor& f = *t.factor;
      switch (f.kind) {
        case FactorKind::MapPrior: {
          const Eigen::Matrix3d W = f.information.topLeftCorner<3, 3>();
          const Eigen::Vector3d e = tangent_diff(x[t.vars[0]], f.measurement.mean);
          accumulate(t, W, Eigen::Vector3d(W * e), slot, g);
          break;
        }
        case FactorKind::TemporalBetween:
        case FactorKind::SpatialBetween: {
          const Eigen::Matrix3d W = f.information.topLeftCorner<3, 3>();
          const auto b = linearize_between(x[t.vars[0]], x[t.vars[1]], f.measurement.mean);
          Eigen::Matrix<double, 3, 6> J;
          J << b.d_from, b.d_to;
          const Eigen::Matrix<double, 6, 3> JtW = J.transpose() * W;
          const Eigen::Matrix<double, 6, 6> h = JtW * J;
          accumulate(t, h, Eigen::Matrix<double, 6, 1>(JtW * b.error), slot, g);
          break;
        }
        case FactorKind::DenseMarginal: {
          Eigen::VectorXd e(3 * t.vars.size());
          for (std::size_t k = 0; k < t.vars.size(); ++k) {
            const Pose2d mean = Pose2d::FromVector(f.linear_mean.segment<3>(3 * k));
            e.segment<3>(3 * k) = tangent_diff(x[t.vars[k]], mean);
          }
          accumulate(t, f.information, Eigen::VectorXd(f.information * e), slot, g);
          break;
        }
      }
    }
  }
};

void write_upper(std::ostream& out, const Eigen::MatrixXd& m) {
  for (int r = 0; r < m.rows(); ++r)
    for (int c = r; c < m.cols(); ++c) out << ' ' << m(r, c);
}

}  // namespace

std::string to_string(const NodeKey& key) {
  std::ostringstream out;
  out << "(" << key.vehicle << ", " << key.stamp << ")";
  return out.str();
}

const char* to_string(FactorKind kind) {
  switch (kind) {
    case FactorKind::MapPrior: return "MapPrior";
    case FactorKind::TemporalBetween: return "TemporalBetween";
    case FactorKind::SpatialBetween: return "SpatialBetween";
    case FactorKind::DenseMarginal: return "DenseMarginal";
  }
  return "Unknown";
}

Factor make_map_prior(const NodeKey& key, const GaussianPose& z) {
  Factor f;
  f.kind = FactorKind::MapPrior;
  f.keys = {key};
  f.measurement = z;
  f.information = information_from_covariance(z.cov);
  f.sqrt_information = Eigen::Matrix3d(f.information.llt().matrixU());
  return f;
}

Factor make_between(FactorKind kind, const NodeKey& from, const NodeKey& to,
                    const GaussianPose& z) {
  Factor f;
  f.kind = kind;
  f.keys = {from, to};
  f.measurement = z;
  f.information = information_from_covariance(z.cov);
  f.sqrt_information = Eigen::Matrix3d(f.information.llt().matrixU());
  return f;
}

Factor make_dense_marginal(std::vector<NodeKey> keys, const Eigen::VectorXd& mean,
                           const Eigen::MatrixXd& information) {
  Factor f;
  f.kind = FactorKind::DenseMarginal;
  f.keys = std::move(keys);
  f.linear_mean = mean;
  for (std::size_t k = 0; k < f.keys.size(); ++k)
    f.linear_mean(3 * k + 2) = normalize_angle(f.linear_mean(3 * k + 2));
  f.information = repair_psd(information, 0.0);
  f.sqrt_information = sqrt_information(f.information);
  return f;
}

GaussianPose decompose_odometry(const GaussianPose& base_from_origin,
                                const GaussianPose& from_origin) {
  GaussianPose out;
  out.mean = between(base_from_origin.mean, from_origin.mean);
  const auto j = jacobians_compose(base_from_origin.mean, out.mean);
  const Eigen::Matrix3d remainder =
      from_origin.cov - j.wrt_a * base_from_origin.cov * j.wrt_a.transpose();
  // J2 is a rotation block, so its inverse is its transpose.
  const Eigen::Matrix3d increment = j.wrt_b.transpose() * remainder * j.wrt_b;
  out.cov = repair_psd(increment, kCovarianceFloor);
  return out;
}

PoseGraph::PoseGraph(PoseGraphOptions options) : options_(options) {}

std::uint64_t PoseGraph::insert_factor(Factor factor) {
  const std::uint64_t id = next_factor_id_++;
  for (const auto& key : factor.keys) ensure_node(key).factors.push_back(id);
  factors_.emplace(id, std::move(factor));
  return id;
}

void PoseGraph::erase_factor(std::uint64_t id) {
  auto it = factors_.find(id);
  if (it == factors_.end()) return;
  for (const auto& key : it->second.keys) {
    auto node = nodes_.find(key);
    if (node == nodes_.end()) continue;
    auto& ids = node->second.factors;
    ids.erase(std::remove(ids.begin(), ids.end(), id), ids.end());
  }
  factors_.erase(it);
}

PoseGraph::Node& PoseGraph::ensure_node(const NodeKey& key) {
  if (!latest_ || key.stamp > *latest_) latest_ = key.stamp;
  return nodes_[key];
}

void PoseGraph::check_not_stale(Stamp t) const {
  if (latest_ && t < *latest_ - options_.window) {
    std::ostringstream msg;
    msg << "measurement at t=" << t << " is older than the window (latest " << *latest_ << ")";
    throw StaleMeasurement(msg.str());
  }
}

void PoseGraph::propagate_initialization(std::vector<std::uint64_t> seeds) {
  std::deque<std::uint64_t> queue(seeds.begin(), seeds.end());
  auto initialize = [&](const NodeKey& key, const Pose2d& pose) {
    Node& node = nodes_.at(key);
    if (node.initialized) return;
    node.estimate = pose;
    node.initialized = true;
    queue.insert(queue.end(), node.factors.begin(), node.factors.end());
  };
  while (!queue.empty()) {
    const auto it = factors_.find(queue.front());
    queue.pop_front();
    if (it == factors_.end()) continue;
    const Factor& f = it->second;
    if (f.kind == FactorKind::MapPrior) {
      initialize(f.keys[0], f.measurement.mean);
    } else if (f.kind != FactorKind::DenseMarginal) {
      const Node& from = nodes_.at(f.keys[0]);
      const Node& to = nodes_.at(f.keys[1]);
      if (from.initialized && !to.initialized)
        initialize(f.keys[1], compose(from.estimate, f.measurement.mean));
      else if (to.initialized && !from.initialized)
        initialize(f.keys[0], compose(to.estimate, inverse(f.measurement.mean)));
    }
  }
}

void PoseGraph::add_map_measurement(VehicleId vehicle, Stamp t, const GaussianPose& z) {
  check_not_stale(t);
  const auto id = insert_factor(make_map_prior({vehicle, t}, z));
  propagate_initialization({id});
}

OdometryDecomposition PoseGraph::factor_decompose(VehicleId vehicle, Stamp t,
                                                  const GaussianPose& from_origin) {
  check_not_stale(t);
  auto& records = odometry_[vehicle];
  if (records.count(t) != 0) {
    std::ostringstream msg;
    msg << "odometry for vehicle " << vehicle << " at t=" << t << " already received";
    throw OutOfOrderOdometry(msg.str());
  }
  const auto next = records.upper_bound(t);
  if (next == records.begin() && next != records.end()) {
    // The link that spanned this stamp may already be folded into a marginal.
    if (auto floor = pruned_odometry_.find(vehicle);
        floor != pruned_odometry_.end() && t > floor->second) {
      throw StaleMeasurement("odometry predecessor already marginalized");
    }
  }
  OdometryDecomposition d;
  d.vehicle = vehicle;
  d.stamp = t;
  d.origin_referenced = from_origin;
  if (next != records.begin()) {
    const auto prev = std::prev(next);
    d.incoming = TemporalLink{prev->first, t, decompose_odometry(prev->second, from_origin)};
  }
  if (next != records.end())
    d.outgoing = TemporalLink{t, next->first, decompose_odometry(from_origin, next->second)};
  records.emplace(t, from_origin);
  return d;
}

void PoseGraph::add_temporal_rel_obs(const OdometryDecomposition& d) {
  const NodeKey here{d.vehicle, d.stamp};
  ensure_node(here);
  std::vector<std::uint64_t> added;
  if (d.incoming && d.outgoing) {
    const NodeKey from{d.vehicle, d.incoming->from}, to{d.vehicle, d.outgoing->to};
    if (auto node = nodes_.find(from); node != nodes_.end()) {
      const auto ids = node->second.factors;
      for (auto id : ids) {
        const Factor& f = factors_.at(id);
        if (f.kind == FactorKind::TemporalBetween && f.keys[0] == from && f.keys[1] == to)
          erase_factor(id);
      }
    }
  }
  if (d.incoming)
    added.push_back(insert_factor(make_between(FactorKind::TemporalBetween,
                                               {d.vehicle, d.incoming->from}, here,
                                               d.incoming->z)));
  if (d.outgoing)
    added.push_back(insert_factor(make_between(FactorKind::TemporalBetween, here,
                                               {d.vehicle, d.outgoing->to}, d.outgoing->z)));
  propagate_initialization(std::move(added));
}

void PoseGraph::add_spatial_rel_obs(VehicleId observer, VehicleId observed, Stamp t,
                                    const GaussianPose& z) {
  if (observer == observed)
    throw InvalidObservation("spatial observation of vehicle " + std::to_string(observer) +
                             " by itself");
  check_not_stale(t);
  const auto id =
      insert_factor(make_between(FactorKind::SpatialBetween, {observer, t}, {observed, t}, z));
  propagate_initialization({id});
}

void PoseGraph::ingest(const WireMessage& msg) {
  // Validate everything first so a rejected packet leaves no trace.
  check_not_stale(msg.stamp);
  if (const auto* spatial = std::get_if<SpatialRelObsPayload>(&msg.payload)) {
    for (const auto& d : spatial->detections)
      if (d.observed == msg.sender)
        throw InvalidObservation("spatial observation of vehicle " +
                                 std::to_string(msg.sender) + " by itself");
    for (const auto& d : spatial->detections)
      add_spatial_rel_obs(msg.sender, d.observed, msg.stamp, d.z);
  } else if (const auto* map = std::get_if<MapMeasurementPayload>(&msg.payload)) {
    add_map_measurement(msg.sender, msg.stamp, map->z);
  } else {
    const auto& odom = std::get<TemporalRelObsPayload>(msg.payload);
    add_temporal_rel_obs(factor_decompose(msg.sender, msg.stamp, odom.from_origin));
  }
}

LatestEstimates PoseGraph::process_packet(const WireMessage& msg, OptimizeReport* report) {
  ingest(msg);
  LatestEstimates out = optimize(true, report);
  marginalize_old_nodes();
  return out;
}

std::map<NodeKey, int> PoseGraph::component_labels() const {
  // nodes_ is ordered, so a sorted key vector serves as the index.
  std::vector<NodeKey> keys;
  keys.reserve(nodes_.size());
  for (const auto& [key, node] : nodes_) keys.push_back(key);
  auto index_of = [&](const NodeKey& key) {
    return static_cast<std::size_t>(std::lower_bound(keys.begin(), keys.end(), key) - keys.begin());
  };
  UnionFind uf(keys.size());
  for (const auto& [id, f] : factors_) {
    if (f.keys.size() < 2) continue;
    const std::size_t first = index_of(f.keys[0]);
    for (std::size_t k = 1; k < f.keys.size(); ++k) uf.unite(first, index_of(f.keys[k]));
  }
  std::map<NodeKey, int> labels;
  for (std::size_t i = 0; i < keys.size(); ++i)
    labels.emplace_hint(labels.end(), keys[i], static_cast<int>(uf.find(i)));
  return labels;
}

LatestEstimates PoseGraph::optimize(bool allow_unanchored, OptimizeReport* report) {
  const auto labels = component_labels();
  std::set<int> anchored;
  for (const auto& [id, f] : factors_)
    if (f.kind == FactorKind::MapPrior || f.kind == FactorKind::DenseMarginal)
      anchored.insert(labels.at(f.keys[0]));

  Problem problem;
  std::size_t unanchored = 0;
  for (const auto& [key, node] : nodes_) {
    if (node.initialized && anchored.count(labels.at(key))) {
      problem.index.emplace(key, static_cast<int>(problem.keys.size()));
      problem.keys.push_back(key);
      problem.x.push_back(node.estimate);
    } else {
      ++unanchored;
    }
  }
  if (unanchored > 0 && !allow_unanchored)
    throw UnderconstrainedGraph(std::to_string(unanchored) +
                                " node(s) have no path to a prior or marginal");
  for (const auto& [id, f] : factors_) {
    Problem::Term term{&f, {}};
    bool active = true;
    for (const auto& key : f.keys) {
      const auto it = problem.index.find(key);
      if (it == problem.index.end()) {
        active = false;
        break;
      }
      term.vars.push_back(it->second);
    }
    if (active) problem.terms.push_back(std::move(term));
  }

  OptimizeReport local;
  OptimizeReport& rep = report ? *report : local;
  rep = OptimizeReport{};
  rep.optimized_nodes = problem.keys.size();
  rep.unanchored_nodes = unanchored;

  if (!problem.keys.empty()) {
    const auto& settings = options_.optimizer;
    problem.build_pattern();
    Eigen::VectorXd g;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower> solver;
    double lambda = settings.initial_lambda;
    double cost = problem.cost(problem.x);
    rep.accepted_costs.push_back(cost);
    bool pattern_ready = false;
    bool factorized_any = false;
    while (rep.iterations < settings.max_iterations && !rep.converged) {
      ++rep.iterations;
      problem.normal_equations(g);
      if (!pattern_ready) {
        solver.analyzePattern(problem.H);
        pattern_ready = true;
      }
      double* values = problem.H.valuePtr();
      const int n = static_cast<int>(problem.diagonal_slots.size());
      Eigen::VectorXd diagonal(n);
      for (int i = 0; i < n; ++i) diagonal(i) = values[problem.diagonal_slots[i]];
      bool accepted = false;
      while (!accepted) {
        for (int i = 0; i < n; ++i)
          values[problem.diagonal_slots[i]] = diagonal(i) + lambda * std::max(diagonal(i), 1e-9);
        solver.factorize(problem.H);
        factorized_any = factorized_any || solver.info() == Eigen::Success;
        Eigen::VectorXd dx;
        if (solver.info() == Eigen::Success) dx = solver.solve(-g);
        if (solver.info() == Eigen::Success && dx.allFinite()) {
          std::vector<Pose2d> trial(problem.x.size());
          for (std::size_t i = 0; i < trial.size(); ++i)
            trial[i] = retract(problem.x[i], Eigen::Vector3d(dx.segment<3>(3 * i)));
          // A step this small cannot be judged by the cost any more; take it.
          if (dx.cwiseAbs().maxCoeff() < settings.step_tolerance) {
            problem.x = std::move(trial);
            rep.converged = true;
            break;
          }
          const double trial_cost = problem.cost(trial);
          // Near the optimum the decrease sinks below rounding; treat that as a tie
          // so the final Gauss-Newton-like step is still taken.
          if (trial_cost <= cost + 64 * std::numeric_limits<double>::epsilon() * cost) {
            rep.converged = cost - trial_cost <= settings.cost_tolerance * cost;
            problem.x = std::move(trial);
            cost = trial_cost;
            rep.accepted_costs.push_back(cost);
            lambda = std::max(lambda / settings.lambda_down, 1e-12);
            accepted = true;
            break;
          }
        }
        lambda *= settings.lambda_up;
        if (lambda > settings.max_lambda) {
          if (!factorized_any)
            throw UnderconstrainedGraph("normal equations are singular");
          rep.converged = true;  // no descent direction left
          break;
        }
      }
    }
    for (std::size_t i = 0; i < problem.keys.size(); ++i)
      nodes_.at(problem.keys[i]).estimate = problem.x[i];
  }
  return latest_estimates();
}

Covariance3 PoseGraph::marginal_covariance(const NodeKey& key) const {
  const auto labels = component_labels();
  const int target = labels.at(key);
  Problem problem;
  for (const auto& [k, node] : nodes_) {
    if (labels.at(k) != target || !node.initialized) continue;
    problem.index.emplace(k, static_cast<int>(problem.keys.size()));
    problem.keys.push_back(k);
    problem.x.push_back(node.estimate);
  }
  for (const auto& [id, f] : factors_) {
    Problem::Term term{&f, {}};
    bool active = true;
    for (const auto& k : f.keys) {
      const auto it = problem.index.find(k);
      if (it == problem.index.end()) {
        active = false;
        break;
      }
      term.vars.push_back(it->second);
    }
    if (active) problem.terms.push_back(std::move(term));
  }
  problem.build_pattern();
  Eigen::VectorXd g;
  problem.normal_equations(g);
  const Eigen::SparseMatrix<double>& H = problem.H;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower> solver(H);
  if (solver.info() != Eigen::Success) throw UnderconstrainedGraph("singular information matrix");
  const int i = problem.index.at(key);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(H.rows(), 3);
  rhs.block<3, 3>(3 * i, 0).setIdentity();
  const Eigen::MatrixXd cols = solver.solve(rhs);
  Covariance3 cov = cols.block<3, 3>(3 * i, 0);
  return 0.5 * (cov + cov.transpose());
}

constexpr double kShiftConditioning = 1e-8;

void PoseGraph::marginalize_old_nodes() {
  if (!latest_) return;
  const Stamp cutoff = *latest_ - options_.window;
  std::vector<NodeKey> old;
  for (const auto& [key, node] : nodes_)
    if (key.stamp < cutoff) old.push_back(key);
  if (old.empty()) return;

  const std::set<NodeKey> old_set(old.begin(), old.end());
  std::set<std::uint64_t> affected;
  for (const auto& key : old)
    for (auto id : nodes_.at(key).factors) affected.insert(id);

  // Dense local system: removed nodes first, then the Markov blanket.
  std::vector<NodeKey> local;
  std::map<NodeKey, int> local_index;
  for (const auto& key : old) {
    local_index.emplace(key, static_cast<int>(local.size()));
    local.push_back(key);
  }
  const int removed_count = static_cast<int>(local.size());
  for (auto id : affected)
    for (const auto& key : factors_.at(id).keys)
      if (!old_set.count(key) && !local_index.count(key)) {
        local_index.emplace(key, static_cast<int>(local.size()));
        local.push_back(key);
          }
  const int blanket_count = static_cast<int>(local.size()) - removed_count;

  std::optional<Factor> marginal;
  if (blanket_count > 0) {
    const int n = 3 * static_cast<int>(local.size());
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
    for (auto id : affected) {
      const Factor& f = factors_.at(id);
      std::vector<const Pose2d*> poses;
      std::vector<int> vars;
      bool usable = true;
      for (const auto& key : f.keys) {
        const Node& node = nodes_.at(key);
        usable = usable && node.initialized;
        poses.push_back(&node.estimate);
        vars.push_back(local_index.at(key));
      }
      // Factors of never-anchored components carry no global information.
      if (!usable) continue;
      const Linearization lin = linearize(f, poses);
      for (std::size_t a = 0; a < vars.size(); ++a) {
        g.segment<3>(3 * vars[a]) += lin.blocks[a].transpose() * lin.residual;
        for (std::size_t b = 0; b < vars.size(); ++b)
          H.block<3, 3>(3 * vars[a], 3 * vars[b]) += lin.blocks[a].transpose() * lin.blocks[b];
      }
    }
    const int m = 3 * removed_count, k = 3 * blanket_count;
    const Eigen::MatrixXd Hmm = H.topLeftCorner(m, m);
    const Eigen::MatrixXd Hbm = H.bottomLeftCorner(k, m);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Hmm);
    const double cutoff_value = 1e-12 * std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
    Eigen::VectorXd inv_values = eig.eigenvalues();
    for (int i = 0; i < inv_values.size(); ++i)
      inv_values(i) = inv_values(i) > cutoff_value ? 1.0 / inv_values(i) : 0.0;
    const Eigen::MatrixXd Hmm_pinv =
        eig.eigenvectors() * inv_values.asDiagonal() * eig.eigenvectors().transpose();
    Eigen::MatrixXd S = H.bottomRightCorner(k, k) - Hbm * Hmm_pinv * Hbm.transpose();
    S = 0.5 * (S + S.transpose());

    const Eigen::VectorXd s = g.tail(k) - Hbm * Hmm_pinv * g.head(m);

    if (S.cwiseAbs().maxCoeff() > 0.0) {
      std::vector<NodeKey> blanket(local.begin() + removed_count, local.end());
      // The mean shift -S^+ s is taken only along well-conditioned directions:
      // along nearly unobserved ones it would blow optimizer residue up into
      // metres of displacement.
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> seig(S);
      const double scut = kShiftConditioning * std::max(1.0, seig.eigenvalues().cwiseAbs().maxCoeff());
      Eigen::VectorXd sinv = seig.eigenvalues();
      for (int i = 0; i < sinv.size(); ++i) sinv(i) = sinv(i) > scut ? 1.0 / sinv(i) : 0.0;
      const Eigen::VectorXd delta =
          -(seig.eigenvectors() * sinv.asDiagonal() * seig.eigenvectors().transpose()) * s;
      Eigen::VectorXd mean(k);
      for (int b = 0; b < blanket_count; ++b) {
        const Pose2d shifted =
            retract(nodes_.at(blanket[b]).estimate, Eigen::Vector3d(delta.segment<3>(3 * b)));
        mean.segment<3>(3 * b) = shifted.vector();
      }
      marginal = make_dense_marginal(std::move(blanket), mean, S);
    }
  }

  for (auto id : affected) erase_factor(id);
  for (const auto& key : old) nodes_.erase(key);
  if (marginal) insert_factor(std::move(*marginal));

  for (auto& [vehicle, records] : odometry_) {
    const auto first_kept = records.lower_bound(cutoff);
    if (first_kept != records.begin()) pruned_odometry_[vehicle] = std::prev(first_kept)->first;
    records.erase(records.begin(), first_kept);
  }
}

std::size_t PoseGraph::num_factors(FactorKind kind) const {
  return static_cast<std::size_t>(std::count_if(
      factors_.begin(), factors_.end(), [kind](const auto& p) { return p.second.kind == kind; }));
}

std::optional<Pose2d> PoseGraph::estimate(const NodeKey& key) const {
  const auto it = nodes_.find(key);
  if (it == nodes_.end() || !it->second.initialized) return std::nullopt;
  return it->second.estimate;
}

LatestEstimates PoseGraph::latest_estimates() const {
  LatestEstimates out;
  for (const auto& [key, node] : nodes_) {
    if (!node.initialized) continue;
    // nodes_ is ordered by (vehicle, stamp), so later entries win.
    out[key.vehicle] = StampedPose{key.stamp, node.estimate};
  }
  return out;
}

std::optional<Stamp> PoseGraph::latest_stamp() const { return latest_; }

namespace {

bool chain_in_one_component(VehicleId vehicle, const std::map<Stamp, GaussianPose>& records,
                            const std::map<NodeKey, int>& labels) {
  std::optional<int> label;
  for (const auto& [stamp, record] : records) {
    const auto node = labels.find(NodeKey{vehicle, stamp});
    if (node == labels.end()) return false;
    if (label && *label != node->second) return false;
    label = node->second;
  }
  return true;
}

}  // namespace

bool PoseGraph::chain_connected(VehicleId vehicle) const {
  const auto it = odometry_.find(vehicle);
  if (it == odometry_.end() || it->second.empty()) return true;
  return chain_in_one_component(vehicle, it->second, component_labels());
}

bool PoseGraph::all_chains_connected() const {
  const auto labels = component_labels();
  for (const auto& [vehicle, records] : odometry_)
    if (!chain_in_one_component(vehicle, records, labels)) return false;
  return true;
}

bool PoseGraph::all_nodes_anchored() const {
  const auto labels = component_labels();
  std::set<int> anchored;
  for (const auto& [id, f] : factors_)
    if (f.kind == FactorKind::MapPrior || f.kind == FactorKind::DenseMarginal)
      anchored.insert(labels.at(f.keys[0]));
  for (const auto& [key, label] : labels)
    if (!anchored.count(label)) return false;
  return true;
}

void PoseGraph::write_snapshot(std::ostream& out) const {
  const auto flags = out.flags();
  const auto precision = out.precision(12);
  for (const auto& [key, node] : nodes_) {
    if (!node.initialized) continue;
    out << "NODE " << key.vehicle << ' ' << key.stamp << ' ' << node.estimate.x() << ' '
        << node.estimate.y() << ' ' << node.estimate.theta() << '\n';
  }
  for (const auto& [id, f] : factors_) {
    out << "FACTOR " << to_string(f.kind) << ' ' << f.keys.size();
    for (const auto& key : f.keys) out << ' ' << key.vehicle << ' ' << key.stamp;
    if (f.kind == FactorKind::DenseMarginal) {
      for (int i = 0; i < f.linear_mean.size(); ++i) out << ' ' << f.linear_mean(i);
      write_upper(out, f.information);
    } else {
      const auto& m = f.measurement.mean;
      out << ' ' << m.x() << ' ' << m.y() << ' ' << m.theta();
      write_upper(out, f.measurement.cov);
    }
    out << '\n';
  }
  out.precision(precision);
  out.flags(flags);
}

}  // namespace coloc
