// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <functional>
#include <optional>
#include <numbers>
#include <set>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "coloc/association.hpp"
#include "coloc/pose_graph.hpp"
#include "coloc/runner.hpp"
#include "coloc/wire.hpp"
#include "oracles.hpp"

using namespace coloc;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

Scenario config(const char* name) { return load_scenario(std::string(COLOC_CONFIG_DIR) + "/" + name); }

GaussianPose gp(const Pose2d& mean, const Eigen::Vector3d& diag) { return {mean, diag.asDiagonal()}; }

void add_odometry(PoseGraph& g, VehicleId v, Stamp t, const GaussianPose& from_origin) {
  g.add_temporal_rel_obs(g.factor_decompose(v, t, from_origin));
}

// --- Paired CL/IL runs -------------------------------------------------------

struct Paired {
  std::vector<RunReport> runs;
  double seconds = 0.0;
};

Paired paired_runs(const Scenario& s, int seeds) {
  Paired p;
  const auto start = Clock::now();
  for (int seed = 1; seed <= seeds; ++seed) p.runs.push_back(run_scenario(s, seed));
  p.seconds = seconds_since(start);
  return p;
}

Outcome cl_beats_il(const Paired& p) {
  int wins = 0;
  double cl_pos = 0, il_pos = 0, cl_ori = 0, il_ori = 0;
  bool healthy = true;
  for (const auto& r : p.runs) {
    wins += r.cl_pooled.position_mean < r.il_pooled.position_mean;
    cl_pos += r.cl_pooled.position_mean / p.runs.size();
    il_pos += r.il_pooled.position_mean / p.runs.size();
    cl_ori += r.cl_pooled.orientation_mean / p.runs.size();
    il_ori += r.il_pooled.orientation_mean / p.runs.size();
    healthy = healthy && r.ok();
  }
  const int needed = static_cast<int>(std::ceil(0.9 * p.runs.size()));
  const bool pass = wins >= needed && il_pos >= 0.15 && il_pos <= 0.45 && cl_ori < il_ori &&
                    p.seconds < 180.0 && healthy;
  return {pass, fmt("CL<IL in %d/%zu seeds, pos CL %.3f IL %.3f m, ori CL %.3f IL %.3f deg, "
                    "%.1f s%s",
                    wins, p.runs.size(), cl_pos, il_pos, cl_ori * 180 / std::numbers::pi, il_ori * 180 / std::numbers::pi,
                    p.seconds, healthy ? "" : ", optimizer or graph check failed")};
}

Outcome association_accuracy(const Paired& p) {
  std::size_t total = 0, correct = 0;
  for (const auto& r : p.runs) {
    total += r.associations;
    correct += r.associations_correct;
  }
  return {total > 0 && correct == total,
          fmt("%zu/%zu correct over %zu runs", correct, total, p.runs.size())};
}

Outcome loss_robustness(const Scenario& straight) {
  RunOptions cl;
  cl.mode = RunMode::CL;
  Scenario lossy = straight;
  lossy.channel.loss_prob = 0.5;
  bool connected = true, within = true;
  double worst_ratio = 0.0;
  for (int seed = 1; seed <= 3; ++seed) {
    const RunReport clean = run_scenario(straight, seed, cl);
    const RunReport lost = run_scenario(lossy, seed, cl);
    connected = connected && clean.chains_connected && lost.chains_connected;
    const double ratio = lost.cl_pooled.position_mean / clean.cl_pooled.position_mean;
    worst_ratio = std::max(worst_ratio, ratio);
    within = within && ratio <= 2.0;
  }
  return {connected && within,
          fmt("chains connected: %s, worst lossy/clean CL error ratio %.2f over 3 seeds",
              connected ? "yes" : "no", worst_ratio)};
}

Outcome delay_robustness(const Scenario& straight) {
  RunOptions opts;
  opts.mode = RunMode::CL;
  opts.record_packets = true;
  const RunReport r = run_scenario(straight, 1, opts);
  const double window = straight.graph.window;

  ChannelConfig instant;
  instant.delay_base = instant.delay_jitter = 0.0;
  const ReplayResult base = replay_packets(r.packets, instant, straight.graph, straight.dt);

  ChannelConfig late;
  late.delay_base = 0.0;
  late.delay_jitter = 0.8 * window;
  late.reorder = true;
  late.duplicate_prob = 0.2;
  late.seed = 31;
  const ReplayResult delayed = replay_packets(r.packets, late, straight.graph, straight.dt);

  bool same_nodes = base.nodes.size() == delayed.nodes.size();
  double worst = 0.0;
  for (const auto& [key, pose] : base.nodes) {
    const auto it = delayed.nodes.find(key);
    if (it == delayed.nodes.end()) {
      same_nodes = false;
      continue;
    }
    worst = std::max(worst, (it->second.translation() - pose.translation()).norm());
  }

  // Far beyond the window: some packets must be refused as stale.
  ChannelConfig beyond;
  beyond.delay_base = 0.0;
  beyond.delay_jitter = 2.5 * window;
  beyond.seed = 37;
  std::size_t stale = 0;
  bool survived = true;
  try {
    stale = replay_packets(r.packets, beyond, straight.graph, straight.dt).stale;
  } catch (const std::exception&) {
    survived = false;
  }
  return {same_nodes && worst < 1e-3 && delayed.stale == 0 && survived && stale > 0,
          fmt("%zu packets, max deviation %.2e m, %zu stale within 0.8W, %zu stale beyond W%s",
              r.packets.size(), worst, delayed.stale, stale, survived ? "" : ", replay threw")};
}

// --- Optimizer ---------------------------------------------------------------

Outcome linear_chains() {
  double worst = 0.0;
  bool converged = true;
  {
    PoseGraph g;
    g.add_map_measurement(1, 0.0, gp(Pose2d(), Eigen::Vector3d::Ones()));
    g.add_map_measurement(1, 1.0, gp(Pose2d(2, 0, 0), Eigen::Vector3d::Ones()));
    add_odometry(g, 1, 0.0, gp(Pose2d(), Eigen::Vector3d::Ones()));
    add_odometry(g, 1, 1.0, gp(Pose2d(1, 0, 0), 2.0 * Eigen::Vector3d::Ones()));
    OptimizeReport rep;
    g.optimize(false, &rep);
    converged = rep.converged;
    worst = std::max(std::abs(g.estimate({1, 0.0})->x() - 1.0 / 3.0),
                     std::abs(g.estimate({1, 1.0})->x() - 5.0 / 3.0));
  }

  // Collinear chains with zero headings: x decouples into a linear problem
  // solved here by dense weighted least squares.
  std::mt19937_64 rng(71);
  std::uniform_int_distribution<int> length(2, 8);
  std::uniform_real_distribution<double> pos(-5, 5), step(0.5, 3), var(0.01, 1.0), coin(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = length(rng);
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(0, n);
    Eigen::VectorXd b(0), w(0);
    auto add_row = [&](int i, int j, double value, double variance) {
      A.conservativeResize(A.rows() + 1, Eigen::NoChange);
      A.row(A.rows() - 1).setZero();
      A(A.rows() - 1, i) = j < 0 ? 1.0 : -1.0;
      if (j >= 0) A(A.rows() - 1, j) = 1.0;
      b.conservativeResize(b.size() + 1);
      b(b.size() - 1) = value;
      w.conservativeResize(w.size() + 1);
      w(w.size() - 1) = 1.0 / variance;
    };

    PoseGraph g;
    GaussianPose origin{Pose2d(), Covariance3::Zero()};
    add_odometry(g, 1, 0.0, origin);
    for (int k = 1; k < n; ++k) {
      const double d = step(rng), v = var(rng);
      origin = compose(origin, gp(Pose2d(d, 0, 0), Eigen::Vector3d(v, 1.0, 1.0)));
      add_odometry(g, 1, k, origin);
      add_row(k - 1, k, d, v);
    }
    for (int k = 0; k < n; ++k) {
      if (k > 0 && coin(rng) < 0.5) continue;
      const double p = pos(rng), v = var(rng);
      g.add_map_measurement(1, k, gp(Pose2d(p, 0, 0), Eigen::Vector3d(v, 1.0, 1.0)));
      add_row(k, -1, p, v);
    }
    const Eigen::MatrixXd H = A.transpose() * w.asDiagonal() * A;
    const Eigen::VectorXd x = H.ldlt().solve(A.transpose() * w.asDiagonal() * b);

    OptimizeReport rep;
    g.optimize(false, &rep);
    converged = converged && rep.converged;
    for (int k = 0; k < n; ++k) worst = std::max(worst, std::abs(g.estimate({1, double(k)})->x() - x(k)));
  }
  return {converged && worst < 1e-9,
          fmt("fixed case plus 200 random chains, max error %.2e", worst)};
}

Outcome factor_decomposition() {
  PoseGraph g;
  add_odometry(g, 1, 1.0, gp(Pose2d(1, 0, 0), Eigen::Vector3d(0.01, 0.01, 0.0)));
  const auto d = g.factor_decompose(1, 2.0, gp(Pose2d(2, 0, 0), Eigen::Vector3d(0.02, 0.02, 0.02)));
  const Eigen::Matrix3d want = Eigen::Vector3d(0.01, 0.01, 0.02).asDiagonal();
  const bool fixed = d.incoming && oracle::pose_gap(d.incoming->z.mean, Pose2d(1, 0, 0)) < 1e-12 &&
                     (d.incoming->z.cov - want).cwiseAbs().maxCoeff() < 1e-12;

  std::mt19937_64 rng(17);
  double mean_err = 0.0, cov_err = 0.0;
  for (int i = 0; i < 100; ++i) {
    const GaussianPose z1{oracle::random_pose(rng), oracle::random_psd(rng)};
    const GaussianPose z2{oracle::random_pose(rng, 2.0), oracle::random_psd(rng)};
    const GaussianPose back = decompose_odometry(z1, compose(z1, z2));
    mean_err = std::max(mean_err, oracle::pose_gap(back.mean, z2.mean));
    cov_err = std::max(cov_err, (back.cov - z2.cov).cwiseAbs().maxCoeff());
  }
  return {fixed && mean_err < 1e-12 && cov_err < 1e-6,
          fmt("fixed case %s, 100 instances: mean %.1e, covariance %.1e", fixed ? "ok" : "wrong",
              mean_err, cov_err)};
}

Outcome assignment_optimality() {
  std::mt19937_64 rng(73);
  std::uniform_int_distribution<int> rows(1, 4), cols(0, 4);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = rows(rng), m = cols(rng);
    const double null_cost = u(rng);
    Eigen::MatrixXd c = Eigen::MatrixXd::Constant(n, m + n, kInfeasibleCost);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < m; ++k) c(i, k) = u(rng);
      c(i, m + i) = null_cost;
    }
    const Eigen::MatrixXi z = solve_assignment(c);
    const bool valid = (z.rowwise().sum().array() == 1).all() && (z.colwise().sum().array() <= 1).all();
    if (!valid || assignment_cost(c, z) != oracle::brute_force_assignment(c)) ++mismatches;
  }
  return {mismatches == 0, fmt("%d mismatches in 1000 instances", mismatches)};
}

Outcome marginalization_exactness() {
  std::mt19937_64 rng(79);
  std::uniform_int_distribution<int> vehicles(1, 3), length(4, 9);
  std::normal_distribution<double> noise(0.0, 0.1);
  std::uniform_real_distribution<double> coin(0, 1), window(1.0, 4.0);
  double worst = 0.0;
  int folded = 0;
  for (int trial = 0; trial < 50; ++trial) {
    PoseGraphOptions options;
    options.window = window(rng);
    PoseGraph g(options);
    const int nv = vehicles(rng), n = length(rng);
    std::vector<std::vector<Pose2d>> truth(nv);
    std::vector<std::vector<GaussianPose>> odometry(nv);
    for (int v = 0; v < nv; ++v) {
      Pose2d p = oracle::random_pose(rng, 5.0);
      GaussianPose origin{Pose2d(), Covariance3::Zero()};
      for (int k = 0; k < n; ++k) {
        if (k > 0) {
          const Pose2d step(1.0 + noise(rng), noise(rng), 0.2 * noise(rng));
          p = compose(p, step);
          const Pose2d measured(step.x() + noise(rng), step.y() + noise(rng), step.theta() + 0.1 * noise(rng));
          origin = compose(origin, GaussianPose{measured, oracle::random_psd(rng, 0.02)});
        }
        truth[v].push_back(p);
        odometry[v].push_back(origin);
      }
    }
    // Fed in time order, as a vehicle would receive them.
    for (int k = 0; k < n; ++k) {
      for (int v = 0; v < nv; ++v) {
        add_odometry(g, v + 1, k, odometry[v][k]);
        if (k == 0 || coin(rng) < 0.4) {
          const Pose2d& p = truth[v][k];
          const Pose2d z(p.x() + noise(rng), p.y() + noise(rng), p.theta() + 0.1 * noise(rng));
          g.add_map_measurement(v + 1, k, {z, oracle::random_psd(rng, 0.1)});
        }
      }
      for (int a = 0; a < nv; ++a)
        for (int b = 0; b < nv; ++b)
          if (a != b && coin(rng) < 0.3) {
            const Pose2d rel = between(truth[a][k], truth[b][k]);
            const Pose2d z(rel.x() + noise(rng), rel.y() + noise(rng), rel.theta() + 0.1 * noise(rng));
            g.add_spatial_rel_obs(a + 1, b + 1, k, {z, oracle::random_psd(rng, 0.05)});
          }
    }

    g.optimize();
    const auto before = g.nodes();
    g.marginalize_old_nodes();
    folded += g.num_factors(FactorKind::DenseMarginal) > 0;
    g.optimize();
    for (const auto& [key, node] : g.nodes())
      worst = std::max(worst, oracle::pose_gap(node.estimate, before.at(key).estimate));
  }
  return {worst < 1e-6 && folded > 0,
          fmt("50 graphs (%d with marginals), max change %.2e", folded, worst)};
}

Outcome jacobians() {
  std::mt19937_64 rng(83);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Pose2d a = oracle::random_pose(rng), b = oracle::random_pose(rng);
    const auto jc = jacobians_compose(a, b);
    const auto jb = jacobians_between(a, b);
    auto gap = [&](const Eigen::Matrix3d& m, const Eigen::Matrix3d& n) {
      worst = std::max(worst, (m - n).cwiseAbs().maxCoeff());
    };
    gap(jc.wrt_a, oracle::numeric_jacobian([&](const Pose2d& p) { return compose(p, b); }, a));
    gap(jc.wrt_b, oracle::numeric_jacobian([&](const Pose2d& p) { return compose(a, p); }, b));
    gap(jb.wrt_a, oracle::numeric_jacobian([&](const Pose2d& p) { return between(p, b); }, a));
    gap(jb.wrt_b, oracle::numeric_jacobian([&](const Pose2d& p) { return between(a, p); }, b));
  }
  return {worst < 1e-6, fmt("1000 pose pairs, 4 Jacobians each, max gap %.2e", worst)};
}

// --- Codec -------------------------------------------------------------------

WireMessage random_message(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> kind(0, 2), count(0, 8), id(0, 0xFFFF);
  std::uniform_int_distribution<std::uint32_t> seq;
  std::uniform_real_distribution<double> stamp(0.0, 1e4);
  auto gaussian = [&] { return GaussianPose{oracle::random_pose(rng, 100.0), oracle::random_psd(rng)}; };
  WireMessage msg;
  msg.sender = static_cast<VehicleId>(id(rng));
  msg.seq = seq(rng);
  msg.stamp = stamp(rng);
  switch (kind(rng)) {
    case 0: msg.payload = MapMeasurementPayload{gaussian()}; break;
    case 1: msg.payload = TemporalRelObsPayload{gaussian()}; break;
    default: {
      SpatialRelObsPayload p;
      const int n = count(rng);
      for (int i = 0; i < n; ++i) p.detections.push_back({static_cast<VehicleId>(id(rng)), gaussian()});
      msg.payload = p;
    }
  }
  return msg;
}

Outcome codec() {
  std::mt19937_64 rng(89);
  int failures = 0;
  for (int i = 0; i < 10000; ++i) {
    const WireMessage msg = random_message(rng);
    const auto bytes = encode(msg);
    try {
      const WireMessage back = decode(bytes);
      if (!(back == msg) || encode(back) != bytes) ++failures;
    } catch (const std::exception&) {
      ++failures;
    }
  }
  std::vector<std::size_t> sizes;
  for (int n = 0; n <= 16; ++n) {
    SpatialRelObsPayload p;
    for (int i = 0; i < n; ++i) p.detections.push_back({VehicleId(i), GaussianPose{}});
    sizes.push_back(encode(WireMessage{1, 0, 0.0, p}).size());
  }
  const std::size_t step = sizes[1] - sizes[0];
  bool constant = true;
  for (std::size_t n = 1; n < sizes.size(); ++n) constant = constant && sizes[n] - sizes[n - 1] == step;
  return {failures == 0 && constant,
          fmt("%d failures in 10000 round trips, %zu bytes per detection%s", failures, step,
              constant ? "" : " (not constant)")};
}

}  // namespace

// Optional arguments restrict the run to the listed criterion numbers.
int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const Scenario straight = config("straight.yaml");
  const Scenario curvy = config("curvy.yaml");
  int failed = 0;
  int ran = 0;
  auto line = [&](int id, const char* name, const std::function<Outcome()>& check) {
    if (!only.empty() && !only.count(id)) return;
    ++ran;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2d %-28s %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
  };

  std::optional<Paired> straight_runs;
  auto straight_paired = [&]() -> const Paired& {
    if (!straight_runs) straight_runs = paired_runs(straight, 20);
    return *straight_runs;
  };
  line(1, "straight road CL vs IL", [&] { return cl_beats_il(straight_paired()); });
  line(2, "curvy road CL vs IL", [&] { return cl_beats_il(paired_runs(curvy, 20)); });
  line(3, "association accuracy", [&] { return association_accuracy(straight_paired()); });
  line(4, "loss robustness", [&] { return loss_robustness(straight); });
  line(5, "delay and reordering", [&] { return delay_robustness(straight); });
  line(6, "linear chains", linear_chains);
  line(7, "factor decomposition", factor_decomposition);
  line(8, "assignment optimality", assignment_optimality);
  line(9, "marginalization exactness", marginalization_exactness);
  line(10, "Jacobians", jacobians);
  line(11, "codec", codec);
  std::printf("%d of %d criteria failed\n", failed, ran);
  return failed == 0 ? 0 : 1;
}
