#include "coloc/association.hpp"

#include <limits>
#include <numbers>
#include <stdexcept>

namespace coloc {

VehicleGeometry VehicleGeometry::Centered(double length, double width) {
  return VehicleGeometry{length, width, Pose2d(length / 2, width / 2, 0.0)};
}

Pose2d VehicleGeometry::corner(int p) const {
  switch (p & 3) {
    case 0: return Pose2d(0.0, 0.0, 0.0);
    case 1: return Pose2d(0.0, width, 0.0);
    case 2: return Pose2d(length, width, 0.0);
    default: return Pose2d(length, 0.0, 0.0);
  }
}

Pose2d VehicleGeometry::corner_to_origin(int p) const { return between(corner(p), anchor); }

std::array<Eigen::Vector2d, 4> VehicleGeometry::outline(const Pose2d& origin) const {
  // Corner 0 pose in the world, then every corner from it.
  const Pose2d base = compose(origin, inverse(anchor));
  std::array<Eigen::Vector2d, 4> out;
  for (int p = 0; p < 4; ++p) out[p] = compose(base, corner(p)).translation();
  return out;
}

CornerHypothesis make_corner_hypothesis(const Eigen::Vector2d& corner, double theta0,
                                        double fit_error) {
  CornerHypothesis h;
  h.corner = corner;
  h.fit_error = fit_error;
  for (int p = 0; p < 4; ++p)
    h.orientations[p] = normalize_angle(theta0 + p * std::numbers::pi / 2);
  return h;
}

LShapeHypothesisSet LShapeHypothesisSet::to_global(const Pose2d& observer) const {
  if (frame == HypothesisFrame::Global) return *this;
  LShapeHypothesisSet out = *this;
  out.frame = HypothesisFrame::Global;
  for (auto& h : out.corners) {
    const Pose2d moved = compose(observer, Pose2d(h.corner.x(), h.corner.y(), h.orientations[0]));
    h = make_corner_hypothesis(moved.translation(), moved.theta(), h.fit_error);
  }
  return out;
}

BestCandidate closest_candidate(const LShapeHypothesisSet& shape, const VehicleGeometry& geometry,
                                const Pose2d& estimate, const AssociationConfig& config) {
  BestCandidate best;
  for (std::size_t v = 0; v < shape.corners.size(); ++v) {
    for (int p = 0; p < 4; ++p) {
      const Pose2d candidate =
          infer_candidate_pose(shape.corners[v].corner_pose(p), geometry.corner_to_origin(p));
      const double d = pose_distance(candidate, estimate, config.angular_weight);
      if (d < best.cost) {
        best = BestCandidate{d, static_cast<int>(v), p, candidate};
      }
    }
  }
  return best;
}

double association_cost(const LShapeHypothesisSet& shape, const VehicleGeometry& geometry,
                        const Pose2d& estimate, const AssociationConfig& config) {
  return closest_candidate(shape, geometry, estimate, config).cost;
}

Eigen::MatrixXd build_cost_matrix(const std::vector<LShapeHypothesisSet>& shapes,
                                  const std::vector<TrackedVehicle>& vehicles,
                                  const AssociationConfig& config) {
  const auto n = static_cast<Eigen::Index>(vehicles.size());
  const auto m = static_cast<Eigen::Index>(shapes.size());
  Eigen::MatrixXd cost = Eigen::MatrixXd::Constant(n, m + n, kInfeasibleCost);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < m; ++k)
      cost(i, k) = association_cost(shapes[k], vehicles[i].geometry, vehicles[i].estimate, config);
    cost(i, m + i) = config.null_cost;
  }
  return cost;
}

Eigen::MatrixXi solve_assignment(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  const int cols = static_cast<int>(cost.cols());
  if (cols < n) throw std::invalid_argument("assignment needs at least as many columns as rows");
  Eigen::MatrixXi z = Eigen::MatrixXi::Zero(n, cols);
  if (n == 0) return z;

  // Shortest augmenting path with row/column potentials, 1-based internally.
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(cols + 1, 0.0);
  std::vector<int> match(cols + 1, 0), way(cols + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(cols + 1, inf);
    std::vector<char> used(cols + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= cols; ++j) {
        if (used[j]) continue;
        const double reduced = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (reduced < minv[j]) {
          minv[j] = reduced;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= cols; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  for (int j = 1; j <= cols; ++j)
    if (match[j] != 0) z(match[j] - 1, j - 1) = 1;
  return z;
}

std::vector<int> extract_correspondence(const Eigen::MatrixXi& assignment) {
  std::vector<int> k(assignment.rows(), -1);
  for (Eigen::Index i = 0; i < assignment.rows(); ++i) {
    Eigen::Index best = 0;
    assignment.row(i).maxCoeff(&best);
    k[i] = static_cast<int>(best);
  }
  return k;
}

double assignment_cost(const Eigen::MatrixXd& cost, const Eigen::MatrixXi& assignment) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < cost.rows(); ++i)
    for (Eigen::Index k = 0; k < cost.cols(); ++k)
      if (assignment(i, k) != 0) total += cost(i, k);
  return total;
}

}  // namespace coloc
