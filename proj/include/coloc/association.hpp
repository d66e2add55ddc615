// Vehicle identification: match detected L-shapes to cooperating vehicles by
// solving a rectangular linear assignment problem with null observations.
#pragma once

#include <array>
#include <vector>

#include <Eigen/Core>

#include "coloc/se2.hpp"

namespace coloc {

/// Rectangle footprint. Corners are numbered clockwise starting from the
/// rear-right one: 0 rear-right, 1 rear-left, 2 front-left, 3 front-right.
/// A corner pose sits on the corner with the vehicle's heading.
struct VehicleGeometry {
  double length = 4.0;
  double width = 2.0;
  // Vehicle origin expressed in the frame of corner 0.
  Pose2d anchor{2.0, 1.0, 0.0};

  static VehicleGeometry Centered(double length, double width);

  /// Corner p in the frame of corner 0.
  Pose2d corner(int p) const;
  /// q_p: transform from the pose of corner p to the vehicle origin.
  Pose2d corner_to_origin(int p) const;
  /// World coordinates of the four corners for a given origin pose.
  std::array<Eigen::Vector2d, 4> outline(const Pose2d& origin) const;
};

enum class HypothesisFrame { Observer, Global };

struct CornerHypothesis {
  Eigen::Vector2d corner = Eigen::Vector2d::Zero();
  // orientations[p] = theta0 + p*pi/2, the heading if this is corner p.
  std::array<double, 4> orientations{};
  double fit_error = 0.0;

  Pose2d corner_pose(int p) const { return Pose2d(corner.x(), corner.y(), orientations[p]); }
};

CornerHypothesis make_corner_hypothesis(const Eigen::Vector2d& corner, double theta0,
                                        double fit_error);

struct LShapeHypothesisSet {
  int shape_id = 0;
  HypothesisFrame frame = HypothesisFrame::Observer;
  std::vector<CornerHypothesis> corners;
  bool single_line = false;

  /// Re-expresses observer-frame hypotheses in the global frame.
  LShapeHypothesisSet to_global(const Pose2d& observer) const;
};

struct AssociationConfig {
  double angular_weight = 4.0;  // W
  double null_cost = 3.0;       // Upsilon
};

inline constexpr double kInfeasibleCost = 1e18;

/// (x, y, theta_p) ⊕ q_p.
inline Pose2d infer_candidate_pose(const Pose2d& corner_pose, const Pose2d& corner_to_origin) {
  return compose(corner_pose, corner_to_origin);
}

struct BestCandidate {
  double cost = kInfeasibleCost;
  int corner_index = -1;
  int orientation_index = -1;
  Pose2d pose;
};

/// Minimum pose_distance over every corner hypothesis v and corner index p.
BestCandidate closest_candidate(const LShapeHypothesisSet& shape, const VehicleGeometry& geometry,
                                const Pose2d& estimate, const AssociationConfig& config);

double association_cost(const LShapeHypothesisSet& shape, const VehicleGeometry& geometry,
                        const Pose2d& estimate, const AssociationConfig& config);

struct TrackedVehicle {
  VehicleGeometry geometry;
  Pose2d estimate;
};

/// n x (m + n): association costs, then the diagonal of null observations.
Eigen::MatrixXd build_cost_matrix(const std::vector<LShapeHypothesisSet>& shapes,
                                  const std::vector<TrackedVehicle>& vehicles,
                                  const AssociationConfig& config);

/// Binary z* minimizing sum z_ik Phi_ik with unit row sums and column sums <= 1.
/// Requires cols >= rows.
Eigen::MatrixXi solve_assignment(const Eigen::MatrixXd& cost);

/// k_i = argmax_k z*_ik (0-based; k_i >= m means vehicle i was not observed).
std::vector<int> extract_correspondence(const Eigen::MatrixXi& assignment);

double assignment_cost(const Eigen::MatrixXd& cost, const Eigen::MatrixXi& assignment);

}  // namespace coloc
