// Spatial relative observation from an associated L-shape: pick the corner
// and heading hypothesis, then estimate mean and covariance.
#pragma once

#include <span>

#include <Eigen/Core>

#include "coloc/association.hpp"
#include "coloc/gaussian.hpp"

namespace coloc {

struct HypothesisSelectionConfig {
  double w1 = 1.0;  // fit error
  double w2 = 1.0;  // squared heading difference
};

struct HypothesisChoice {
  int corner_index = -1;       // v*
  int orientation_index = -1;  // p*
  double criterion = 0.0;
  Pose2d pose;
};

/// Exhaustive argmin over (v, p) of w1*lambda_v + w2*angle_sq_diff(heading
/// difference). `shape` must be in the global frame. Ties keep the first
/// candidate in (v, p) order.
HypothesisChoice select_best_hypothesis(const LShapeHypothesisSet& shape,
                                        const VehicleGeometry& geometry, const Pose2d& estimate,
                                        const HypothesisSelectionConfig& config = {});

/// best ⊖ observer.
inline Pose2d relative_mean(const Pose2d& best_pose, const Pose2d& observer_estimate) {
  return between(observer_estimate, best_pose);
}

struct CovarianceSamplingConfig {
  Eigen::Vector3d delta{0.3, 0.3, 0.15};
  int samples_per_axis = 5;  // N = samples_per_axis^3
  double sigma = 0.03;
};

struct CovarianceSample {
  Covariance3 cov = Covariance3::Zero();
  // False when every likelihood underflowed and uniform weights were used.
  bool likelihood_ok = true;
};

/// Sum of squared distances from `points` (observer frame) to the outline of
/// the target placed at `relative` in the observer frame.
double outline_error(std::span<const Eigen::Vector2d> points, const VehicleGeometry& geometry,
                     const Pose2d& relative);

/// Weighted scatter of grid samples around `mean` with weights proportional
/// to exp(-lambda_j / (2 sigma^2)).
CovarianceSample relative_covariance(std::span<const Eigen::Vector2d> points,
                                     const VehicleGeometry& geometry, const Pose2d& mean,
                                     const CovarianceSamplingConfig& config = {});

}  // namespace coloc
