#include "coloc/relative_pose.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace coloc {
namespace {

double segment_sq_distance(const Eigen::Vector2d& p, const Eigen::Vector2d& a,
                           const Eigen::Vector2d& b) {
  const Eigen::Vector2d ab = b - a;
  const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  return (a + t * ab - p).squaredNorm();
}

// Grid coordinate k of n evenly spaced points in [-1, 1].
double grid_offset(int k, int n) { return n == 1 ? 0.0 : -1.0 + 2.0 * k / (n - 1); }

}  // namespace

HypothesisChoice select_best_hypothesis(const LShapeHypothesisSet& shape,
                                        const VehicleGeometry& geometry, const Pose2d& estimate,
                                        const HypothesisSelectionConfig& config) {
  HypothesisChoice best;
  best.criterion = std::numeric_limits<double>::infinity();
  for (std::size_t v = 0; v < shape.corners.size(); ++v) {
    const auto& h = shape.corners[v];
    for (int p = 0; p < 4; ++p) {
      const Pose2d candidate = infer_candidate_pose(h.corner_pose(p), geometry.corner_to_origin(p));
      const double f = config.w1 * h.fit_error +
                       config.w2 * angle_sq_diff(candidate.theta() - estimate.theta());
      if (f < best.criterion) best = HypothesisChoice{static_cast<int>(v), p, f, candidate};
    }
  }
  return best;
}

double outline_error(std::span<const Eigen::Vector2d> points, const VehicleGeometry& geometry,
                     const Pose2d& relative) {
  const auto c = geometry.outline(relative);
  double total = 0.0;
  for (const auto& p : points) {
    double d = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 4; ++k) d = std::min(d, segment_sq_distance(p, c[k], c[(k + 1) % 4]));
    total += d;
  }
  return total;
}

CovarianceSample relative_covariance(std::span<const Eigen::Vector2d> points,
                                     const VehicleGeometry& geometry, const Pose2d& mean,
                                     const CovarianceSamplingConfig& config) {
  if (config.samples_per_axis < 1) throw std::invalid_argument("samples_per_axis must be >= 1");
  if ((config.delta.array() <= 0).any()) throw std::invalid_argument("delta must be positive");
  const int k = config.samples_per_axis;

  std::vector<Eigen::Vector3d> offsets;
  std::vector<double> lambda;
  offsets.reserve(static_cast<std::size_t>(k) * k * k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      for (int l = 0; l < k; ++l) {
        const Eigen::Vector3d d(grid_offset(i, k) * config.delta.x(),
                                grid_offset(j, k) * config.delta.y(),
                                grid_offset(l, k) * config.delta.z());
        offsets.push_back(d);
        lambda.push_back(outline_error(points, geometry, retract(mean, d)));
      }

  // Shifting by the smallest lambda leaves the normalized weights unchanged.
  const double lambda_min = *std::min_element(lambda.begin(), lambda.end());
  std::vector<double> w(lambda.size());
  double total = 0.0;
  for (std::size_t j = 0; j < lambda.size(); ++j) {
    w[j] = std::exp(-(lambda[j] - lambda_min) / (2 * config.sigma * config.sigma));
    total += w[j];
  }
  CovarianceSample out;
  if (!(total > 0.0) || !std::isfinite(total)) {
    out.likelihood_ok = false;
    std::fill(w.begin(), w.end(), 1.0);
    total = static_cast<double>(w.size());
  }
  for (std::size_t j = 0; j < w.size(); ++j)
    out.cov += (w[j] / total) * offsets[j] * offsets[j].transpose();
  out.cov = repair_psd(out.cov, 0.0);
  return out;
}

}  // namespace coloc
