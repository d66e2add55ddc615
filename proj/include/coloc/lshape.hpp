// L-shape fitting on a single LIDAR cluster.
#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "coloc/association.hpp"

namespace coloc {

class DegenerateCluster : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct LShapeFitConfig {
  int max_hypotheses = 3;
  // Below this many metres, a fitted side is treated as noise on a single line.
  double min_side_extent = 0.25;
  double collinear_rms = 1e-3;
  // Local minima whose corners are closer than this are merged.
  double merge_distance = 0.1;
  // Sensor limits. A single-line endpoint at the edge of the field of view or
  // at maximum range is a cut, not a corner. Zero disables the check.
  double fov = 0.0;
  double max_range = 0.0;
  double edge_margin_angle = 0.02;  // rad
  double edge_margin_range = 0.5;   // m
};

/// Points are in the observer frame, sensor at the origin. Candidates are
/// ordered by fit error (sum of squared point-to-line distances). A cluster
/// that looks like one straight side yields its two endpoints as corners,
/// with the body assumed to lie away from the sensor, unless an endpoint is
/// cut by the sensor limits.
LShapeHypothesisSet fit_lshape(std::span<const Eigen::Vector2d> points,
                               const LShapeFitConfig& config = {});

}  // namespace coloc
