// Ground-truth world: unicycle vehicles following waypoint paths, and the
// map, odometry and LIDAR sensors they carry.
#pragma once

#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "coloc/association.hpp"
#include "coloc/gaussian.hpp"
#include "coloc/pose_graph.hpp"

namespace coloc {

using Rng = std::mt19937_64;

struct Path {
  std::vector<Eigen::Vector2d> waypoints;
  double speed = 10.0;
  double lookahead = 6.0;
};

/// Straight polyline from `start` to `end`, sampled every `step` metres.
Path straight_path(const Eigen::Vector2d& start, const Eigen::Vector2d& end, double speed,
                   double step = 1.0);

struct VehicleState {
  VehicleId id = 0;
  Pose2d truth;
  VehicleGeometry geometry;
  Path path;
  std::size_t progress = 0;  // index of the closest waypoint seen so far
  // Origin-referenced odometry mu(0,t), Sigma(0,t) and the truth at the last sample.
  GaussianPose odometry;
  Pose2d last_odometry_truth;
  bool odometry_started = false;
};

struct MapSensorConfig {
  double sigma_pos = 0.25;    // m
  double sigma_theta = 0.0209;  // rad (1.2 deg)
  double rate = 1.0;          // Hz
};

struct OdometrySensorConfig {
  double sigma_per_m = 0.02;          // translation noise per metre travelled
  double sigma_theta_per_m = 0.005;   // heading noise per metre travelled
  double sigma_theta_per_rad = 0.01;  // heading noise per radian turned
};

struct LidarConfig {
  double fov = 3.14159265358979323846;  // rad, centred on the heading
  double max_range = 40.0;
  double resolution = 0.00872664625997164788;  // rad (0.5 deg)
  double range_sigma = 0.03;
  double rate = 10.0;
};

struct SensorConfig {
  MapSensorConfig map;
  OdometrySensorConfig odometry;
  LidarConfig lidar;

  void validate() const;
};

/// Exact integration of constant (v, omega) over dt.
Pose2d integrate_unicycle(const Pose2d& pose, double speed, double yaw_rate, double dt);

/// Pure-pursuit yaw rate toward the path, then one exact unicycle step.
void step_vehicle(VehicleState& vehicle, double dt);

Covariance3 map_covariance(const MapSensorConfig& cfg);
GaussianPose sense_map(const VehicleState& vehicle, const MapSensorConfig& cfg, Rng& rng);

/// Adds the noisy increment since the previous call to mu(0,t) and returns
/// the updated origin-referenced pair. The first call returns the identity.
GaussianPose sense_odometry(VehicleState& vehicle, const OdometrySensorConfig& cfg, Rng& rng);

struct LidarCluster {
  VehicleId target = 0;  // ground-truth segmentation label
  std::vector<Eigen::Vector2d> points;  // observer frame
};

/// One cluster per target with at least one return. The sensor sits at the
/// observer's origin; occlusion between targets is ignored.
std::vector<LidarCluster> sense_lidar(const VehicleState& observer,
                                      const std::vector<const VehicleState*>& targets,
                                      const LidarConfig& cfg, Rng& rng);

class TimestampMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct PoseError {
  double position = 0.0;
  double orientation = 0.0;  // rad, absolute wrapped difference
};

PoseError pose_error(const Pose2d& estimate, const Pose2d& truth);

struct ErrorSummary {
  double position_mean = 0.0;
  double position_std = 0.0;
  double orientation_mean = 0.0;  // rad
  double orientation_std = 0.0;
  std::size_t samples = 0;
};

/// Pairs estimates and truths by stamp; both series must carry the same stamps.
std::vector<PoseError> ground_truth_error(const std::vector<StampedPose>& estimates,
                                          const std::vector<StampedPose>& truths);

ErrorSummary summarize(const std::vector<PoseError>& errors);

}  // namespace coloc
