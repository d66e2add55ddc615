#include "coloc/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace coloc {

void SensorConfig::validate() const {
  const bool ok = map.sigma_pos >= 0 && map.sigma_theta >= 0 && map.rate > 0 &&
                  odometry.sigma_per_m >= 0 && odometry.sigma_theta_per_m >= 0 &&
                  odometry.sigma_theta_per_rad >= 0 && lidar.fov > 0 && lidar.max_range > 0 &&
                  lidar.resolution > 0 && lidar.range_sigma >= 0 && lidar.rate > 0;
  if (!ok) throw std::invalid_argument("sensor noise must be >= 0 and rates > 0");
}

Path straight_path(const Eigen::Vector2d& start, const Eigen::Vector2d& end, double speed,
                   double step) {
  Path path;
  path.speed = speed;
  const double length = (end - start).norm();
  const int n = std::max(1, static_cast<int>(std::ceil(length / step)));
  for (int i = 0; i <= n; ++i) path.waypoints.push_back(start + (end - start) * (double(i) / n));
  return path;
}

Pose2d integrate_unicycle(const Pose2d& pose, double speed, double yaw_rate, double dt) {
  const double th = pose.theta();
  if (std::abs(yaw_rate) < 1e-12) {
    return Pose2d(pose.x() + speed * dt * std::cos(th), pose.y() + speed * dt * std::sin(th), th);
  }
  const double r = speed / yaw_rate;
  const double th1 = th + yaw_rate * dt;
  return Pose2d(pose.x() + r * (std::sin(th1) - std::sin(th)),
                pose.y() - r * (std::cos(th1) - std::cos(th)), th1);
}

void step_vehicle(VehicleState& v, double dt) {
  const auto& wp = v.path.waypoints;
  const Eigen::Vector2d here = v.truth.translation();
  double yaw_rate = 0.0;
  if (!wp.empty()) {
    while (v.progress + 1 < wp.size() &&
           (wp[v.progress + 1] - here).norm() <= (wp[v.progress] - here).norm())
      ++v.progress;
    std::size_t target = v.progress;
    while (target + 1 < wp.size() && (wp[target] - here).norm() < v.path.lookahead) ++target;
    const Eigen::Vector2d local = between(v.truth, Pose2d(wp[target].x(), wp[target].y(), 0.0))
                                      .translation();
    const double d2 = local.squaredNorm();
    if (local.x() > 0 && d2 > 1e-6) yaw_rate = v.path.speed * 2.0 * local.y() / d2;
  }
  v.truth = integrate_unicycle(v.truth, v.path.speed, yaw_rate, dt);
}

Covariance3 map_covariance(const MapSensorConfig& cfg) {
  return Eigen::Vector3d(cfg.sigma_pos * cfg.sigma_pos, cfg.sigma_pos * cfg.sigma_pos,
                         cfg.sigma_theta * cfg.sigma_theta)
      .asDiagonal();
}

GaussianPose sense_map(const VehicleState& v, const MapSensorConfig& cfg, Rng& rng) {
  std::normal_distribution<double> n01;
  GaussianPose z;
  const double dx = cfg.sigma_pos * n01(rng);
  const double dy = cfg.sigma_pos * n01(rng);
  const double dth = cfg.sigma_theta * n01(rng);
  z.mean = Pose2d(v.truth.x() + dx, v.truth.y() + dy, v.truth.theta() + dth);
  z.cov = map_covariance(cfg);
  return z;
}

GaussianPose sense_odometry(VehicleState& v, const OdometrySensorConfig& cfg, Rng& rng) {
  if (!v.odometry_started) {
    v.odometry_started = true;
    v.odometry = GaussianPose{};
    v.last_odometry_truth = v.truth;
    return v.odometry;
  }
  std::normal_distribution<double> n01;
  const Pose2d delta = between(v.last_odometry_truth, v.truth);
  const double dist = delta.translation().norm();
  const double s_xy = cfg.sigma_per_m * dist;
  const double s_th = cfg.sigma_theta_per_m * dist + cfg.sigma_theta_per_rad * std::abs(delta.theta());
  GaussianPose inc;
  const double ex = s_xy * n01(rng);
  const double ey = s_xy * n01(rng);
  const double eth = s_th * n01(rng);
  inc.mean = Pose2d(delta.x() + ex, delta.y() + ey, delta.theta() + eth);
  inc.cov = Eigen::Vector3d(s_xy * s_xy, s_xy * s_xy, s_th * s_th).asDiagonal();
  v.odometry = compose(v.odometry, inc);
  v.last_odometry_truth = v.truth;
  return v.odometry;
}

std::vector<LidarCluster> sense_lidar(const VehicleState& observer,
                                      const std::vector<const VehicleState*>& targets,
                                      const LidarConfig& cfg, Rng& rng) {
  std::normal_distribution<double> n01;
  const int beams = static_cast<int>(std::floor(cfg.fov / cfg.resolution + 1e-9)) + 1;
  const double first_beam = -0.5 * cfg.fov;
  std::vector<LidarCluster> out;
  for (const VehicleState* target : targets) {
    if (target->id == observer.id) continue;
    const auto world = target->geometry.outline(target->truth);
    std::array<Eigen::Vector2d, 4> c;
    bool all_ahead = true;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (int k = 0; k < 4; ++k) {
      c[k] = between(observer.truth, Pose2d(world[k].x(), world[k].y(), 0.0)).translation();
      all_ahead = all_ahead && c[k].x() > 0;
      const double b = std::atan2(c[k].y(), c[k].x());
      lo = std::min(lo, b);
      hi = std::max(hi, b);
    }
    int j0 = 0, j1 = beams - 1;
    if (all_ahead) {
      j0 = std::max(0, static_cast<int>(std::floor((lo - first_beam) / cfg.resolution)));
      j1 = std::min(beams - 1, static_cast<int>(std::ceil((hi - first_beam) / cfg.resolution)));
    }
    LidarCluster cluster;
    cluster.target = target->id;
    for (int j = j0; j <= j1; ++j) {
      const double beam = first_beam + j * cfg.resolution;
      const Eigen::Vector2d d(std::cos(beam), std::sin(beam));
      double range = std::numeric_limits<double>::infinity();
      for (int k = 0; k < 4; ++k) {
        const Eigen::Vector2d a = c[k], e = c[(k + 1) % 4] - c[k];
        const double denom = d.x() * e.y() - d.y() * e.x();
        if (std::abs(denom) < 1e-12) continue;
        // a + s e = t d
        const double t = (a.x() * e.y() - a.y() * e.x()) / denom;
        const double s = (a.x() * d.y() - a.y() * d.x()) / denom;
        if (t > 0 && s >= 0 && s <= 1) range = std::min(range, t);
      }
      if (range > cfg.max_range) continue;
      cluster.points.push_back((range + cfg.range_sigma * n01(rng)) * d);
    }
    if (!cluster.points.empty()) out.push_back(std::move(cluster));
  }
  return out;
}

PoseError pose_error(const Pose2d& estimate, const Pose2d& truth) {
  return PoseError{(estimate.translation() - truth.translation()).norm(),
                   std::abs(normalize_angle(estimate.theta() - truth.theta()))};
}

std::vector<PoseError> ground_truth_error(const std::vector<StampedPose>& estimates,
                                          const std::vector<StampedPose>& truths) {
  if (estimates.size() != truths.size())
    throw TimestampMismatch("estimate and truth series differ in length");
  std::vector<PoseError> out;
  out.reserve(estimates.size());
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    if (estimates[i].stamp != truths[i].stamp)
      throw TimestampMismatch("estimate and truth stamps differ at index " + std::to_string(i));
    out.push_back(pose_error(estimates[i].pose, truths[i].pose));
  }
  return out;
}

ErrorSummary summarize(const std::vector<PoseError>& errors) {
  ErrorSummary s;
  s.samples = errors.size();
  if (errors.empty()) return s;
  const double n = static_cast<double>(errors.size());
  for (const auto& e : errors) {
    s.position_mean += e.position / n;
    s.orientation_mean += e.orientation / n;
  }
  for (const auto& e : errors) {
    s.position_std += (e.position - s.position_mean) * (e.position - s.position_mean) / n;
    s.orientation_std +=
        (e.orientation - s.orientation_mean) * (e.orientation - s.orientation_mean) / n;
  }
  s.position_std = std::sqrt(s.position_std);
  s.orientation_std = std::sqrt(s.orientation_std);
  return s;
}

}  // namespace coloc
