#include <doctest.h>

#include <numbers>
#include <random>

#include "coloc/relative_pose.hpp"
#include "coloc/world.hpp"
#include "oracles.hpp"

using namespace coloc;
using std::numbers::pi;

namespace {

VehicleState at_pose(VehicleId id, const Pose2d& pose) {
  VehicleState v;
  v.id = id;
  v.truth = pose;
  return v;
}

}  // namespace

TEST_CASE("unicycle integration") {
  CHECK(oracle::pose_gap(integrate_unicycle(Pose2d(), 1.0, 0.0, 1.0), Pose2d(1, 0, 0)) < 1e-15);
  CHECK(oracle::pose_gap(integrate_unicycle(Pose2d(), 0.0, pi / 2, 1.0), Pose2d(0, 0, pi / 2)) < 1e-15);
  // Radius one, half a turn.
  CHECK(oracle::pose_gap(integrate_unicycle(Pose2d(), 1.0, 1.0, pi), Pose2d(0, 2, pi)) < 1e-12);
  // Many small steps agree with one large one.
  Pose2d p;
  for (int i = 0; i < 1000; ++i) p = integrate_unicycle(p, 2.0, 0.3, 0.001);
  CHECK(oracle::pose_gap(p, integrate_unicycle(Pose2d(), 2.0, 0.3, 1.0)) < 1e-9);
}

TEST_CASE("pure pursuit holds a straight lane") {
  VehicleState v = at_pose(1, Pose2d(0, 0.5, 0.1));
  v.path = straight_path({0, 0}, {200, 0}, 10.0);
  for (int i = 0; i < 100; ++i) step_vehicle(v, 0.1);
  CHECK(v.truth.x() == doctest::Approx(100).epsilon(0.01));
  CHECK(std::abs(v.truth.y()) < 0.05);
  CHECK(std::abs(v.truth.theta()) < 0.01);
}

TEST_CASE("map sensor") {
  MapSensorConfig exact;
  exact.sigma_pos = 0;
  exact.sigma_theta = 0;
  Rng rng(1);
  const VehicleState v = at_pose(1, Pose2d(3, 4, 0.5));
  CHECK(oracle::pose_gap(sense_map(v, exact, rng).mean, v.truth) == 0);

  const MapSensorConfig cfg;
  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const GaussianPose z = sense_map(v, cfg, rng);
    CHECK(z.cov == map_covariance(cfg));
    const Eigen::Vector3d e = tangent_diff(z.mean, v.truth);
    scatter += e * e.transpose() / n;
  }
  const Covariance3 declared = map_covariance(cfg);
  for (int k = 0; k < 3; ++k)
    CHECK(std::abs(scatter(k, k) / declared(k, k) - 1.0) < 0.1);

  // Headings near the branch cut stay wrapped.
  const VehicleState back = at_pose(1, Pose2d(0, 0, pi - 1e-3));
  for (int i = 0; i < 100; ++i) {
    const double th = sense_map(back, cfg, rng).mean.theta();
    CHECK(th > -pi);
    CHECK(th <= pi);
  }
}

TEST_CASE("odometry sensor") {
  OdometrySensorConfig silent;
  silent.sigma_per_m = silent.sigma_theta_per_m = silent.sigma_theta_per_rad = 0;
  Rng rng(2);
  VehicleState v = at_pose(1, Pose2d(5, 5, 0));
  CHECK(oracle::pose_gap(sense_odometry(v, silent, rng).mean, Pose2d()) == 0);
  CHECK(oracle::pose_gap(sense_odometry(v, silent, rng).mean, Pose2d()) == 0);  // no motion
  v.truth = Pose2d(7, 5, 0);
  CHECK(oracle::pose_gap(sense_odometry(v, silent, rng).mean, Pose2d(2, 0, 0)) < 1e-15);

  // Noise-free odometry along an arc reproduces the true displacement.
  VehicleState arc = at_pose(1, Pose2d(1, 2, 0.3));
  sense_odometry(arc, silent, rng);
  for (int i = 0; i < 50; ++i) {
    arc.truth = integrate_unicycle(arc.truth, 10.0, 0.4, 0.1);
    sense_odometry(arc, silent, rng);
  }
  CHECK(oracle::pose_gap(arc.odometry.mean, between(Pose2d(1, 2, 0.3), arc.truth)) < 1e-9);

  // Translation-only noise over equal straight steps grows linearly.
  OdometrySensorConfig cfg;
  cfg.sigma_theta_per_m = cfg.sigma_theta_per_rad = 0;
  VehicleState s = at_pose(1, Pose2d());
  sense_odometry(s, cfg, rng);
  std::vector<double> traces;
  for (int i = 1; i <= 20; ++i) {
    s.truth = Pose2d(i * 1.0, 0, 0);
    traces.push_back(sense_odometry(s, cfg, rng).cov.trace());
  }
  const double per_step = 2 * cfg.sigma_per_m * cfg.sigma_per_m;
  for (int i = 0; i < 20; ++i) CHECK(traces[i] == doctest::Approx((i + 1) * per_step));
}

TEST_CASE("LIDAR visibility") {
  const LidarConfig cfg;
  Rng rng(3);
  const VehicleState observer = at_pose(1, Pose2d(10, 10, pi / 2));
  const VehicleState behind = at_pose(2, Pose2d(10, 0, pi / 2));
  CHECK(sense_lidar(observer, {&behind}, cfg, rng).empty());
  const VehicleState far = at_pose(3, Pose2d(10, 60, 0));
  CHECK(sense_lidar(observer, {&far}, cfg, rng).empty());
  CHECK(sense_lidar(observer, {&observer}, cfg, rng).empty());
}

TEST_CASE("LIDAR returns lie on the target") {
  LidarConfig exact;
  exact.range_sigma = 0;
  Rng rng(4);
  const VehicleState observer = at_pose(1, Pose2d());
  const VehicleState ahead = at_pose(2, Pose2d(12, 0, 0));
  const auto scan = sense_lidar(observer, {&ahead}, exact, rng);
  REQUIRE(scan.size() == 1);
  CHECK(scan[0].target == 2);
  CHECK(scan[0].points.size() > 5);
  // Dead ahead and axis aligned: only the rear face x = 10 is visible.
  for (const auto& p : scan[0].points) {
    CHECK(p.x() == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(std::abs(p.y()) <= 1.0 + 1e-9);
  }
  CHECK(outline_error(scan[0].points, ahead.geometry, ahead.truth) < 1e-20);
}

TEST_CASE("LIDAR cluster centroid stays inside the inflated box") {
  const LidarConfig cfg;
  Rng rng(5);
  std::uniform_real_distribution<double> x(3, 35), y(-20, 20), th(-pi, pi);
  const VehicleState observer = at_pose(1, Pose2d());
  const double margin = 3 * cfg.range_sigma;
  int seen = 0;
  for (int i = 0; i < 1000; ++i) {
    const VehicleState target = at_pose(2, Pose2d(x(rng), y(rng), th(rng)));
    const auto scan = sense_lidar(observer, {&target}, cfg, rng);
    if (scan.empty()) continue;
    ++seen;
    Eigen::Vector2d c = Eigen::Vector2d::Zero();
    for (const auto& p : scan[0].points) c += p;
    c /= static_cast<double>(scan[0].points.size());
    const Pose2d local = between(target.truth, Pose2d(c.x(), c.y(), 0));
    CHECK(std::abs(local.x()) <= 2.0 + margin);
    CHECK(std::abs(local.y()) <= 1.0 + margin);
  }
  CHECK(seen > 500);
}

TEST_CASE("ground-truth error") {
  CHECK(pose_error(Pose2d(1, 2, 3), Pose2d(1, 2, 3)).position == 0);
  CHECK(pose_error(Pose2d(0.3, 0.4, 0), Pose2d()).position == doctest::Approx(0.5));
  CHECK(pose_error(Pose2d(0, 0, pi - 0.1), Pose2d(0, 0, -pi + 0.1)).orientation ==
        doctest::Approx(0.2));

  std::vector<StampedPose> est, truth;
  for (int i = 0; i < 10; ++i) {
    est.push_back({0.1 * i, Pose2d(i + 0.3, 0.4, 0.05)});
    truth.push_back({0.1 * i, Pose2d(i, 0, 0)});
  }
  const auto s = summarize(ground_truth_error(est, truth));
  CHECK(s.samples == 10);
  CHECK(s.position_mean == doctest::Approx(0.5));
  CHECK(s.position_std == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(s.orientation_mean == doctest::Approx(0.05));

  auto shifted = truth;
  shifted[3].stamp += 0.01;
  CHECK_THROWS_AS(ground_truth_error(est, shifted), TimestampMismatch);
  truth.pop_back();
  CHECK_THROWS_AS(ground_truth_error(est, truth), TimestampMismatch);
  CHECK(summarize({}).samples == 0);
}
