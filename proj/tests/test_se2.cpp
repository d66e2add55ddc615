#include <doctest.h>

#include <numbers>
#include <random>

#include "coloc/gaussian.hpp"
#include "coloc/se2.hpp"
#include "oracles.hpp"

using namespace coloc;
using std::numbers::pi;

namespace {

void check_pose(const Pose2d& got, const Pose2d& want, double tol = 1e-12) {
  CHECK(oracle::pose_gap(got, want) <= tol);
}

}  // namespace

TEST_CASE("compose basics") {
  check_pose(compose(Pose2d(1, 0, 0), Pose2d(1, 0, 0)), Pose2d(2, 0, 0));
  check_pose(compose(Pose2d(0, 0, pi / 2), Pose2d(1, 0, 0)), Pose2d(0, 1, pi / 2));
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const Pose2d a = oracle::random_pose(rng);
    check_pose(compose(a, Pose2d()), a);
  }
}

TEST_CASE("between and inverse") {
  check_pose(between(Pose2d(0, 0, pi / 2), Pose2d(1, 1, 0)), Pose2d(1, -1, -pi / 2));
  check_pose(inverse(Pose2d()), Pose2d());
  check_pose(inverse(Pose2d(1, 0, 0)), Pose2d(-1, 0, 0));
  check_pose(inverse(Pose2d(0, 1, pi / 2)), Pose2d(-1, 0, -pi / 2));

  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    const Pose2d a = oracle::random_pose(rng), b = oracle::random_pose(rng);
    check_pose(between(a, a), Pose2d(), 1e-12);
    check_pose(between(a, compose(a, b)), b, 1e-9);
    const Pose2d want =
        oracle::from_homogeneous(oracle::homogeneous(a).inverse() * oracle::homogeneous(b));
    check_pose(between(a, b), want, 1e-9);
    check_pose(compose(a, b),
               oracle::from_homogeneous(oracle::homogeneous(a) * oracle::homogeneous(b)), 1e-9);
  }
}

TEST_CASE("headings stay wrapped") {
  const Pose2d p = compose(Pose2d(0, 0, 3.0), Pose2d(0, 0, 3.0));
  CHECK(p.theta() > -pi);
  CHECK(p.theta() <= pi);
  CHECK(p.theta() == doctest::Approx(6.0 - 2 * pi));
}

TEST_CASE("compose Jacobians") {
  const auto id = jacobians_compose(Pose2d(), Pose2d());
  CHECK(id.wrt_a.isApprox(Eigen::Matrix3d::Identity()));
  CHECK(id.wrt_b.isApprox(Eigen::Matrix3d::Identity()));

  Eigen::Matrix3d expected;
  expected << 1, 0, 0, 0, 1, 1, 0, 0, 1;
  CHECK((jacobians_compose(Pose2d(), Pose2d(1, 0, 0)).wrt_a - expected).norm() < 1e-12);
}

TEST_CASE("between Jacobians at coincident poses") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 20; ++i) {
    const Pose2d a = oracle::random_pose(rng);
    const auto j = jacobians_between(a, a);
    // Moving both poses together leaves the relative pose unchanged.
    CHECK((j.wrt_a + j.wrt_b).norm() < 1e-12);
    const auto num = oracle::numeric_jacobian([&](const Pose2d& p) { return between(p, a); }, a);
    CHECK((j.wrt_a - num).cwiseAbs().maxCoeff() < 1e-6);
  }
  CHECK(jacobians_between(Pose2d(), Pose2d()).wrt_b.isApprox(Eigen::Matrix3d::Identity()));
}

TEST_CASE("Jacobians match central differences") {
  std::mt19937_64 rng(13);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
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
  CHECK(worst < 1e-6);
}

TEST_CASE("angle_sq_diff and pose_distance") {
  CHECK(angle_sq_diff(0.0) == 0.0);
  CHECK(angle_sq_diff(2 * pi) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(angle_sq_diff(3 * pi / 2) == doctest::Approx(pi * pi / 4));
  const Pose2d p(1, 2, 0.3);
  CHECK(pose_distance(p, p, 5.0) == 0.0);
  CHECK(pose_distance(Pose2d(), Pose2d(3, 4, 0), 7.0) == doctest::Approx(25.0));
  CHECK(pose_distance(Pose2d(), Pose2d(0, 0, pi), 2.0) == doctest::Approx(2 * pi * pi));
}

TEST_CASE("Gaussian compose propagates first order") {
  GaussianPose a{Pose2d(1, 0, 0), Eigen::Vector3d(0.01, 0.01, 0.0).asDiagonal()};
  GaussianPose b{Pose2d(1, 0, 0), Eigen::Vector3d(0.01, 0.01, 0.02).asDiagonal()};
  const GaussianPose c = compose(a, b);
  check_pose(c.mean, Pose2d(2, 0, 0));
  Eigen::Matrix3d want = Eigen::Vector3d(0.02, 0.02, 0.02).asDiagonal();
  // Heading noise of b does not lever the translation; that of a is zero.
  CHECK((c.cov - want).norm() < 1e-15);
}

TEST_CASE("PSD repair") {
  Eigen::Matrix3d m;
  m << 1, 0, 0, 0, -1e-3, 0, 0, 0, 2;
  CHECK_FALSE(is_psd(m));
  const Eigen::Matrix3d r = repair_psd(m, 1e-6);
  CHECK(is_psd(r));
  CHECK(r(1, 1) == doctest::Approx(1e-6));
  CHECK(r(0, 0) == doctest::Approx(1.0));
}
