// Independent reference computations shared by the unit and acceptance tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Core>
#include <Eigen/LU>

#include "coloc/se2.hpp"

namespace oracle {

using coloc::Pose2d;

inline Eigen::Matrix3d homogeneous(const Pose2d& p) {
  Eigen::Matrix3d T;
  T << std::cos(p.theta()), -std::sin(p.theta()), p.x(),  //
      std::sin(p.theta()), std::cos(p.theta()), p.y(),    //
      0, 0, 1;
  return T;
}

inline Pose2d from_homogeneous(const Eigen::Matrix3d& T) {
  return Pose2d(T(0, 2), T(1, 2), std::atan2(T(1, 0), T(0, 0)));
}

inline double pose_gap(const Pose2d& a, const Pose2d& b) {
  return std::max({std::abs(a.x() - b.x()), std::abs(a.y() - b.y()),
                   std::abs(coloc::normalize_angle(a.theta() - b.theta()))});
}

inline Pose2d random_pose(std::mt19937_64& rng, double extent = 10.0) {
  std::uniform_real_distribution<double> pos(-extent, extent), ang(-std::numbers::pi, std::numbers::pi);
  const double x = pos(rng), y = pos(rng);
  return Pose2d(x, y, ang(rng));
}

inline Eigen::Matrix3d random_psd(std::mt19937_64& rng, double scale = 0.1) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Matrix3d A;
  for (int i = 0; i < 9; ++i) A(i) = n(rng);
  const Eigen::Matrix3d m = scale * (A * A.transpose() / 3.0 + 0.05 * Eigen::Matrix3d::Identity());
  return 0.5 * (m + m.transpose());
}

// Central differences of f(p) w.r.t. the additive (x, y, theta) coordinates of
// p; the output heading difference is wrapped.
inline Eigen::Matrix3d numeric_jacobian(const std::function<Pose2d(const Pose2d&)>& f,
                                        const Pose2d& p, double h = 1e-6) {
  Eigen::Matrix3d J;
  for (int k = 0; k < 3; ++k) {
    Eigen::Vector3d d = Eigen::Vector3d::Zero();
    d(k) = h;
    const Pose2d plus = f(Pose2d::FromVector(p.vector() + d));
    const Pose2d minus = f(Pose2d::FromVector(p.vector() - d));
    J.col(k) << (plus.x() - minus.x()) / (2 * h), (plus.y() - minus.y()) / (2 * h),
        coloc::normalize_angle(plus.theta() - minus.theta()) / (2 * h);
  }
  return J;
}

// Minimum-cost assignment of every row to a distinct column, by enumeration.
inline double brute_force_assignment(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows()), m = static_cast<int>(cost.cols());
  std::vector<int> cols(m);
  std::iota(cols.begin(), cols.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  // Permutations of all columns; the first n entries are the row choices.
  do {
    double c = 0.0;
    for (int i = 0; i < n; ++i) c += cost(i, cols[i]);
    best = std::min(best, c);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

}  // namespace oracle
