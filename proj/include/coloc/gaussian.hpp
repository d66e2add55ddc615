#pragma once

#include <algorithm>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "coloc/se2.hpp"

namespace coloc {

using Covariance3 = Eigen::Matrix3d;

struct GaussianPose {
  Pose2d mean;
  Covariance3 cov = Covariance3::Zero();

  bool operator==(const GaussianPose& other) const {
    return mean == other.mean && cov == other.cov;
  }
};

/// Symmetrizes and clamps eigenvalues from below at `floor`.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Derived::RowsAtCompileTime,
              Derived::ColsAtCompileTime>
repair_psd(const Eigen::MatrixBase<Derived>& m, typename Derived::Scalar floor) {
  using Matrix = Eigen::Matrix<typename Derived::Scalar, Derived::RowsAtCompileTime,
                               Derived::ColsAtCompileTime>;
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  if (eig.eigenvalues().minCoeff() >= floor) return sym;
  const auto clamped = eig.eigenvalues().cwiseMax(floor);
  return eig.eigenvectors() * clamped.asDiagonal() * eig.eigenvectors().transpose();
}

template <typename Derived>
bool is_psd(const Eigen::MatrixBase<Derived>& m, double tol = 1e-10) {
  if (!m.allFinite()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) return false;
  using Matrix = Eigen::Matrix<typename Derived::Scalar, Derived::RowsAtCompileTime,
                               Derived::ColsAtCompileTime>;
  const Matrix dense = m;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(dense);
  return eig.eigenvalues().minCoeff() >= -tol;
}

/// First-order propagation of a ⊕ b for independent a and b.
inline GaussianPose compose(const GaussianPose& a, const GaussianPose& b) {
  const auto j = jacobians_compose(a.mean, b.mean);
  GaussianPose out;
  out.mean = compose(a.mean, b.mean);
  out.cov = j.wrt_a * a.cov * j.wrt_a.transpose() + j.wrt_b * b.cov * j.wrt_b.transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

}  // namespace coloc
