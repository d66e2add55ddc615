// SE(2) pose algebra on (x, y, theta) coordinates.
//
// Conventions: a ⊕ b rotates b's translation by a.theta and adds a's
// translation (head-to-tail); between(a, b) = b ⊖ a is b expressed in a's
// frame (tail-to-tail). Headings are always kept in (-pi, pi].
#pragma once

#include <cmath>
#include <numbers>

#include <Eigen/Core>

namespace coloc {

template <typename Scalar>
inline Scalar normalize_angle(Scalar angle) {
  constexpr Scalar pi = std::numbers::pi_v<Scalar>;
  if (angle > -pi && angle <= pi) return angle;
  Scalar wrapped = std::atan2(std::sin(angle), std::cos(angle));
  if (wrapped <= -pi) wrapped = pi;
  return wrapped;
}

template <typename Scalar>
class Pose2 {
 public:
  using Vector3 = Eigen::Matrix<Scalar, 3, 1>;

  Pose2() = default;
  Pose2(Scalar x, Scalar y, Scalar theta)
      : x_(x), y_(y), theta_(normalize_angle(theta)) {}

  static Pose2 Identity() { return Pose2(); }
  static Pose2 FromVector(const Vector3& v) { return Pose2(v(0), v(1), v(2)); }

  Scalar x() const { return x_; }
  Scalar y() const { return y_; }
  Scalar theta() const { return theta_; }

  Vector3 vector() const { return Vector3(x_, y_, theta_); }
  Eigen::Matrix<Scalar, 2, 1> translation() const {
    return Eigen::Matrix<Scalar, 2, 1>(x_, y_);
  }

  // Homogeneous 3x3 transform; handy for tests and plotting.
  Eigen::Matrix<Scalar, 3, 3> matrix() const {
    const Scalar c = std::cos(theta_), s = std::sin(theta_);
    Eigen::Matrix<Scalar, 3, 3> m;
    m << c, -s, x_, s, c, y_, 0, 0, 1;
    return m;
  }

  bool operator==(const Pose2&) const = default;

 private:
  Scalar x_{0};
  Scalar y_{0};
  Scalar theta_{0};
};

using Pose2d = Pose2<double>;

template <typename Scalar>
inline Pose2<Scalar> compose(const Pose2<Scalar>& a, const Pose2<Scalar>& b) {
  const Scalar c = std::cos(a.theta()), s = std::sin(a.theta());
  return Pose2<Scalar>(a.x() + c * b.x() - s * b.y(),
                       a.y() + s * b.x() + c * b.y(), a.theta() + b.theta());
}

template <typename Scalar>
inline Pose2<Scalar> inverse(const Pose2<Scalar>& a) {
  const Scalar c = std::cos(a.theta()), s = std::sin(a.theta());
  return Pose2<Scalar>(-c * a.x() - s * a.y(), s * a.x() - c * a.y(),
                       -a.theta());
}

/// b ⊖ a: pose of b in the frame of a. Defined as inverse(a) ⊕ b.
template <typename Scalar>
inline Pose2<Scalar> between(const Pose2<Scalar>& a, const Pose2<Scalar>& b) {
  return compose(inverse(a), b);
}

template <typename Scalar>
struct PoseJacobians {
  Eigen::Matrix<Scalar, 3, 3> wrt_a;
  Eigen::Matrix<Scalar, 3, 3> wrt_b;
};

/// Partial derivatives of compose(a, b) with respect to a and b.
template <typename Scalar>
inline PoseJacobians<Scalar> jacobians_compose(const Pose2<Scalar>& a,
                                               const Pose2<Scalar>& b) {
  const Scalar c = std::cos(a.theta()), s = std::sin(a.theta());
  PoseJacobians<Scalar> j;
  j.wrt_a << 1, 0, -s * b.x() - c * b.y(),  //
      0, 1, c * b.x() - s * b.y(),          //
      0, 0, 1;
  j.wrt_b << c, -s, 0,  //
      s, c, 0,          //
      0, 0, 1;
  return j;
}

/// Partial derivatives of between(a, b) = b ⊖ a with respect to a and b.
template <typename Scalar>
inline PoseJacobians<Scalar> jacobians_between(const Pose2<Scalar>& a,
                                               const Pose2<Scalar>& b) {
  const Scalar c = std::cos(a.theta()), s = std::sin(a.theta());
  const Scalar dx = b.x() - a.x(), dy = b.y() - a.y();
  const Scalar rel_x = c * dx + s * dy;
  const Scalar rel_y = -s * dx + c * dy;
  PoseJacobians<Scalar> j;
  j.wrt_a << -c, -s, rel_y,  //
      s, -c, -rel_x,         //
      0, 0, -1;
  j.wrt_b << c, s, 0,  //
      -s, c, 0,        //
      0, 0, 1;
  return j;
}

/// Squared wrapped heading difference, in [0, pi^2].
template <typename Scalar>
inline Scalar angle_sq_diff(Scalar dtheta) {
  const Scalar wrapped = normalize_angle(dtheta);
  return wrapped * wrapped;
}

/// Squared planar distance plus weighted squared heading difference.
template <typename Scalar>
inline Scalar pose_distance(const Pose2<Scalar>& p, const Pose2<Scalar>& q,
                            Scalar weight) {
  const Scalar dx = p.x() - q.x(), dy = p.y() - q.y();
  return dx * dx + dy * dy + weight * angle_sq_diff(p.theta() - q.theta());
}

/// Tangent-coordinate difference p - q with the heading wrapped.
template <typename Scalar>
inline Eigen::Matrix<Scalar, 3, 1> tangent_diff(const Pose2<Scalar>& p,
                                                const Pose2<Scalar>& q) {
  return Eigen::Matrix<Scalar, 3, 1>(p.x() - q.x(), p.y() - q.y(),
                                     normalize_angle(p.theta() - q.theta()));
}

/// Additive update on (x, y, theta); theta renormalized.
template <typename Scalar>
inline Pose2<Scalar> retract(const Pose2<Scalar>& p,
                             const Eigen::Matrix<Scalar, 3, 1>& delta) {
  return Pose2<Scalar>(p.x() + delta(0), p.y() + delta(1),
                       p.theta() + delta(2));
}

}  // namespace coloc
