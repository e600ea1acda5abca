#pragma once

// Rigid-body geometry: SO(3)/SE(3) values, exponential and logarithm maps,
// and point-action Jacobians.
//
// Conventions
// -----------
// Twist layout:   (wx wy wz vx vy vz), rotation first.
// Perturbation:   left-multiplicative, P <- exp(xi) * P.
// Camera poses:   camera-to-world; act(inverse(P), p_world) is the point in
//                 the camera frame.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <limits>

#include "dynba/errors.hpp"

namespace dynba {

using Point3 = Eigen::Vector3d;
using Vector3 = Eigen::Vector3d;
using Matrix3 = Eigen::Matrix3d;
using Twist = Eigen::Matrix<double, 6, 1>;
using Matrix36 = Eigen::Matrix<double, 3, 6>;

inline constexpr double kPi = 3.14159265358979323846;
/// Below this rotation angle exp/log switch to their Taylor forms.
inline constexpr double kSmallAngle = 1e-8;
/// Largest rotation angle log() accepts.
inline constexpr double kLogMaxAngle = kPi - 1e-6;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

[[nodiscard]] inline Matrix3 skew(const Vector3& v) {
  Matrix3 s;
  // clang-format off
  s <<   0.0, -v.z(),  v.y(),
       v.z(),    0.0, -v.x(),
      -v.y(),  v.x(),    0.0;
  // clang-format on
  return s;
}

/// Unit quaternion, stored with w >= 0.
class Rotation {
 public:
  Rotation() : q_(Eigen::Quaterniond::Identity()) {}

  /// Normalizes and canonicalizes. Throws std::invalid_argument on a zero or
  /// non-finite quaternion.
  Rotation(double w, double x, double y, double z) : q_(w, x, y, z) {
    canonicalize();
  }

  explicit Rotation(const Eigen::Quaterniond& q) : q_(q) { canonicalize(); }

  static Rotation FromMatrix(const Matrix3& m) {
    return Rotation(Eigen::Quaterniond(m));
  }

  /// SO(3) exponential of a rotation vector.
  static Rotation Exp(const Vector3& omega) {
    const double theta_sq = omega.squaredNorm();
    const double theta = std::sqrt(theta_sq);
    double w, s;
    if (theta < kSmallAngle) {
      w = 1.0 - theta_sq / 8.0;
      s = 0.5 - theta_sq / 48.0;
    } else {
      w = std::cos(0.5 * theta);
      s = std::sin(0.5 * theta) / theta;
    }
    return Rotation(w, s * omega.x(), s * omega.y(), s * omega.z());
  }

  /// Rotation vector of angle in [0, pi].
  Vector3 Log() const {
    const Vector3 v = q_.vec();
    const double n = v.norm();
    const double w = q_.w();
    if (n < kSmallAngle) {
      // theta / n = 2/w * (1 - n^2 / (3 w^2)) + O(n^4)
      return (2.0 / w) * (1.0 - n * n / (3.0 * w * w)) * v;
    }
    const double theta = 2.0 * std::atan2(n, w);
    return (theta / n) * v;
  }

  double angle() const { return 2.0 * std::atan2(q_.vec().norm(), q_.w()); }

  Matrix3 matrix() const { return q_.toRotationMatrix(); }
  const Eigen::Quaterniond& quaternion() const { return q_; }

  double w() const { return q_.w(); }
  double x() const { return q_.x(); }
  double y() const { return q_.y(); }
  double z() const { return q_.z(); }

  Rotation inverse() const { return Rotation(q_.conjugate()); }
  Rotation operator*(const Rotation& other) const {
    return Rotation(q_ * other.q_);
  }
  Vector3 operator*(const Vector3& p) const { return q_ * p; }

 private:
  void canonicalize() {
    const double n = q_.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw std::invalid_argument("Rotation: zero or non-finite quaternion");
    }
    // Already unit to a few ulps: keep the bits, so that normalizing is
    // idempotent and text round-trips are exact.
    if (std::abs(n - 1.0) > 4.0 * std::numeric_limits<double>::epsilon()) {
      q_.coeffs() /= n;
    }
    if (q_.w() < 0.0) q_.coeffs() = -q_.coeffs();
  }

  Eigen::Quaterniond q_;
};

/// Element of SE(3): p -> R p + t.
class Pose {
 public:
  Pose() : t_(Vector3::Zero()) {}
  Pose(const Rotation& r, const Vector3& t) : r_(r), t_(t) {}

  static Pose Identity() { return Pose(); }
  static Pose FromTranslation(const Vector3& t) { return Pose(Rotation(), t); }

  const Rotation& rotation() const { return r_; }
  const Vector3& translation() const { return t_; }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = r_.matrix();
    m.topRightCorner<3, 1>() = t_;
    return m;
  }

 private:
  Rotation r_;
  Vector3 t_;
};

namespace detail {

// (1 - cos t) / t^2 computed without cancellation.
inline double one_minus_cos_over_sq(double theta) {
  const double s = std::sin(0.5 * theta) / theta;
  return 2.0 * s * s;
}

// (t - sin t) / t^3
inline double t_minus_sin_over_cube(double theta) {
  if (theta < 1e-3) {
    const double t2 = theta * theta;
    return 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0;
  }
  return (theta - std::sin(theta)) / (theta * theta * theta);
}

// (1 - (t/2) cot(t/2)) / t^2
inline double inverse_v_coefficient(double theta) {
  if (theta < 1e-3) {
    const double t2 = theta * theta;
    return 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0;
  }
  const double half = 0.5 * theta;
  return (1.0 - half * std::cos(half) / std::sin(half)) / (theta * theta);
}

}  // namespace detail

/// Left Jacobian of SO(3) ("V matrix"), couples rotation and translation in
/// the SE(3) exponential.
[[nodiscard]] inline Matrix3 so3_left_jacobian(const Vector3& omega) {
  const double theta = omega.norm();
  const Matrix3 w = skew(omega);
  if (theta < kSmallAngle) {
    return Matrix3::Identity() + 0.5 * w + (1.0 / 6.0) * w * w;
  }
  return Matrix3::Identity() + detail::one_minus_cos_over_sq(theta) * w +
         detail::t_minus_sin_over_cube(theta) * w * w;
}

[[nodiscard]] inline Matrix3 so3_left_jacobian_inverse(const Vector3& omega) {
  const double theta = omega.norm();
  const Matrix3 w = skew(omega);
  if (theta < kSmallAngle) {
    return Matrix3::Identity() - 0.5 * w + (1.0 / 12.0) * w * w;
  }
  return Matrix3::Identity() - 0.5 * w +
         detail::inverse_v_coefficient(theta) * w * w;
}

[[nodiscard]] inline Pose exp(const Twist& xi) {
  const Vector3 omega = xi.head<3>();
  const Vector3 v = xi.tail<3>();
  return Pose(Rotation::Exp(omega), so3_left_jacobian(omega) * v);
}

/// Throws BranchAmbiguityError when the rotation angle is >= pi - 1e-6.
[[nodiscard]] inline Twist log(const Pose& pose) {
  const double angle = pose.rotation().angle();
  if (!(angle < kLogMaxAngle)) {
    throw BranchAmbiguityError(
        "log: rotation angle at or near pi, logarithm branch is ambiguous");
  }
  const Vector3 omega = pose.rotation().Log();
  Twist xi;
  xi.head<3>() = omega;
  xi.tail<3>() = so3_left_jacobian_inverse(omega) * pose.translation();
  return xi;
}

[[nodiscard]] inline Pose compose(const Pose& a, const Pose& b) {
  return Pose(a.rotation() * b.rotation(),
              a.rotation() * b.translation() + a.translation());
}

[[nodiscard]] inline Pose inverse(const Pose& p) {
  const Rotation r_inv = p.rotation().inverse();
  return Pose(r_inv, -(r_inv * p.translation()));
}

[[nodiscard]] inline Point3 act(const Pose& pose, const Point3& p) {
  return pose.rotation() * p + pose.translation();
}

inline Pose operator*(const Pose& a, const Pose& b) { return compose(a, b); }
inline Point3 operator*(const Pose& a, const Point3& p) { return act(a, p); }

/// Derivatives of act(P, p): `pose` is with respect to xi in exp(xi) * P,
/// `point` with respect to p.
struct ActJacobians {
  Matrix36 pose;
  Matrix3 point;
};

[[nodiscard]] inline ActJacobians act_jacobians(const Pose& pose,
                                                const Point3& p) {
  const Point3 q = act(pose, p);
  ActJacobians j;
  j.pose.leftCols<3>() = -skew(q);
  j.pose.rightCols<3>() = Matrix3::Identity();
  j.point = pose.rotation().matrix();
  return j;
}

/// Angle of the rotation part, in radians.
inline double rotation_angle(const Pose& p) { return p.rotation().angle(); }

}  // namespace dynba
