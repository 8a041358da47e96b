#pragma once

#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <widecam/errors.hpp>

namespace widecam {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Tangent vector of SE(3), ordered (translation, rotation).
using Twist = Eigen::Matrix<double, 6, 1>;

/// Skew-symmetric matrix such that hat(a) * b == a.cross(b).
inline Mat3 hat(const Vec3& a) {
  Mat3 m;
  m << 0.0, -a.z(), a.y(),  //
      a.z(), 0.0, -a.x(),   //
      -a.y(), a.x(), 0.0;
  return m;
}

inline Vec3 vee(const Mat3& m) { return Vec3(m(2, 1), m(0, 2), m(1, 0)); }

/// Rigid transform x -> R x + t. Used as T_ca: calibration board to camera.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Pose() = default;
  Pose(const Mat3& r, const Vec3& t) : rotation(r), translation(t) {}

  static Pose identity() { return {}; }

  static Pose from_matrix(const Mat4& m) {
    return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
  }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  Vec3 operator*(const Vec3& x) const { return rotation * x + translation; }

  Pose operator*(const Pose& other) const {
    return {rotation * other.rotation, rotation * other.translation + translation};
  }

  Pose inverse() const {
    const Mat3 rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }
};

inline Vec3 transform_point(const Pose& pose, const Vec3& x) { return pose * x; }

namespace detail {

// Angles below this use the truncated Taylor form of Rodrigues' formula.
inline constexpr double kSmallAngle = 1e-8;

// (theta - sin theta) / theta^3, cancellation-free near zero.
inline double third_coeff(double theta) {
  if (theta < 1e-3) {
    const double t2 = theta * theta;
    return 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0;
  }
  return (theta - std::sin(theta)) / (theta * theta * theta);
}

}  // namespace detail

/// Rotation matrix of an axis-angle vector.
inline Mat3 so3_exp(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 w = hat(omega);
  if (theta < detail::kSmallAngle) {
    return Mat3::Identity() + w + 0.5 * w * w;
  }
  const double half = std::sin(0.5 * theta) / theta;
  const double a = std::sin(theta) / theta;
  const double b = 2.0 * half * half;  // (1 - cos) / theta^2
  return Mat3::Identity() + a * w + b * w * w;
}

inline Pose se3_exp(const Twist& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 omega = xi.tail<3>();
  const double theta = omega.norm();
  const Mat3 w = hat(omega);
  const Mat3 w2 = w * w;

  Mat3 r;
  Mat3 v;
  if (theta < detail::kSmallAngle) {
    r = Mat3::Identity() + w + 0.5 * w2;
    v = Mat3::Identity() + 0.5 * w + (1.0 / 6.0) * w2;
  } else {
    const double half = std::sin(0.5 * theta) / theta;
    const double a = std::sin(theta) / theta;
    const double b = 2.0 * half * half;
    const double c = detail::third_coeff(theta);
    r = Mat3::Identity() + a * w + b * w2;
    v = Mat3::Identity() + b * w + c * w2;
  }
  return {r, v * rho};
}

/// Axis-angle vector of a rotation; angle must stay below pi - 1e-6.
inline Vec3 so3_log(const Mat3& r) {
  const Vec3 v = vee(r - r.transpose());
  const double s = 0.5 * v.norm();
  const double c = 0.5 * (r.trace() - 1.0);
  const double theta = std::atan2(s, c);
  if (theta > M_PI - 1e-6) {
    throw DomainError("so3_log: rotation angle too close to pi");
  }
  if (theta < detail::kSmallAngle) {
    return 0.5 * (1.0 + theta * theta / 6.0) * v;
  }
  return (0.5 * theta / s) * v;
}

inline Twist se3_log(const Pose& pose) {
  const Vec3 omega = so3_log(pose.rotation);
  const double theta = omega.norm();
  const Mat3 w = hat(omega);

  // 1/theta^2 * (1 - theta/2 * cot(theta/2))
  double d;
  if (theta < 1e-4) {
    d = 1.0 / 12.0 + theta * theta / 720.0;
  } else {
    const double half = 0.5 * theta;
    d = (1.0 - half * std::cos(half) / std::sin(half)) / (theta * theta);
  }
  const Mat3 v_inv = Mat3::Identity() - 0.5 * w + d * w * w;

  Twist xi;
  xi.head<3>() = v_inv * pose.translation;
  xi.tail<3>() = omega;
  return xi;
}

/// d(T exp(delta) x) / d(delta) at delta = 0, for the (translation, rotation)
/// twist ordering.
inline Eigen::Matrix<double, 3, 6> right_perturbation_jacobian(const Pose& pose,
                                                               const Vec3& x) {
  Eigen::Matrix<double, 3, 6> j;
  j.leftCols<3>() = pose.rotation;
  j.rightCols<3>() = -pose.rotation * hat(x);
  return j;
}

}  // namespace widecam
