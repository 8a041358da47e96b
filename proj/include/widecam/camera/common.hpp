#pragma once

#include <cmath>
#include <optional>
#include <string>

#include <Eigen/Core>

namespace widecam {

/// Outcome of a non-throwing projection or unprojection call.
enum class Status {
  kOk,
  kOutOfDomain,    // point not in Omega, or pixel not in Theta
  kNoConvergence,  // iterative inverse failed
};

/// alpha is kept in [0, 1 - kAlphaEpsilon].
inline constexpr double kAlphaEpsilon = 1e-9;
/// Relative margin used for every open-set boundary and denominator test.
inline constexpr double kDomainEpsilon = 1e-12;

template <typename Scalar, int N>
struct CameraTypes {
  using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
  using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
  using VecN = Eigen::Matrix<Scalar, N, 1>;
  using Mat23 = Eigen::Matrix<Scalar, 2, 3>;
  using Mat2N = Eigen::Matrix<Scalar, 2, N>;
  using Mat32 = Eigen::Matrix<Scalar, 3, 2>;
  using Mat3N = Eigen::Matrix<Scalar, 3, N>;
};

namespace detail {

/// Sphere/ellipsoid visibility constant shared by UCM, EUCM and DS.
template <typename Scalar>
Scalar unified_w(Scalar alpha) {
  return alpha <= Scalar(0.5) ? alpha / (Scalar(1) - alpha) : (Scalar(1) - alpha) / alpha;
}

/// Fills the focal/principal-point part of a projection Jacobian, given the
/// normalized coordinates m = (u - c) / f.
template <typename Scalar, int N>
void fill_linear_project_params(Scalar mx, Scalar my, Eigen::Matrix<Scalar, 2, N>& d_param) {
  d_param.setZero();
  d_param(0, 0) = mx;
  d_param(1, 1) = my;
  d_param(0, 2) = Scalar(1);
  d_param(1, 3) = Scalar(1);
}

/// Chains d(bearing)/d(mx, my) through m = (u - c) / f into the pixel Jacobian
/// and the first four intrinsic columns [fx, fy, cx, cy].
template <typename Scalar, int N>
void chain_normalized(const Eigen::Matrix<Scalar, 3, 2>& d_m, Scalar mx, Scalar my, Scalar fx,
                      Scalar fy, Eigen::Matrix<Scalar, 3, 2>* d_pixel,
                      Eigen::Matrix<Scalar, 3, N>* d_param) {
  if (d_pixel) {
    d_pixel->col(0) = d_m.col(0) / fx;
    d_pixel->col(1) = d_m.col(1) / fy;
  }
  if (d_param) {
    d_param->col(0) = -d_m.col(0) * (mx / fx);
    d_param->col(1) = -d_m.col(1) * (my / fy);
    d_param->col(2) = -d_m.col(0) / fx;
    d_param->col(3) = -d_m.col(1) / fy;
  }
}

/// Jacobian of v / |v| with respect to v.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> normalize_jacobian(const Eigen::Matrix<Scalar, 3, 1>& v) {
  const Scalar n = v.norm();
  const Eigen::Matrix<Scalar, 3, 1> b = v / n;
  return (Eigen::Matrix<Scalar, 3, 3>::Identity() - b * b.transpose()) / n;
}

template <typename Scalar>
bool focal_ok(Scalar fx, Scalar fy) {
  return std::isfinite(fx) && std::isfinite(fy) && fx > Scalar(0) && fy > Scalar(0);
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace detail
}  // namespace widecam
