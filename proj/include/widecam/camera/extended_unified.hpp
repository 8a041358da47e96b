#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <string_view>

#include <widecam/camera/common.hpp>
#include <widecam/errors.hpp>

namespace widecam {

/// Extended unified camera model, intrinsics [fx, fy, cx, cy, alpha, beta].
///
/// The point is projected onto the ellipsoid beta (x^2 + y^2) + z^2 = 1 and then
/// onto the image plane of a pinhole camera shifted along z. With beta = 1 the
/// model equals UnifiedCamera.
template <typename Scalar = double>
class ExtendedUnifiedCamera {
 public:
  static constexpr int N = 6;
  static constexpr std::string_view kName = "eucm";

  using Types = CameraTypes<Scalar, N>;
  using Vec2 = typename Types::Vec2;
  using Vec3 = typename Types::Vec3;
  using VecN = typename Types::VecN;
  using Mat23 = typename Types::Mat23;
  using Mat2N = typename Types::Mat2N;
  using Mat32 = typename Types::Mat32;
  using Mat3N = typename Types::Mat3N;

  explicit ExtendedUnifiedCamera(const VecN& params) : param_(params) {
    if (auto why = check(params)) throw InvalidParameters("eucm: " + *why);
  }

  static std::optional<std::string> check(const VecN& p) {
    if (!p.allFinite()) return "non-finite parameter";
    if (!detail::focal_ok(p[0], p[1])) return "focal lengths must be positive";
    if (p[4] < Scalar(0) || p[4] > Scalar(1 - kAlphaEpsilon)) return "alpha outside [0, 1)";
    if (!(p[5] > Scalar(0))) return "beta must be positive";
    return std::nullopt;
  }

  const VecN& params() const { return param_; }

  bool in_omega(const Vec3& p) const {
    const Scalar alpha = param_[4];
    const Scalar beta = param_[5];
    const Scalar d = std::sqrt(beta * (p.x() * p.x() + p.y() * p.y()) + p.z() * p.z());
    if (!(d > Scalar(0))) return false;
    const Scalar w = detail::unified_w(alpha);
    const Scalar den = alpha * d + (Scalar(1) - alpha) * p.z();
    const Scalar eps = Scalar(kDomainEpsilon) * d;
    return p.z() + w * d > eps && den > eps;
  }

  bool in_theta(const Vec2& u) const {
    if (!u.allFinite()) return false;
    const Scalar alpha = param_[4];
    if (alpha <= Scalar(0.5)) return true;
    const Scalar mx = (u[0] - param_[2]) / param_[0];
    const Scalar my = (u[1] - param_[3]) / param_[1];
    return mx * mx + my * my <= Scalar(1) / (param_[5] * (Scalar(2) * alpha - Scalar(1)));
  }

  Status project(const Vec3& p, Vec2& out, Mat23* d_point = nullptr,
                 Mat2N* d_param = nullptr) const {
    if (!in_omega(p)) return Status::kOutOfDomain;
    const Scalar& fx = param_[0];
    const Scalar& fy = param_[1];
    const Scalar& alpha = param_[4];
    const Scalar& beta = param_[5];
    const Scalar rho2 = p.x() * p.x() + p.y() * p.y();
    const Scalar d = std::sqrt(beta * rho2 + p.z() * p.z());
    const Scalar den = alpha * d + (Scalar(1) - alpha) * p.z();
    const Scalar inv = Scalar(1) / den;
    const Scalar mx = p.x() * inv;
    const Scalar my = p.y() * inv;

    out[0] = fx * mx + param_[2];
    out[1] = fy * my + param_[3];

    if (d_point) {
      const Scalar k = alpha / d;
      const Vec3 d_den(k * beta * p.x(), k * beta * p.y(), k * p.z() + Scalar(1) - alpha);
      d_point->row(0) = -fx * mx * inv * d_den.transpose();
      d_point->row(1) = -fy * my * inv * d_den.transpose();
      (*d_point)(0, 0) += fx * inv;
      (*d_point)(1, 1) += fy * inv;
    }
    if (d_param) {
      detail::fill_linear_project_params<Scalar, N>(mx, my, *d_param);
      const Scalar dden_dalpha = d - p.z();
      const Scalar dden_dbeta = alpha * rho2 / (Scalar(2) * d);
      (*d_param)(0, 4) = -fx * mx * inv * dden_dalpha;
      (*d_param)(1, 4) = -fy * my * inv * dden_dalpha;
      (*d_param)(0, 5) = -fx * mx * inv * dden_dbeta;
      (*d_param)(1, 5) = -fy * my * inv * dden_dbeta;
    }
    return Status::kOk;
  }

  Status unproject(const Vec2& u, Vec3& out, Mat32* d_pixel = nullptr,
                   Mat3N* d_param = nullptr) const {
    if (!in_theta(u)) return Status::kOutOfDomain;
    const Scalar& fx = param_[0];
    const Scalar& fy = param_[1];
    const Scalar& alpha = param_[4];
    const Scalar& beta = param_[5];
    const Scalar mx = (u[0] - param_[2]) / fx;
    const Scalar my = (u[1] - param_[3]) / fy;
    const Scalar r2 = mx * mx + my * my;

    const Scalar q = Scalar(1) - (Scalar(2) * alpha - Scalar(1)) * beta * r2;
    const Scalar s = std::sqrt(q);
    const Scalar num = Scalar(1) - beta * alpha * alpha * r2;
    const Scalar den = alpha * s + Scalar(1) - alpha;
    const Scalar mz = num / den;

    const Vec3 m(mx, my, mz);
    out = m.normalized();

    if (d_pixel || d_param) {
      const Eigen::Matrix<Scalar, 3, 3> d_norm = detail::normalize_jacobian<Scalar>(m);
      const Scalar inv_den2 = Scalar(1) / (den * den);

      const Scalar ds_dr2 = -(Scalar(2) * alpha - Scalar(1)) * beta / (Scalar(2) * s);
      const Scalar dmz_dr2 = (-beta * alpha * alpha * den - num * alpha * ds_dr2) * inv_den2;

      Mat32 d_mxy;
      d_mxy << Scalar(1), Scalar(0),  //
          Scalar(0), Scalar(1),       //
          Scalar(2) * mx * dmz_dr2, Scalar(2) * my * dmz_dr2;
      const Mat32 d_m = d_norm * d_mxy;
      detail::chain_normalized<Scalar, N>(d_m, mx, my, fx, fy, d_pixel, d_param);

      if (d_param) {
        const Scalar ds_dalpha = -beta * r2 / s;
        const Scalar dnum_dalpha = -Scalar(2) * beta * alpha * r2;
        const Scalar dden_dalpha = s + alpha * ds_dalpha - Scalar(1);
        const Scalar dmz_dalpha = (dnum_dalpha * den - num * dden_dalpha) * inv_den2;

        const Scalar ds_dbeta = -(Scalar(2) * alpha - Scalar(1)) * r2 / (Scalar(2) * s);
        const Scalar dnum_dbeta = -alpha * alpha * r2;
        const Scalar dden_dbeta = alpha * ds_dbeta;
        const Scalar dmz_dbeta = (dnum_dbeta * den - num * dden_dbeta) * inv_den2;

        d_param->col(4) = d_norm.col(2) * dmz_dalpha;
        d_param->col(5) = d_norm.col(2) * dmz_dbeta;
      }
    }
    return Status::kOk;
  }

 private:
  VecN param_;
};

}  // namespace widecam
