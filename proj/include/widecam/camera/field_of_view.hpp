#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>

#include <widecam/camera/common.hpp>
#include <widecam/errors.hpp>

namespace widecam {

namespace detail {

// 2 tan(w / 2) / w, which tends to 1 as w -> 0.
template <typename Scalar>
Scalar fov_tan_ratio(Scalar w) {
  if (w < Scalar(1e-6)) return Scalar(1) + w * w / Scalar(12);
  return Scalar(2) * std::tan(w / Scalar(2)) / w;
}

}  // namespace detail

/// Field-of-view camera model, intrinsics [fx, fy, cx, cy, w].
///
///   r_d = atan2(2 r_u tan(w / 2), z) / w,   u = fx r_d x / r_u + cx
///
/// Omega is everything but the origin. Pixels unproject while r_d w <= pi.
template <typename Scalar = double>
class FovCamera {
 public:
  static constexpr int N = 5;
  static constexpr std::string_view kName = "fov";

  using Types = CameraTypes<Scalar, N>;
  using Vec2 = typename Types::Vec2;
  using Vec3 = typename Types::Vec3;
  using VecN = typename Types::VecN;
  using Mat23 = typename Types::Mat23;
  using Mat2N = typename Types::Mat2N;
  using Mat32 = typename Types::Mat32;
  using Mat3N = typename Types::Mat3N;

  explicit FovCamera(const VecN& params) : param_(params) {
    if (auto why = check(params)) throw InvalidParameters("fov: " + *why);
  }

  static std::optional<std::string> check(const VecN& p) {
    if (!p.allFinite()) return "non-finite parameter";
    if (!detail::focal_ok(p[0], p[1])) return "focal lengths must be positive";
    if (!(p[4] > Scalar(0) && p[4] < Scalar(std::numbers::pi))) return "w outside (0, pi)";
    return std::nullopt;
  }

  const VecN& params() const { return param_; }

  bool in_omega(const Vec3& p) const { return p.allFinite() && p.squaredNorm() > Scalar(0); }

  bool in_theta(const Vec2& u) const {
    if (!u.allFinite()) return false;
    const Scalar mx = (u[0] - param_[2]) / param_[0];
    const Scalar my = (u[1] - param_[3]) / param_[1];
    return std::sqrt(mx * mx + my * my) * param_[4] <= Scalar(std::numbers::pi);
  }

  Status project(const Vec3& p, Vec2& out, Mat23* d_point = nullptr,
                 Mat2N* d_param = nullptr) const {
    if (!in_omega(p)) return Status::kOutOfDomain;
    const Scalar& fx = param_[0];
    const Scalar& fy = param_[1];
    const Scalar& w = param_[4];
    const Scalar x = p.x(), y = p.y(), z = p.z();
    const Scalar r2 = x * x + y * y;
    const Scalar r = std::sqrt(r2);
    const Scalar a_over_w = detail::fov_tan_ratio(w);
    const Scalar a = a_over_w * w;

    if (r == Scalar(0) && z < Scalar(0)) {
      // Negative optical axis maps onto the circle r_d = pi / w.
      if (d_point || d_param) return Status::kOutOfDomain;
      out << fx * Scalar(std::numbers::pi) / w + param_[2], param_[3];
      return Status::kOk;
    }

    const Scalar phi = std::atan2(a * r, z);
    const Scalar g = r > Scalar(0) ? phi / (w * r) : a_over_w / z;  // r_d / r_u
    const Scalar mx = x * g;
    const Scalar my = y * g;

    out[0] = fx * mx + param_[2];
    out[1] = fy * my + param_[3];

    if (d_point || d_param) {
      const Scalar rho2 = a * a * r2 + z * z;
      if (d_point) {
        Scalar gr_over_r;
        if (z > Scalar(0) && a * r < Scalar(1e-4) * z) {
          gr_over_r = -Scalar(2) * a * a * a_over_w / (Scalar(3) * z * z * z);
        } else {
          gr_over_r = (a * z * r / rho2 - phi) / (w * r2 * r);
        }
        const Scalar gz = -a_over_w / rho2;
        *d_point << fx * (g + x * x * gr_over_r), fx * x * y * gr_over_r, fx * x * gz,  //
            fy * x * y * gr_over_r, fy * (g + y * y * gr_over_r), fy * y * gz;
      }
      if (d_param) {
        detail::fill_linear_project_params<Scalar, N>(mx, my, *d_param);
        const Scalar da_dw = Scalar(1) + a * a / Scalar(4);
        const Scalar gw = (z / rho2 * da_dw - g) / w;
        (*d_param)(0, 4) = fx * x * gw;
        (*d_param)(1, 4) = fy * y * gw;
      }
    }
    return Status::kOk;
  }

  Status unproject(const Vec2& u, Vec3& out, Mat32* d_pixel = nullptr,
                   Mat3N* d_param = nullptr) const {
    if (!in_theta(u)) return Status::kOutOfDomain;
    const Scalar& fx = param_[0];
    const Scalar& fy = param_[1];
    const Scalar& w = param_[4];
    const Scalar mx = (u[0] - param_[2]) / fx;
    const Scalar my = (u[1] - param_[3]) / fy;
    const Scalar rd = std::sqrt(mx * mx + my * my);
    const Scalar a_over_w = detail::fov_tan_ratio(w);
    const Scalar a = a_over_w * w;

    const Scalar angle = rd * w;
    const Scalar sin_a = std::sin(angle);
    const Scalar cos_a = std::cos(angle);
    // sin(rd w) / (rd * 2 tan(w / 2)), limit w / A at the center
    const Scalar s = rd > Scalar(0) ? sin_a / (rd * a) : Scalar(1) / a_over_w;

    // The closed form gives a direction, not a unit vector.
    const Vec3 v(mx * s, my * s, cos_a);
    out = v.normalized();

    if (d_pixel || d_param) {
      const Eigen::Matrix<Scalar, 3, 3> d_norm = detail::normalize_jacobian<Scalar>(v);
      Scalar sr_over_r;
      if (angle < Scalar(1e-4)) {
        sr_over_r = -w * w / (Scalar(3) * a_over_w);
      } else {
        sr_over_r = (w * cos_a * rd - sin_a) / (a * rd * rd * rd);
      }
      Mat32 d_v;
      d_v << s + mx * mx * sr_over_r, mx * my * sr_over_r,  //
          mx * my * sr_over_r, s + my * my * sr_over_r,     //
          -w * a * s * mx, -w * a * s * my;
      const Mat32 d_m = d_norm * d_v;
      detail::chain_normalized<Scalar, N>(d_m, mx, my, fx, fy, d_pixel, d_param);

      if (d_param) {
        const Scalar da_dw = Scalar(1) + a * a / Scalar(4);
        const Scalar ds_dw = (cos_a - s * da_dw) / a;
        const Vec3 dv_dw(mx * ds_dw, my * ds_dw, -rd * sin_a);
        d_param->col(4) = d_norm * dv_dw;
      }
    }
    return Status::kOk;
  }

 private:
  VecN param_;
};

}  // namespace widecam
