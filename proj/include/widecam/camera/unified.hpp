#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <string_view>

#include <widecam/camera/common.hpp>
#include <widecam/errors.hpp>

namespace widecam {

namespace detail {

// Lifts sphere-normalized image coordinates m = (u - c) / gamma back onto the
// unit sphere of the unified model with mirror parameter xi.
template <typename Scalar>
void ucm_lift(Scalar mx, Scalar my, Scalar xi, Eigen::Matrix<Scalar, 3, 1>& out,
              Eigen::Matrix<Scalar, 3, 2>* d_m, Eigen::Matrix<Scalar, 3, 1>* d_xi) {
  const Scalar r2 = mx * mx + my * my;
  const Scalar s = std::sqrt(Scalar(1) + (Scalar(1) - xi * xi) * r2);
  const Scalar inv = Scalar(1) / (Scalar(1) + r2);
  const Scalar f = (xi + s) * inv;

  out << f * mx, f * my, f - xi;

  if (d_m) {
    const Scalar df_dr2 = ((Scalar(1) - xi * xi) / (Scalar(2) * s) - f) * inv;
    const Eigen::Matrix<Scalar, 3, 1> m(mx, my, Scalar(1));
    d_m->setZero();
    (*d_m)(0, 0) = f;
    (*d_m)(1, 1) = f;
    d_m->col(0) += m * (Scalar(2) * mx * df_dr2);
    d_m->col(1) += m * (Scalar(2) * my * df_dr2);
  }
  if (d_xi) {
    const Scalar df_dxi = (Scalar(1) - xi * r2 / s) * inv;
    *d_xi << mx * df_dxi, my * df_dxi, df_dxi - Scalar(1);
  }
}

}  // namespace detail

/// Unified camera model in the alpha parametrization, intrinsics
/// [fx, fy, cx, cy, alpha].
///
/// Projection divides by alpha * d + (1 - alpha) * z. For alpha = 0 this is a
/// pinhole camera. Unprojection goes through the equivalent mirror form with
/// xi = alpha / (1 - alpha).
template <typename Scalar = double>
class UnifiedCamera {
 public:
  static constexpr int N = 5;
  static constexpr std::string_view kName = "ucm";

  using Types = CameraTypes<Scalar, N>;
  using Vec2 = typename Types::Vec2;
  using Vec3 = typename Types::Vec3;
  using VecN = typename Types::VecN;
  using Mat23 = typename Types::Mat23;
  using Mat2N = typename Types::Mat2N;
  using Mat32 = typename Types::Mat32;
  using Mat3N = typename Types::Mat3N;

  explicit UnifiedCamera(const VecN& params) : param_(params) {
    if (auto why = check(params)) throw InvalidParameters("ucm: " + *why);
  }

  static std::optional<std::string> check(const VecN& p) {
    if (!p.allFinite()) return "non-finite parameter";
    if (!detail::focal_ok(p[0], p[1])) return "focal lengths must be positive";
    if (p[4] < Scalar(0) || p[4] > Scalar(1 - kAlphaEpsilon)) return "alpha outside [0, 1)";
    return std::nullopt;
  }

  const VecN& params() const { return param_; }

  bool in_omega(const Vec3& p) const {
    const Scalar alpha = param_[4];
    const Scalar d = p.norm();
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
    const Scalar one_minus = Scalar(1) - alpha;
    const Scalar mx = (u[0] - param_[2]) * one_minus / param_[0];
    const Scalar my = (u[1] - param_[3]) * one_minus / param_[1];
    return mx * mx + my * my <= one_minus * one_minus / (Scalar(2) * alpha - Scalar(1));
  }

  Status project(const Vec3& p, Vec2& out, Mat23* d_point = nullptr,
                 Mat2N* d_param = nullptr) const {
    if (!in_omega(p)) return Status::kOutOfDomain;
    const Scalar& fx = param_[0];
    const Scalar& fy = param_[1];
    const Scalar& alpha = param_[4];
    const Scalar d = p.norm();
    const Scalar den = alpha * d + (Scalar(1) - alpha) * p.z();
    const Scalar inv = Scalar(1) / den;
    const Scalar mx = p.x() * inv;
    const Scalar my = p.y() * inv;

    out[0] = fx * mx + param_[2];
    out[1] = fy * my + param_[3];

    if (d_point) {
      Vec3 d_den = (alpha / d) * p;
      d_den.z() += Scalar(1) - alpha;
      d_point->row(0) = -fx * mx * inv * d_den.transpose();
      d_point->row(1) = -fy * my * inv * d_den.transpose();
      (*d_point)(0, 0) += fx * inv;
      (*d_point)(1, 1) += fy * inv;
    }
    if (d_param) {
      detail::fill_linear_project_params<Scalar, N>(mx, my, *d_param);
      const Scalar dd = d - p.z();
      (*d_param)(0, 4) = -fx * mx * inv * dd;
      (*d_param)(1, 4) = -fy * my * inv * dd;
    }
    return Status::kOk;
  }

  Status unproject(const Vec2& u, Vec3& out, Mat32* d_pixel = nullptr,
                   Mat3N* d_param = nullptr) const {
    if (!in_theta(u)) return Status::kOutOfDomain;
    const Scalar& alpha = param_[4];
    const Scalar one_minus = Scalar(1) - alpha;
    const Scalar gx = param_[0] / one_minus;
    const Scalar gy = param_[1] / one_minus;
    const Scalar xi = alpha / one_minus;
    const Scalar mx = (u[0] - param_[2]) / gx;
    const Scalar my = (u[1] - param_[3]) / gy;

    const bool want = d_pixel || d_param;
    Mat32 d_m;
    Vec3 d_xi;
    detail::ucm_lift<Scalar>(mx, my, xi, out, want ? &d_m : nullptr, want ? &d_xi : nullptr);

    if (want) {
      detail::chain_normalized<Scalar, N>(d_m, mx, my, gx, gy, d_pixel, d_param);
      if (d_param) {
        // m depends on fx through gamma = fx / (1 - alpha)
        d_param->col(0) /= one_minus;
        d_param->col(1) /= one_minus;
        d_param->col(4) = -(d_m.col(0) * mx + d_m.col(1) * my) / one_minus +
                          d_xi / (one_minus * one_minus);
      }
    }
    return Status::kOk;
  }

 private:
  VecN param_;
};

/// Unified camera model in the mirror parametrization, intrinsics
/// [gamma_x, gamma_y, cx, cy, xi].
template <typename Scalar = double>
class UnifiedXiCamera {
 public:
  static constexpr int N = 5;
  static constexpr std::string_view kName = "ucm_xi";

  using Types = CameraTypes<Scalar, N>;
  using Vec2 = typename Types::Vec2;
  using Vec3 = typename Types::Vec3;
  using VecN = typename Types::VecN;
  using Mat23 = typename Types::Mat23;
  using Mat2N = typename Types::Mat2N;
  using Mat32 = typename Types::Mat32;
  using Mat3N = typename Types::Mat3N;

  explicit UnifiedXiCamera(const VecN& params) : param_(params) {
    if (auto why = check(params)) throw InvalidParameters("ucm_xi: " + *why);
  }

  static std::optional<std::string> check(const VecN& p) {
    if (!p.allFinite()) return "non-finite parameter";
    if (!detail::focal_ok(p[0], p[1])) return "focal lengths must be positive";
    if (p[4] < Scalar(0)) return "xi must be non-negative";
    return std::nullopt;
  }

  const VecN& params() const { return param_; }

  bool in_omega(const Vec3& p) const {
    const Scalar xi = param_[4];
    const Scalar d = p.norm();
    if (!(d > Scalar(0))) return false;
    // Same set as the alpha form with alpha = xi / (1 + xi).
    const Scalar w = xi <= Scalar(1) ? xi : Scalar(1) / xi;
    const Scalar eps = Scalar(kDomainEpsilon) * d;
    return p.z() + w * d > eps && xi * d + p.z() > eps;
  }

  bool in_theta(const Vec2& u) const {
    if (!u.allFinite()) return false;
    const Scalar xi = param_[4];
    if (xi <= Scalar(1)) return true;
    const Scalar mx = (u[0] - param_[2]) / param_[0];
    const Scalar my = (u[1] - param_[3]) / param_[1];
    return mx * mx + my * my <= Scalar(1) / (xi * xi - Scalar(1));
  }

  Status project(const Vec3& p, Vec2& out, Mat23* d_point = nullptr,
                 Mat2N* d_param = nullptr) const {
    if (!in_omega(p)) return Status::kOutOfDomain;
    const Scalar& gx = param_[0];
    const Scalar& gy = param_[1];
    const Scalar& xi = param_[4];
    const Scalar d = p.norm();
    const Scalar inv = Scalar(1) / (xi * d + p.z());
    const Scalar mx = p.x() * inv;
    const Scalar my = p.y() * inv;

    out[0] = gx * mx + param_[2];
    out[1] = gy * my + param_[3];

    if (d_point) {
      Vec3 d_den = (xi / d) * p;
      d_den.z() += Scalar(1);
      d_point->row(0) = -gx * mx * inv * d_den.transpose();
      d_point->row(1) = -gy * my * inv * d_den.transpose();
      (*d_point)(0, 0) += gx * inv;
      (*d_point)(1, 1) += gy * inv;
    }
    if (d_param) {
      detail::fill_linear_project_params<Scalar, N>(mx, my, *d_param);
      (*d_param)(0, 4) = -gx * mx * inv * d;
      (*d_param)(1, 4) = -gy * my * inv * d;
    }
    return Status::kOk;
  }

  Status unproject(const Vec2& u, Vec3& out, Mat32* d_pixel = nullptr,
                   Mat3N* d_param = nullptr) const {
    if (!in_theta(u)) return Status::kOutOfDomain;
    const Scalar& gx = param_[0];
    const Scalar& gy = param_[1];
    const Scalar mx = (u[0] - param_[2]) / gx;
    const Scalar my = (u[1] - param_[3]) / gy;

    const bool want = d_pixel || d_param;
    Mat32 d_m;
    Vec3 d_xi;
    detail::ucm_lift<Scalar>(mx, my, param_[4], out, want ? &d_m : nullptr,
                             want ? &d_xi : nullptr);
    if (want) {
      detail::chain_normalized<Scalar, N>(d_m, mx, my, gx, gy, d_pixel, d_param);
      if (d_param) d_param->col(4) = d_xi;
    }
    return Status::kOk;
  }

 private:
  VecN param_;
};

/// Exact conversion fx -> gamma = fx / (1 - alpha), xi = alpha / (1 - alpha).
template <typename Scalar>
UnifiedXiCamera<Scalar> ucm_alpha_to_xi(const UnifiedCamera<Scalar>& cam) {
  const auto& p = cam.params();
  const Scalar one_minus = Scalar(1) - p[4];
  if (!(one_minus > Scalar(0))) throw InvalidParameters("ucm_alpha_to_xi: alpha must be < 1");
  typename UnifiedXiCamera<Scalar>::VecN q;
  q << p[0] / one_minus, p[1] / one_minus, p[2], p[3], p[4] / one_minus;
  return UnifiedXiCamera<Scalar>(q);
}

/// Inverse conversion: alpha = xi / (1 + xi), f = gamma / (1 + xi).
template <typename Scalar>
UnifiedCamera<Scalar> ucm_xi_to_alpha(const UnifiedXiCamera<Scalar>& cam) {
  const auto& p = cam.params();
  const Scalar one_plus = Scalar(1) + p[4];
  typename UnifiedCamera<Scalar>::VecN q;
  q << p[0] / one_plus, p[1] / one_plus, p[2], p[3], p[4] / one_plus;
  return UnifiedCamera<Scalar>(q);
}

}  // namespace widecam
