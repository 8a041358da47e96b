#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <string_view>

#include <widecam/camera/common.hpp>
#include <widecam/errors.hpp>

namespace widecam {

/// Double Sphere camera model, intrinsics [fx, fy, cx, cy, xi, alpha].
///
/// A point is projected onto a unit sphere, then onto a second unit sphere whose
/// center is shifted by xi along z, and finally onto the image plane of a pinhole
/// camera shifted by alpha / (1 - alpha) from the second sphere:
///
///   d1 = |p|,  d2 = sqrt(x^2 + y^2 + (xi d1 + z)^2)
///   u  = fx x / (alpha d2 + (1 - alpha)(xi d1 + z)) + cx
///
/// Both directions are closed form. xi may be negative.
template <typename Scalar = double>
class DoubleSphereCamera {
 public:
  static constexpr int N = 6;
  static constexpr std::string_view kName = "ds";

  using Types = CameraTypes<Scalar, N>;
  using Vec2 = typename Types::Vec2;
  using Vec3 = typename Types::Vec3;
  using VecN = typename Types::VecN;
  using Mat23 = typename Types::Mat23;
  using Mat2N = typename Types::Mat2N;
  using Mat32 = typename Types::Mat32;
  using Mat3N = typename Types::Mat3N;

  explicit DoubleSphereCamera(const VecN& params) : param_(params) {
    if (auto why = check(params)) throw InvalidParameters("ds: " + *why);
    r2_max_ = boundary_radius2();
  }

  static std::optional<std::string> check(const VecN& p) {
    if (!p.allFinite()) return "non-finite parameter";
    if (!detail::focal_ok(p[0], p[1])) return "focal lengths must be positive";
    if (p[5] < Scalar(0) || p[5] > Scalar(1 - kAlphaEpsilon)) return "alpha outside [0, 1)";
    const Scalar w1 = detail::unified_w(p[5]);
    if (!(Scalar(1) + Scalar(2) * w1 * p[4] + p[4] * p[4] > Scalar(0))) {
      return "xi makes the second sphere degenerate";
    }
    return std::nullopt;
  }

  const VecN& params() const { return param_; }

  /// Visibility constant w2 of the set z > -w2 |p|.
  Scalar w2() const {
    const Scalar xi = param_[4];
    const Scalar w1 = detail::unified_w(param_[5]);
    return (w1 + xi) / std::sqrt(Scalar(2) * w1 * xi + xi * xi + Scalar(1));
  }

  bool in_omega(const Vec3& p) const {
    const Scalar& xi = param_[4];
    const Scalar& alpha = param_[5];
    const Scalar d1 = p.norm();
    if (!(d1 > Scalar(0))) return false;
    const Scalar eps = Scalar(kDomainEpsilon) * d1;
    if (!(p.z() + w2() * d1 > eps)) return false;
    const Scalar k = xi * d1 + p.z();
    const Scalar d2 = std::sqrt(p.x() * p.x() + p.y() * p.y() + k * k);
    return alpha * d2 + (Scalar(1) - alpha) * k > eps;
  }

  bool in_theta(const Vec2& u) const {
    if (!u.allFinite()) return false;
    const Scalar& xi = param_[4];
    const Scalar& alpha = param_[5];
    const Scalar mx = (u[0] - param_[2]) / param_[0];
    const Scalar my = (u[1] - param_[3]) / param_[1];
    const Scalar r2 = mx * mx + my * my;
    if (alpha > Scalar(0.5) && r2 > Scalar(1) / (Scalar(2) * alpha - Scalar(1))) return false;
    if (r2 > r2_max_) return false;
    if (std::abs(xi) > Scalar(1)) {
      // second square root must stay real
      const Scalar s = std::sqrt(Scalar(1) - (Scalar(2) * alpha - Scalar(1)) * r2);
      const Scalar mz = (Scalar(1) - alpha * alpha * r2) / (alpha * s + Scalar(1) - alpha);
      if (mz * mz + (Scalar(1) - xi * xi) * r2 < Scalar(0)) return false;
    }
    return true;
  }

  Status project(const Vec3& p, Vec2& out, Mat23* d_point = nullptr,
                 Mat2N* d_param = nullptr) const {
    if (!in_omega(p)) return Status::kOutOfDomain;
    const Scalar& fx = param_[0];
    const Scalar& fy = param_[1];
    const Scalar& xi = param_[4];
    const Scalar& alpha = param_[5];

    const Scalar d1 = p.norm();
    const Scalar k = xi * d1 + p.z();
    const Scalar d2 = std::sqrt(p.x() * p.x() + p.y() * p.y() + k * k);
    const Scalar den = alpha * d2 + (Scalar(1) - alpha) * k;
    const Scalar inv = Scalar(1) / den;
    const Scalar mx = p.x() * inv;
    const Scalar my = p.y() * inv;

    out[0] = fx * mx + param_[2];
    out[1] = fy * my + param_[3];

    if (d_point) {
      Vec3 d_k = (xi / d1) * p;
      d_k.z() += Scalar(1);
      const Vec3 d_d2 = (Vec3(p.x(), p.y(), Scalar(0)) + k * d_k) / d2;
      const Vec3 d_den = alpha * d_d2 + (Scalar(1) - alpha) * d_k;
      d_point->row(0) = -fx * mx * inv * d_den.transpose();
      d_point->row(1) = -fy * my * inv * d_den.transpose();
      (*d_point)(0, 0) += fx * inv;
      (*d_point)(1, 1) += fy * inv;
    }
    if (d_param) {
      detail::fill_linear_project_params<Scalar, N>(mx, my, *d_param);
      const Scalar dden_dxi = alpha * k * d1 / d2 + (Scalar(1) - alpha) * d1;
      const Scalar dden_dalpha = d2 - k;
      (*d_param)(0, 4) = -fx * mx * inv * dden_dxi;
      (*d_param)(1, 4) = -fy * my * inv * dden_dxi;
      (*d_param)(0, 5) = -fx * mx * inv * dden_dalpha;
      (*d_param)(1, 5) = -fy * my * inv * dden_dalpha;
    }
    return Status::kOk;
  }

  Status unproject(const Vec2& u, Vec3& out, Mat32* d_pixel = nullptr,
                   Mat3N* d_param = nullptr) const {
    if (!in_theta(u)) return Status::kOutOfDomain;
    const Scalar& fx = param_[0];
    const Scalar& fy = param_[1];
    const Scalar& xi = param_[4];
    const Scalar& alpha = param_[5];

    const Scalar mx = (u[0] - param_[2]) / fx;
    const Scalar my = (u[1] - param_[3]) / fy;
    const Scalar r2 = mx * mx + my * my;

    const Scalar s = std::sqrt(Scalar(1) - (Scalar(2) * alpha - Scalar(1)) * r2);
    const Scalar num = Scalar(1) - alpha * alpha * r2;
    const Scalar den = alpha * s + Scalar(1) - alpha;
    const Scalar mz = num / den;

    const Scalar sp = std::sqrt(mz * mz + (Scalar(1) - xi * xi) * r2);
    const Scalar inv_q = Scalar(1) / (mz * mz + r2);
    const Scalar f = (mz * xi + sp) * inv_q;

    out << f * mx, f * my, f * mz - xi;

    if (d_pixel || d_param) {
      const Scalar inv_den2 = Scalar(1) / (den * den);
      const Scalar ds_dr2 = -(Scalar(2) * alpha - Scalar(1)) / (Scalar(2) * s);
      const Scalar dmz_dr2 = (-alpha * alpha * den - num * alpha * ds_dr2) * inv_den2;

      const Scalar df_dmz = (xi + mz / sp) * inv_q - f * Scalar(2) * mz * inv_q;
      const Scalar df_dr2 = ((Scalar(1) - xi * xi) / (Scalar(2) * sp) - f) * inv_q;
      const Scalar df_dr2_total = df_dr2 + df_dmz * dmz_dr2;

      const Vec3 m(mx, my, mz);
      Mat32 d_m;
      for (int c = 0; c < 2; ++c) {
        const Scalar mc = c == 0 ? mx : my;
        d_m.col(c) = m * (Scalar(2) * mc * df_dr2_total);
        d_m(c, c) += f;
        d_m(2, c) += f * Scalar(2) * mc * dmz_dr2;
      }
      detail::chain_normalized<Scalar, N>(d_m, mx, my, fx, fy, d_pixel, d_param);

      if (d_param) {
        const Scalar df_dxi = (mz - xi * r2 / sp) * inv_q;
        d_param->col(4) = m * df_dxi;
        (*d_param)(2, 4) -= Scalar(1);

        const Scalar ds_dalpha = -r2 / s;
        const Scalar dnum_dalpha = -Scalar(2) * alpha * r2;
        const Scalar dden_dalpha = s + alpha * ds_dalpha - Scalar(1);
        const Scalar dmz_dalpha = (dnum_dalpha * den - num * dden_dalpha) * inv_den2;
        d_param->col(5) = m * (df_dmz * dmz_dalpha);
        (*d_param)(2, 5) += f * dmz_dalpha;
      }
    }
    return Status::kOk;
  }

 private:
  // Squared normalized radius of the image of the Omega boundary z = -w2 |p|.
  // With xi != 0 this circle lies inside the alpha bound; infinite when the
  // boundary maps to infinity.
  Scalar boundary_radius2() const {
    const Scalar& xi = param_[4];
    const Scalar& alpha = param_[5];
    const Scalar w = w2();
    if (!(w > Scalar(-1) && w < Scalar(1))) return std::numeric_limits<Scalar>::infinity();
    const Scalar x2 = Scalar(1) - w * w;
    const Scalar k = xi - w;
    const Scalar den = alpha * std::sqrt(x2 + k * k) + (Scalar(1) - alpha) * k;
    if (!(den > Scalar(0))) return std::numeric_limits<Scalar>::infinity();
    return x2 / (den * den);
  }

  VecN param_;
  Scalar r2_max_ = Scalar(0);
};

}  // namespace widecam
