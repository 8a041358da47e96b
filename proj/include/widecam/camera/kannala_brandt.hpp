#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>

#include <widecam/camera/common.hpp>
#include <widecam/errors.hpp>

namespace widecam {

/// Settings of the iterative inverse d(theta) = r.
struct KbSolveSettings {
  static constexpr double kTolerance = 1e-10;  // on |d(theta) - r|
  static constexpr int kMaxNewton = 25;
  static constexpr double kMinSlope = 1e-12;
  static constexpr int kMaxBisection = 200;
};

/// Kannala-Brandt camera with NumK polynomial coefficients, intrinsics
/// [fx, fy, cx, cy, k1, ..., kNumK] and
///
///   d(theta) = theta + k1 theta^3 + k2 theta^5 + ...
///   u = fx d(theta) x / r + cx,   r = sqrt(x^2 + y^2),   theta = atan2(r, z)
///
/// The projection is evaluated on (r, z) directly, so points with z <= 0 are
/// valid. NumK = 2 is the six-parameter variant, NumK = 4 the eight-parameter
/// one. The polynomial must be increasing on [0, kThetaMax]. If it turns over
/// before pi, angles past the stationary point are outside Omega.
template <typename Scalar = double, int NumK = 4>
class KannalaBrandtCamera {
  static_assert(NumK >= 1 && NumK <= 4);

 public:
  static constexpr int N = 4 + NumK;
  static constexpr std::string_view kName = NumK == 2 ? "kb6" : NumK == 4 ? "kb8" : "kb";
  static constexpr double kThetaMax = std::numbers::pi / 1.05;
  static constexpr int kMonotonicSamples = 256;

  using Types = CameraTypes<Scalar, N>;
  using Vec2 = typename Types::Vec2;
  using Vec3 = typename Types::Vec3;
  using VecN = typename Types::VecN;
  using Mat23 = typename Types::Mat23;
  using Mat2N = typename Types::Mat2N;
  using Mat32 = typename Types::Mat32;
  using Mat3N = typename Types::Mat3N;

  explicit KannalaBrandtCamera(const VecN& params) : param_(params) {
    if (auto why = check(params)) throw InvalidParameters(std::string(kName) + ": " + *why);
    theta_lim_ = monotone_limit(params);
    r_max_ = poly(theta_lim_);
  }

  static std::optional<std::string> check(const VecN& p) {
    if (!p.allFinite()) return "non-finite parameter";
    if (!detail::focal_ok(p[0], p[1])) return "focal lengths must be positive";
    for (int i = 0; i < kMonotonicSamples; ++i) {
      const Scalar theta = Scalar(kThetaMax) * Scalar(i) / Scalar(kMonotonicSamples - 1);
      if (!(poly_slope(p, theta) > Scalar(0))) return "d(theta) is not monotonic";
    }
    return std::nullopt;
  }

  const VecN& params() const { return param_; }

  /// d(theta) for the current coefficients.
  Scalar poly(Scalar theta) const { return poly(param_, theta); }
  Scalar poly_slope(Scalar theta) const { return poly_slope(param_, theta); }

  /// Largest incidence angle on which d is increasing (pi for most lenses).
  Scalar theta_limit() const { return theta_lim_; }

  /// Everything but the origin, minus the angles past theta_limit().
  bool in_omega(const Vec3& p) const {
    if (!p.allFinite() || !(p.squaredNorm() > Scalar(0))) return false;
    if (theta_lim_ >= Scalar(std::numbers::pi)) return true;
    return std::atan2(std::hypot(p.x(), p.y()), p.z()) < theta_lim_;
  }

  /// Radii beyond d(theta_limit()) have no preimage on the sphere.
  bool in_theta(const Vec2& u) const {
    if (!u.allFinite()) return false;
    const Scalar mx = (u[0] - param_[2]) / param_[0];
    const Scalar my = (u[1] - param_[3]) / param_[1];
    return std::sqrt(mx * mx + my * my) <= r_max_;
  }

  Status project(const Vec3& p, Vec2& out, Mat23* d_point = nullptr,
                 Mat2N* d_param = nullptr) const {
    if (!in_omega(p)) return Status::kOutOfDomain;
    const Scalar& fx = param_[0];
    const Scalar& fy = param_[1];
    const Scalar x = p.x(), y = p.y(), z = p.z();
    const Scalar r2 = x * x + y * y;
    const Scalar r = std::sqrt(r2);

    if (r == Scalar(0) && z < Scalar(0)) {
      // Negative optical axis: the image is the circle |m| = d(pi). Return its
      // point on the +u axis; the map is not differentiable here.
      if (d_point || d_param) return Status::kOutOfDomain;
      out << fx * r_max_ + param_[2], param_[3];
      return Status::kOk;
    }

    const Scalar theta = std::atan2(r, z);
    // theta / r, with its on-axis limit 1 / z
    const Scalar theta_over_r = r > Scalar(0) ? theta / r : Scalar(1) / z;
    const Scalar theta2 = theta * theta;
    const Scalar g = theta_over_r * poly_ratio(theta2);
    const Scalar mx = x * g;
    const Scalar my = y * g;

    out[0] = fx * mx + param_[2];
    out[1] = fy * my + param_[3];

    if (d_point) {
      const Scalar rho2 = r2 + z * z;
      const Scalar slope = poly_slope(theta);
      // (dg/dr) / r and dg/dz
      Scalar gr_over_r;
      if (z > Scalar(0) && r < Scalar(1e-4) * z) {
        gr_over_r = Scalar(2) * (param_[4] - Scalar(1) / Scalar(3)) / (z * z * z);
      } else {
        gr_over_r = (slope * z * r / rho2 - theta * poly_ratio(theta2)) / (r2 * r);
      }
      const Scalar gz = -slope / rho2;
      *d_point << fx * (g + x * x * gr_over_r), fx * x * y * gr_over_r, fx * x * gz,  //
          fy * x * y * gr_over_r, fy * (g + y * y * gr_over_r), fy * y * gz;
    }
    if (d_param) {
      detail::fill_linear_project_params<Scalar, N>(mx, my, *d_param);
      Scalar pw = theta_over_r * theta2;  // theta^(2j+1) / r
      for (int j = 0; j < NumK; ++j) {
        (*d_param)(0, 4 + j) = fx * x * pw;
        (*d_param)(1, 4 + j) = fy * y * pw;
        pw *= theta2;
      }
    }
    return Status::kOk;
  }

  Status unproject(const Vec2& u, Vec3& out, Mat32* d_pixel = nullptr,
                   Mat3N* d_param = nullptr) const {
    if (!in_theta(u)) return Status::kOutOfDomain;
    const Scalar& fx = param_[0];
    const Scalar& fy = param_[1];
    const Scalar mx = (u[0] - param_[2]) / fx;
    const Scalar my = (u[1] - param_[3]) / fy;
    const Scalar ru = std::sqrt(mx * mx + my * my);

    Scalar theta;
    if (!solve_theta(ru, theta)) return Status::kNoConvergence;

    const Scalar sin_t = std::sin(theta);
    const Scalar cos_t = std::cos(theta);
    // sin(theta) / ru and theta / ru; both tend to 1 at the center
    const Scalar h = ru > Scalar(0) ? sin_t / ru : Scalar(1);
    const Scalar t = ru > Scalar(0) ? theta / ru : Scalar(1);

    out << h * mx, h * my, cos_t;

    if (d_pixel || d_param) {
      const Scalar slope = poly_slope(theta);
      const Scalar dtheta_dru = Scalar(1) / slope;
      Scalar hr_over_r;
      if (ru < Scalar(1e-4)) {
        hr_over_r = -Scalar(2) * (param_[4] + Scalar(1) / Scalar(6));
      } else {
        hr_over_r = (cos_t * dtheta_dru * ru - sin_t) / (ru * ru * ru);
      }
      Mat32 d_m;
      d_m << h + mx * mx * hr_over_r, mx * my * hr_over_r,  //
          mx * my * hr_over_r, h + my * my * hr_over_r,     //
          -h * dtheta_dru * mx, -h * dtheta_dru * my;
      detail::chain_normalized<Scalar, N>(d_m, mx, my, fx, fy, d_pixel, d_param);

      if (d_param) {
        const Scalar theta2 = theta * theta;
        Scalar pw = theta2;  // theta^(2j)
        for (int j = 0; j < NumK; ++j) {
          // dtheta/dk = -theta^(2j+1) / d'(theta)
          const Scalar dtheta_dk_over_ru = -t * pw / slope;
          (*d_param)(0, 4 + j) = mx * cos_t * dtheta_dk_over_ru;
          (*d_param)(1, 4 + j) = my * cos_t * dtheta_dk_over_ru;
          (*d_param)(2, 4 + j) = sin_t * theta * pw / slope;
          pw *= theta2;
        }
      }
    }
    return Status::kOk;
  }

  /// Solves d(theta) = ru on [0, theta_limit()]: Newton from theta = ru,
  /// bisection fallback.
  bool solve_theta(Scalar ru, Scalar& theta) const {
    const Scalar tol = Scalar(KbSolveSettings::kTolerance);
    const Scalar pi = theta_lim_;
    theta = ru;
    bool fallback = !(theta >= Scalar(0) && theta <= pi);
    for (int it = 0; !fallback; ++it) {
      const Scalar g = poly(theta) - ru;
      if (std::abs(g) <= tol) return polish(ru, theta);
      if (it == KbSolveSettings::kMaxNewton) return false;
      const Scalar slope = poly_slope(theta);
      if (!(slope > Scalar(KbSolveSettings::kMinSlope))) {
        fallback = true;
        break;
      }
      theta -= g / slope;
      if (!(theta >= Scalar(0) && theta <= pi)) fallback = true;
    }

    Scalar lo = 0, hi = pi;
    if (poly(hi) - ru < Scalar(-tol)) return false;
    for (int it = 0; it < KbSolveSettings::kMaxBisection; ++it) {
      theta = Scalar(0.5) * (lo + hi);
      const Scalar g = poly(theta) - ru;
      if (std::abs(g) <= tol) return polish(ru, theta);
      (g < Scalar(0) ? lo : hi) = theta;
    }
    return false;
  }

 private:
  // One more Newton step once the tolerance is met, so that theta is accurate
  // to working precision rather than to the residual tolerance.
  bool polish(Scalar ru, Scalar& theta) const {
    const Scalar slope = poly_slope(theta);
    if (slope > Scalar(KbSolveSettings::kMinSlope)) {
      const Scalar next = theta - (poly(theta) - ru) / slope;
      if (next >= Scalar(0) && next <= theta_lim_) theta = next;
    }
    return true;
  }

  // First stationary point of d in (kThetaMax, pi], or pi.
  static Scalar monotone_limit(const VecN& p) {
    const Scalar pi = Scalar(std::numbers::pi);
    Scalar prev = Scalar(kThetaMax);
    for (int i = 1; i <= kMonotonicSamples; ++i) {
      const Scalar t = Scalar(kThetaMax) + (pi - Scalar(kThetaMax)) * Scalar(i) /
                                               Scalar(kMonotonicSamples);
      if (!(poly_slope(p, t) > Scalar(0))) {
        Scalar lo = prev, hi = t;
        for (int it = 0; it < 60; ++it) {
          const Scalar mid = Scalar(0.5) * (lo + hi);
          (poly_slope(p, mid) > Scalar(0) ? lo : hi) = mid;
        }
        return lo;
      }
      prev = t;
    }
    return pi;
  }

  // 1 + k1 t + k2 t^2 + ... with t = theta^2
  Scalar poly_ratio(Scalar theta2) const {
    Scalar acc = Scalar(0);
    for (int j = NumK - 1; j >= 0; --j) acc = acc * theta2 + param_[4 + j];
    return Scalar(1) + acc * theta2;
  }

  static Scalar poly(const VecN& p, Scalar theta) {
    const Scalar theta2 = theta * theta;
    Scalar acc = Scalar(0);
    for (int j = NumK - 1; j >= 0; --j) acc = acc * theta2 + p[4 + j];
    return theta * (Scalar(1) + acc * theta2);
  }

  static Scalar poly_slope(const VecN& p, Scalar theta) {
    const Scalar theta2 = theta * theta;
    Scalar acc = Scalar(0);
    for (int j = NumK - 1; j >= 0; --j) acc = acc * theta2 + Scalar(2 * j + 3) * p[4 + j];
    return Scalar(1) + acc * theta2;
  }

  VecN param_;
  Scalar theta_lim_ = Scalar(0);
  Scalar r_max_ = Scalar(0);
};

template <typename Scalar = double>
using KannalaBrandt6Camera = KannalaBrandtCamera<Scalar, 2>;
template <typename Scalar = double>
using KannalaBrandt8Camera = KannalaBrandtCamera<Scalar, 4>;

}  // namespace widecam
