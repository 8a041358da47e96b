#pragma once

#include <optional>
#include <string>
#include <string_view>

#include <widecam/camera/common.hpp>
#include <widecam/errors.hpp>

namespace widecam {

/// Pinhole camera, intrinsics [fx, fy, cx, cy].
///
/// Omega is the half space z > 0 and every pixel unprojects (Theta = R^2).
template <typename Scalar = double>
class PinholeCamera {
 public:
  static constexpr int N = 4;
  static constexpr std::string_view kName = "pinhole";

  using Types = CameraTypes<Scalar, N>;
  using Vec2 = typename Types::Vec2;
  using Vec3 = typename Types::Vec3;
  using VecN = typename Types::VecN;
  using Mat23 = typename Types::Mat23;
  using Mat2N = typename Types::Mat2N;
  using Mat32 = typename Types::Mat32;
  using Mat3N = typename Types::Mat3N;

  explicit PinholeCamera(const VecN& params) : param_(params) {
    if (auto why = check(params)) throw InvalidParameters("pinhole: " + *why);
  }

  static std::optional<std::string> check(const VecN& p) {
    if (!p.allFinite()) return "non-finite parameter";
    if (!detail::focal_ok(p[0], p[1])) return "focal lengths must be positive";
    return std::nullopt;
  }

  const VecN& params() const { return param_; }

  bool in_omega(const Vec3& p) const { return p.z() > Scalar(kDomainEpsilon) * p.norm(); }

  bool in_theta(const Vec2& u) const { return u.allFinite(); }

  Status project(const Vec3& p, Vec2& out, Mat23* d_point = nullptr,
                 Mat2N* d_param = nullptr) const {
    if (!in_omega(p)) return Status::kOutOfDomain;
    const Scalar& fx = param_[0];
    const Scalar& fy = param_[1];
    const Scalar iz = Scalar(1) / p.z();
    const Scalar mx = p.x() * iz;
    const Scalar my = p.y() * iz;

    out[0] = fx * mx + param_[2];
    out[1] = fy * my + param_[3];

    if (d_point) {
      *d_point << fx * iz, Scalar(0), -fx * mx * iz,  //
          Scalar(0), fy * iz, -fy * my * iz;
    }
    if (d_param) detail::fill_linear_project_params<Scalar, N>(mx, my, *d_param);
    return Status::kOk;
  }

  Status unproject(const Vec2& u, Vec3& out, Mat32* d_pixel = nullptr,
                   Mat3N* d_param = nullptr) const {
    if (!in_theta(u)) return Status::kOutOfDomain;
    const Scalar& fx = param_[0];
    const Scalar& fy = param_[1];
    const Scalar mx = (u[0] - param_[2]) / fx;
    const Scalar my = (u[1] - param_[3]) / fy;

    const Vec3 m(mx, my, Scalar(1));
    out = m.normalized();

    if (d_pixel || d_param) {
      const Mat32 d_m = detail::normalize_jacobian<Scalar>(m).template leftCols<2>();
      detail::chain_normalized<Scalar, N>(d_m, mx, my, fx, fy, d_pixel, d_param);
    }
    return Status::kOk;
  }

 private:
  VecN param_;
};

}  // namespace widecam
