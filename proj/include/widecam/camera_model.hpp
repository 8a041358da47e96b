#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <variant>

#include <Eigen/Core>

#include <widecam/camera/common.hpp>
#include <widecam/camera/double_sphere.hpp>
#include <widecam/camera/extended_unified.hpp>
#include <widecam/camera/field_of_view.hpp>
#include <widecam/camera/kannala_brandt.hpp>
#include <widecam/camera/pinhole.hpp>
#include <widecam/camera/unified.hpp>
#include <widecam/errors.hpp>
#include <widecam/geometry.hpp>

namespace widecam {

/// Order matches the alternatives of CameraModel::Variant.
enum class ModelKind { kPinhole, kUcm, kUcmXi, kEucm, kKb6, kKb8, kFov, kDs };

inline constexpr std::array<ModelKind, 8> kAllModelKinds = {
    ModelKind::kPinhole, ModelKind::kUcm, ModelKind::kUcmXi, ModelKind::kEucm,
    ModelKind::kKb6,     ModelKind::kKb8, ModelKind::kFov,   ModelKind::kDs};

inline std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kPinhole: return PinholeCamera<>::kName;
    case ModelKind::kUcm: return UnifiedCamera<>::kName;
    case ModelKind::kUcmXi: return UnifiedXiCamera<>::kName;
    case ModelKind::kEucm: return ExtendedUnifiedCamera<>::kName;
    case ModelKind::kKb6: return KannalaBrandt6Camera<>::kName;
    case ModelKind::kKb8: return KannalaBrandt8Camera<>::kName;
    case ModelKind::kFov: return FovCamera<>::kName;
    case ModelKind::kDs: return DoubleSphereCamera<>::kName;
  }
  return "unknown";
}

/// Throws std::invalid_argument for unknown names.
inline ModelKind parse_model_kind(std::string_view name) {
  for (ModelKind k : kAllModelKinds) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown camera model '" + std::string(name) + "'");
}

inline int num_params(ModelKind kind) {
  switch (kind) {
    case ModelKind::kPinhole: return 4;
    case ModelKind::kUcm:
    case ModelKind::kUcmXi:
    case ModelKind::kFov: return 5;
    case ModelKind::kEucm:
    case ModelKind::kKb6:
    case ModelKind::kDs: return 6;
    case ModelKind::kKb8: return 8;
  }
  return 0;
}

struct ProjectJacobians {
  Vec2 pixel;
  Eigen::Matrix<double, 2, 3> d_point;
  Eigen::MatrixXd d_param;  // 2 x num_params
};

struct UnprojectJacobians {
  Vec3 bearing;
  Eigen::Matrix<double, 3, 2> d_pixel;
  Eigen::MatrixXd d_param;  // 3 x num_params
};

/// Any of the supported camera models together with its image size.
class CameraModel {
 public:
  using Variant =
      std::variant<PinholeCamera<>, UnifiedCamera<>, UnifiedXiCamera<>, ExtendedUnifiedCamera<>,
                   KannalaBrandt6Camera<>, KannalaBrandt8Camera<>, FovCamera<>,
                   DoubleSphereCamera<>>;

  /// Unit-focal pinhole placeholder.
  CameraModel() : model_(PinholeCamera<>(PinholeCamera<>::VecN(1.0, 1.0, 0.0, 0.0))) {}

  template <typename Model>
    requires std::is_constructible_v<Variant, Model>
  CameraModel(Model model, int width = 0, int height = 0)  // NOLINT(google-explicit-constructor)
      : model_(std::move(model)), width_(width), height_(height) {}

  /// Throws InvalidParameters if the vector has the wrong size or violates the
  /// model invariants.
  static CameraModel create(ModelKind kind, const Eigen::VectorXd& params, int width = 0,
                            int height = 0) {
    if (params.size() != widecam::num_params(kind)) {
      throw InvalidParameters(std::string(to_string(kind)) + ": expected " +
                              std::to_string(widecam::num_params(kind)) + " intrinsics, got " +
                              std::to_string(params.size()));
    }
    switch (kind) {
      case ModelKind::kPinhole: return {PinholeCamera<>(params), width, height};
      case ModelKind::kUcm: return {UnifiedCamera<>(params), width, height};
      case ModelKind::kUcmXi: return {UnifiedXiCamera<>(params), width, height};
      case ModelKind::kEucm: return {ExtendedUnifiedCamera<>(params), width, height};
      case ModelKind::kKb6: return {KannalaBrandt6Camera<>(params), width, height};
      case ModelKind::kKb8: return {KannalaBrandt8Camera<>(params), width, height};
      case ModelKind::kFov: return {FovCamera<>(params), width, height};
      case ModelKind::kDs: return {DoubleSphereCamera<>(params), width, height};
    }
    throw InvalidParameters("unknown model kind");
  }

  ModelKind kind() const { return static_cast<ModelKind>(model_.index()); }
  std::string_view name() const { return to_string(kind()); }
  int num_params() const { return widecam::num_params(kind()); }
  int width() const { return width_; }
  int height() const { return height_; }

  Eigen::VectorXd params() const {
    return std::visit([](const auto& m) -> Eigen::VectorXd { return m.params(); }, model_);
  }

  CameraModel with_params(const Eigen::VectorXd& params) const {
    return create(kind(), params, width_, height_);
  }

  const Variant& variant() const { return model_; }

  template <typename F>
  decltype(auto) visit(F&& f) const {
    return std::visit(std::forward<F>(f), model_);
  }

  bool in_omega(const Vec3& p) const {
    return std::visit([&](const auto& m) { return m.in_omega(p); }, model_);
  }

  bool in_theta(const Vec2& u) const {
    return std::visit([&](const auto& m) { return m.in_theta(u); }, model_);
  }

  /// Non-throwing projection.
  Status try_project(const Vec3& p, Vec2& out) const {
    return std::visit([&](const auto& m) { return m.project(p, out); }, model_);
  }

  /// Non-throwing unprojection.
  Status try_unproject(const Vec2& u, Vec3& out) const {
    return std::visit([&](const auto& m) { return m.unproject(u, out); }, model_);
  }

  Vec2 project(const Vec3& p) const {
    Vec2 out;
    raise(try_project(p, out), "project");
    return out;
  }

  Vec3 unproject(const Vec2& u) const {
    Vec3 out;
    raise(try_unproject(u, out), "unproject");
    return out;
  }

  ProjectJacobians project_jacobians(const Vec3& p) const {
    return std::visit(
        [&](const auto& m) {
          using M = std::decay_t<decltype(m)>;
          typename M::Mat2N d_param;
          ProjectJacobians res;
          raise(m.project(p, res.pixel, &res.d_point, &d_param), "project_jacobians");
          res.d_param = d_param;
          return res;
        },
        model_);
  }

  UnprojectJacobians unproject_jacobians(const Vec2& u) const {
    return std::visit(
        [&](const auto& m) {
          using M = std::decay_t<decltype(m)>;
          typename M::Mat3N d_param;
          UnprojectJacobians res;
          raise(m.unproject(u, res.bearing, &res.d_pixel, &d_param), "unproject_jacobians");
          res.d_param = d_param;
          return res;
        },
        model_);
  }

 private:
  void raise(Status s, const char* what) const {
    if (s == Status::kOk) return;
    const std::string where = std::string(name()) + " " + what;
    if (s == Status::kNoConvergence) throw ConvergenceError(where + ": inverse did not converge");
    throw DomainError(where + ": argument outside the valid domain");
  }

  Variant model_;
  int width_ = 0;
  int height_ = 0;
};

/// Rewrites a UCM in the mirror parametrization (ucm -> ucm_xi) or back.
inline CameraModel convert_ucm(const CameraModel& m) {
  if (const auto* a = std::get_if<UnifiedCamera<>>(&m.variant())) {
    return {ucm_alpha_to_xi(*a), m.width(), m.height()};
  }
  if (const auto* x = std::get_if<UnifiedXiCamera<>>(&m.variant())) {
    return {ucm_xi_to_alpha(*x), m.width(), m.height()};
  }
  throw InvalidParameters("convert_ucm: not a unified camera model");
}

struct ReductionResult {
  double max_deviation_px = 0.0;
  int evaluated = 0;
};

/// Largest pixel difference between two models over a 50 x 50 grid of bearings
/// (polar angle x azimuth), restricted to bearings valid for both.
inline ReductionResult model_reduction_check(const CameraModel& general,
                                             const CameraModel& special, int grid = 50) {
  ReductionResult res;
  for (int i = 0; i < grid; ++i) {
    const double theta = std::numbers::pi * (i + 0.5) / grid;
    for (int j = 0; j < grid; ++j) {
      const double phi = 2.0 * std::numbers::pi * j / grid;
      const Vec3 b(std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi),
                   std::cos(theta));
      Vec2 pg, ps;
      if (general.try_project(b, pg) != Status::kOk) continue;
      if (special.try_project(b, ps) != Status::kOk) continue;
      res.max_deviation_px = std::max(res.max_deviation_px, (pg - ps).norm());
      ++res.evaluated;
    }
  }
  return res;
}

}  // namespace widecam
