#pragma once

#include <Eigen/Core>

#include <widecam/camera_model.hpp>

namespace widecam {

inline constexpr int kPresetWidth = 1280;
inline constexpr int kPresetHeight = 1024;

/// Intrinsics fitted to real fisheye lenses on a 1280 x 1024 sensor
/// (BF2M2020S23 unless noted); the pinhole covers the same image.
inline CameraModel preset_camera(ModelKind kind) {
  auto make = [&](std::initializer_list<double> v) {
    Eigen::VectorXd p(static_cast<Eigen::Index>(v.size()));
    int i = 0;
    for (double x : v) p[i++] = x;
    return CameraModel::create(kind, p, kPresetWidth, kPresetHeight);
  };
  switch (kind) {
    case ModelKind::kPinhole: return make({460.0, 460.0, 640.0, 512.0});
    case ModelKind::kUcm: return make({377.60, 377.48, 638.74, 514.00, 0.64});
    case ModelKind::kUcmXi: return make({1041.97, 1041.63, 638.74, 514.00, 1.76});
    case ModelKind::kEucm: return make({380.95, 380.94, 638.66, 514.37, 0.63, 1.04});
    // The BF2M2020S23 KB6 fit turns over at 125 degrees, so this is the GoPro fit.
    case ModelKind::kKb6: return make({500.92, 500.96, 621.10, 513.26, -0.02, 0.00});
    // BM2820: the only lens with all four coefficients visibly non-zero.
    case ModelKind::kKb8: return make({530.35, 530.44, 624.29, 512.48, -0.01, 0.02, -0.02, 0.01});
    case ModelKind::kFov: return make({352.58, 352.72, 638.23, 513.08, 0.93});
    case ModelKind::kDs: return make({313.21, 313.21, 638.66, 514.39, -0.18, 0.59});
  }
  throw InvalidParameters("unknown model kind");
}

}  // namespace widecam
