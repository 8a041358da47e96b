#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include <widecam/camera_model.hpp>
#include <widecam/errors.hpp>
#include <widecam/geometry.hpp>

namespace widecam {

enum class BenchOp { kProject, kProjectJacobians, kUnproject, kUnprojectJacobians };

inline constexpr std::array<BenchOp, 4> kBenchOps = {
    BenchOp::kProject, BenchOp::kProjectJacobians, BenchOp::kUnproject,
    BenchOp::kUnprojectJacobians};

inline std::string_view to_string(BenchOp op) {
  switch (op) {
    case BenchOp::kProject: return "project";
    case BenchOp::kProjectJacobians: return "project+J";
    case BenchOp::kUnproject: return "unproject";
    case BenchOp::kUnprojectJacobians: return "unproject+J";
  }
  return "unknown";
}

struct BenchConfig {
  int samples = 10000;
  int repeats = 11;
  std::uint64_t seed = 1;
  /// KB8 projection slower than this multiple of EUCM projection is expected;
  /// anything less only produces a warning.
  double kb8_eucm_ratio = 3.0;

  void check() const {
    if (samples < 1) throw InvalidParameters("bench: samples must be positive");
    if (repeats < 11) throw InvalidParameters("bench: at least 11 repeats are required");
  }
};

/// Timings are microseconds for all samples of one repeat.
struct BenchCell {
  double median_us = 0.0;
  double min_us = 0.0;
  double max_us = 0.0;
  double checksum = 0.0;
};

struct BenchModelResult {
  CameraModel camera;
  std::array<BenchCell, 4> cells;

  const BenchCell& cell(BenchOp op) const { return cells[static_cast<int>(op)]; }
};

struct BenchReport {
  std::vector<BenchModelResult> models;
  int samples = 0;
  int repeats = 0;
  BenchCell harness;     // timed region with an empty body: timer reads and call
  BenchCell empty_loop;  // bare loop over the samples, reported only
  BenchCell identity;    // model stub that copies its input
  std::vector<std::string> warnings;

  double fastest_cell_us() const {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& m : models) {
      for (const auto& c : m.cells) best = std::min(best, c.median_us);
    }
    return best;
  }

  /// Harness time as a fraction of the fastest real cell. A cell times one
  /// pass of all samples, so the loop over them is part of the measured work.
  double baseline_overhead() const { return harness.median_us / fastest_cell_us(); }
};

/// Inputs for one model: points in Omega whose images fall inside Theta and
/// inside the image, and those images.
struct BenchSamples {
  std::vector<Vec3> points;
  std::vector<Vec2> pixels;
};

inline BenchSamples bench_samples(const CameraModel& cam, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> depth(0.5, 5.0);
  const bool bounded = cam.width() > 0 && cam.height() > 0;
  BenchSamples s;
  s.points.reserve(static_cast<std::size_t>(n));
  s.pixels.reserve(static_cast<std::size_t>(n));
  long attempts = 0;
  while (static_cast<int>(s.points.size()) < n) {
    if (++attempts > 1000L * n + 100000L) {
      throw DomainError(std::string(cam.name()) + ": cannot sample benchmark inputs");
    }
    Vec3 p(normal(rng), normal(rng), normal(rng));
    if (p.norm() < 1e-6) continue;
    p = p.normalized() * depth(rng);
    Vec2 u;
    if (!cam.in_omega(p) || cam.try_project(p, u) != Status::kOk || !cam.in_theta(u)) continue;
    if (bounded && (u.x() < 0 || u.y() < 0 || u.x() > cam.width() || u.y() > cam.height())) {
      continue;
    }
    Vec3 back;
    if (cam.try_unproject(u, back) != Status::kOk) continue;
    s.points.push_back(p);
    s.pixels.push_back(u);
  }
  return s;
}

namespace detail {

template <typename T>
inline void keep(T& value) {
  asm volatile("" : "+m"(value) : : "memory");
}

template <typename Clock = std::chrono::steady_clock>
inline double elapsed_us(typename Clock::time_point t0, typename Clock::time_point t1) {
  return std::chrono::duration<double, std::micro>(t1 - t0).count();
}

inline std::size_t output_stride(BenchOp op, int num_params) {
  switch (op) {
    case BenchOp::kProject: return 2;
    case BenchOp::kProjectJacobians: return 2 + 6 + 2 * static_cast<std::size_t>(num_params);
    case BenchOp::kUnproject: return 3;
    case BenchOp::kUnprojectJacobians: return 3 + 6 + 3 * static_cast<std::size_t>(num_params);
  }
  return 0;
}

template <typename Derived>
inline double* store(double* out, const Eigen::MatrixBase<Derived>& m) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) *out++ = m(r, c);
  }
  return out;
}

// One pass over the samples; outputs go to a buffer that is summed afterwards,
// so the timed loop carries no accumulation chain.
template <typename M>
inline void run_kernel(const M& m, BenchOp op, const BenchSamples& s, std::vector<double>& out) {
  using Mat23 = Eigen::Matrix<double, 2, 3>;
  using Mat32 = Eigen::Matrix<double, 3, 2>;
  double* o = out.data();
  const std::size_t n = s.points.size();
  switch (op) {
    case BenchOp::kProject:
      for (std::size_t i = 0; i < n; ++i) {
        Vec2 u;
        m.project(s.points[i], u);
        o = store(o, u);
      }
      break;
    case BenchOp::kProjectJacobians:
      for (std::size_t i = 0; i < n; ++i) {
        Vec2 u;
        Mat23 dp;
        typename M::Mat2N di;
        m.project(s.points[i], u, &dp, &di);
        o = store(store(store(o, u), dp), di);
      }
      break;
    case BenchOp::kUnproject:
      for (std::size_t i = 0; i < n; ++i) {
        Vec3 b;
        m.unproject(s.pixels[i], b);
        o = store(o, b);
      }
      break;
    case BenchOp::kUnprojectJacobians:
      for (std::size_t i = 0; i < n; ++i) {
        Vec3 b;
        Mat32 du;
        typename M::Mat3N di;
        m.unproject(s.pixels[i], b, &du, &di);
        o = store(store(store(o, b), du), di);
      }
      break;
  }
  keep(out.front());
}

inline double buffer_sum(const std::vector<double>& v) {
  double sum = 0.0;
  for (double x : v) sum += x;
  return sum;
}

template <typename Body>
inline BenchCell time_repeats(int repeats, Body&& body) {
  using Clock = std::chrono::steady_clock;
  body();  // warm-up
  std::vector<double> t(static_cast<std::size_t>(repeats));
  for (auto& x : t) {
    const auto t0 = Clock::now();
    body();
    const auto t1 = Clock::now();
    x = elapsed_us<Clock>(t0, t1);
  }
  std::sort(t.begin(), t.end());
  BenchCell c;
  c.min_us = t.front();
  c.max_us = t.back();
  c.median_us = t[t.size() / 2];
  return c;
}

}  // namespace detail

/// Same quantity as BenchCell::checksum, evaluated sample by sample through
/// the type-erased CameraModel interface.
inline double reference_checksum(const CameraModel& cam, BenchOp op, const BenchSamples& s) {
  std::vector<double> out;
  out.reserve(s.points.size() * detail::output_stride(op, cam.num_params()));
  auto push = [&](const auto& m) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(m(r, c));
    }
  };
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    switch (op) {
      case BenchOp::kProject: push(cam.project(s.points[i])); break;
      case BenchOp::kProjectJacobians: {
        const ProjectJacobians j = cam.project_jacobians(s.points[i]);
        push(j.pixel);
        push(j.d_point);
        push(j.d_param);
        break;
      }
      case BenchOp::kUnproject: push(cam.unproject(s.pixels[i])); break;
      case BenchOp::kUnprojectJacobians: {
        const UnprojectJacobians j = cam.unproject_jacobians(s.pixels[i]);
        push(j.bearing);
        push(j.d_pixel);
        push(j.d_param);
        break;
      }
    }
  }
  return detail::buffer_sum(out);
}

inline BenchReport run_bench(const std::vector<CameraModel>& cameras, const BenchConfig& cfg = {}) {
  cfg.check();
  BenchReport rep;
  rep.samples = cfg.samples;
  rep.repeats = cfg.repeats;

  std::vector<double> out;
  for (std::size_t k = 0; k < cameras.size(); ++k) {
    const CameraModel& cam = cameras[k];
    const BenchSamples s = bench_samples(cam, cfg.samples, cfg.seed + k);
    BenchModelResult res{cam, {}};
    for (BenchOp op : kBenchOps) {
      out.assign(s.points.size() * detail::output_stride(op, cam.num_params()), 0.0);
      BenchCell& cell = res.cells[static_cast<int>(op)];
      cell = cam.visit([&](const auto& m) {
        return detail::time_repeats(cfg.repeats, [&] { detail::run_kernel(m, op, s, out); });
      });
      cell.checksum = detail::buffer_sum(out);
    }
    rep.models.push_back(std::move(res));
  }

  const std::size_t n = static_cast<std::size_t>(cfg.samples);
  rep.harness = detail::time_repeats(cfg.repeats, [] { asm volatile(""); });
  rep.empty_loop = detail::time_repeats(cfg.repeats, [&] {
    for (std::size_t i = 0; i < n; ++i) asm volatile("" : : "r"(i));
  });
  {
    std::vector<Vec3> points(n, Vec3(0.1, 0.2, 1.0));
    out.assign(2 * n, 0.0);
    rep.identity = detail::time_repeats(cfg.repeats, [&] {
      double* o = out.data();
      for (std::size_t i = 0; i < n; ++i) o = detail::store(o, points[i].head<2>());
      detail::keep(out.front());
    });
    rep.identity.checksum = detail::buffer_sum(out);
  }

  const BenchModelResult* eucm = nullptr;
  const BenchModelResult* kb8 = nullptr;
  for (const auto& m : rep.models) {
    if (m.camera.kind() == ModelKind::kEucm) eucm = &m;
    if (m.camera.kind() == ModelKind::kKb8) kb8 = &m;
  }
  if (eucm != nullptr && kb8 != nullptr) {
    const double ratio = kb8->cell(BenchOp::kProject).median_us /
                         eucm->cell(BenchOp::kProject).median_us;
    if (ratio < cfg.kb8_eucm_ratio) {
      std::ostringstream w;
      w << "kb8 projection is only " << std::fixed << std::setprecision(2) << ratio
        << "x eucm projection (expected >= " << cfg.kb8_eucm_ratio << "x)";
      rep.warnings.push_back(w.str());
    }
  }
  return rep;
}

/// Rows are operations, columns are models; cells are median microseconds.
inline std::string bench_csv(const BenchReport& rep) {
  std::ostringstream os;
  os << "operation";
  for (const auto& m : rep.models) os << ',' << m.camera.name();
  os << '\n' << std::setprecision(6);
  for (BenchOp op : kBenchOps) {
    os << to_string(op);
    for (const auto& m : rep.models) os << ',' << m.cell(op).median_us;
    os << '\n';
  }
  return os.str();
}

inline std::string bench_table(const BenchReport& rep) {
  std::ostringstream os;
  os << "Median microseconds per " << rep.samples << " calls (" << rep.repeats
     << " repeats, min-max in brackets)\n";
  os << std::left << std::setw(13) << "operation";
  for (const auto& m : rep.models) os << std::right << std::setw(24) << m.camera.name();
  os << '\n' << std::fixed << std::setprecision(1);
  for (BenchOp op : kBenchOps) {
    os << std::left << std::setw(13) << to_string(op) << std::right;
    for (const auto& m : rep.models) {
      const BenchCell& c = m.cell(op);
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(1) << c.median_us << " [" << c.min_us << '-'
           << c.max_us << ']';
      os << std::setw(24) << cell.str();
    }
    os << '\n';
  }
  os << std::setprecision(3) << "harness " << rep.harness.median_us << " us ("
     << 100.0 * rep.baseline_overhead() << "% of fastest cell), bare sample loop "
     << rep.empty_loop.median_us << " us, identity stub " << rep.identity.median_us << " us\n";
  for (const auto& w : rep.warnings) os << "warning: " << w << '\n';
  return os.str();
}

}  // namespace widecam
