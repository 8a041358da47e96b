#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <widecam/camera_model.hpp>
#include <widecam/dataset.hpp>
#include <widecam/errors.hpp>
#include <widecam/solver.hpp>

namespace widecam {

/// Column order of the usual comparison table.
inline const std::vector<ModelKind>& default_compare_models() {
  static const std::vector<ModelKind> kinds = {ModelKind::kUcm,  ModelKind::kFov,
                                               ModelKind::kDs,   ModelKind::kEucm,
                                               ModelKind::kKb6,  ModelKind::kKb8};
  return kinds;
}

/// status is one of best, second, ok, not_converged or failed. Only
/// converged rows are ranked; failed rows have no mean.
struct CompareRow {
  ModelKind kind = ModelKind::kPinhole;
  double mean_px = std::numeric_limits<double>::quiet_NaN();
  double overhead_pct = std::numeric_limits<double>::quiet_NaN();
  std::string status;
  std::string detail;  // solver stop reason or error message
  std::optional<CalibResult> result;
};

struct CompareReport {
  std::vector<CompareRow> rows;

  bool any_converged() const {
    return std::any_of(rows.begin(), rows.end(), [](const auto& r) {
      return r.status == "best" || r.status == "second" || r.status == "ok";
    });
  }
};

/// Overhead relative to the best converged model, (c - b) / b * 100.
inline void rank_rows(std::vector<CompareRow>& rows) {
  std::vector<CompareRow*> ranked;
  for (auto& r : rows) {
    if (r.status == "ok") ranked.push_back(&r);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto* a, const auto* b) { return a->mean_px < b->mean_px; });
  if (ranked.empty()) return;
  const double best = ranked.front()->mean_px;
  for (auto& r : rows) {
    if (r.status == "failed") continue;
    r.overhead_pct = best > 0.0 ? (r.mean_px - best) / best * 100.0 : (r.mean_px > best ? 100.0 : 0.0);
  }
  ranked[0]->status = "best";
  if (ranked.size() > 1) ranked[1]->status = "second";
}

/// Calibrates every model on the same detections. Errors become failed rows.
inline CompareReport compare_models(const DetectionSet& det, const std::vector<ModelKind>& kinds,
                                    const SolverConfig& cfg = {}) {
  CompareReport rep;
  for (ModelKind kind : kinds) {
    CompareRow row;
    row.kind = kind;
    try {
      CalibResult res = calibrate(det, kind, cfg);
      row.mean_px = res.mean_px;
      row.status = res.converged ? "ok" : "not_converged";
      row.detail = res.reason;
      row.result = std::move(res);
    } catch (const Error& e) {
      row.status = "failed";
      row.detail = e.what();
    }
    rep.rows.push_back(std::move(row));
  }
  rank_rows(rep.rows);
  return rep;
}

inline std::string compare_csv(const CompareReport& rep) {
  std::ostringstream os;
  os << "model,mean_px,overhead_pct,status\n";
  for (const auto& r : rep.rows) {
    os << to_string(r.kind) << ',';
    if (std::isfinite(r.mean_px)) os << std::setprecision(9) << r.mean_px;
    os << ',';
    if (std::isfinite(r.overhead_pct)) os << std::fixed << std::setprecision(2) << r.overhead_pct;
    os.unsetf(std::ios::floatfield);
    os << ',' << r.status << '\n';
  }
  return os.str();
}

inline std::string compare_table(const CompareReport& rep) {
  std::ostringstream os;
  os << std::left << std::setw(9) << "model" << std::right << std::setw(14) << "mean [px]"
     << std::setw(12) << "overhead" << "  status\n";
  for (const auto& r : rep.rows) {
    os << std::left << std::setw(9) << to_string(r.kind) << std::right << std::fixed;
    if (std::isfinite(r.mean_px)) {
      os << std::setw(14) << std::setprecision(6) << r.mean_px;
    } else {
      os << std::setw(14) << "-";
    }
    if (std::isfinite(r.overhead_pct)) {
      std::ostringstream pct;
      pct << std::fixed << std::setprecision(2) << r.overhead_pct << '%';
      os << std::setw(12) << pct.str();
    } else {
      os << std::setw(12) << "-";
    }
    os << "  " << r.status;
    if (r.status == "failed" || r.status == "not_converged") os << " (" << r.detail << ')';
    os << '\n';
  }
  return os.str();
}

namespace detail {

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

/// Detected corners as hollow circles, reprojections as filled dots joined to
/// their detection by a line. User units are pixels.
inline std::string reprojection_svg(const DetectionSet& det, const CameraModel& cam,
                                    const Pose& pose, int image_id) {
  const auto it = std::find_if(det.images.begin(), det.images.end(),
                               [&](const auto& im) { return im.id == image_id; });
  if (it == det.images.end()) {
    throw SchemaError("detections: no image with id " + std::to_string(image_id));
  }
  int width = det.width > 0 ? det.width : cam.width();
  int height = det.height > 0 ? det.height : cam.height();
  if (width <= 0 || height <= 0) {
    for (const auto& c : it->corners) {
      width = std::max(width, static_cast<int>(std::ceil(c.pixel.x())));
      height = std::max(height, static_cast<int>(std::ceil(c.pixel.y())));
    }
  }

  std::ostringstream dots, marks, lines;
  dots << std::setprecision(12);
  marks << std::setprecision(12);
  lines << std::setprecision(12);
  double sum = 0.0;
  int n = 0;
  for (const auto& c : it->corners) {
    marks << "  <circle class=\"detected\" cx=\"" << c.pixel.x() << "\" cy=\"" << c.pixel.y()
          << "\" r=\"4\"/>\n";
    const Vec3 x = pose * det.board.corner(c.id);
    Vec2 u;
    if (!cam.in_omega(x) || cam.try_project(x, u) != Status::kOk) continue;
    dots << "  <circle class=\"reprojected\" cx=\"" << u.x() << "\" cy=\"" << u.y()
         << "\" r=\"1.5\"/>\n";
    lines << "  <line class=\"residual\" x1=\"" << c.pixel.x() << "\" y1=\"" << c.pixel.y()
          << "\" x2=\"" << u.x() << "\" y2=\"" << u.y() << "\"/>\n";
    sum += (u - c.pixel).norm();
    ++n;
  }

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"no\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width
     << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
     << "<style>.detected{fill:none;stroke:#7b2cbf;stroke-width:1}"
     << ".reprojected{fill:#e36414}.residual{stroke:#e36414;stroke-width:1}</style>\n"
     << "<rect class=\"frame\" x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
     << "\" fill=\"white\" stroke=\"black\" stroke-width=\"2\"/>\n";
  std::ostringstream title;
  title << cam.name() << ", image " << image_id << ", " << n << " corners, mean "
        << std::setprecision(4) << (n > 0 ? sum / n : 0.0) << " px";
  os << "<text x=\"10\" y=\"24\" font-family=\"sans-serif\" font-size=\"18\">"
     << detail::xml_escape(title.str()) << "</text>\n"
     << "<g id=\"residuals\">\n" << lines.str() << "</g>\n"
     << "<g id=\"detected\">\n" << marks.str() << "</g>\n"
     << "<g id=\"reprojected\">\n" << dots.str() << "</g>\n"
     << "</svg>\n";
  return os.str();
}

}  // namespace widecam
