#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <widecam/camera_model.hpp>
#include <widecam/errors.hpp>
#include <widecam/geometry.hpp>
#include <widecam/io.hpp>

namespace widecam {

inline constexpr const char* kDetectionsSchema = "calib-detections-v1";

/// Planar grid target. Corner k = row * cols + col sits at (col s, row s, 0).
struct BoardGeometry {
  int rows = 6;
  int cols = 6;
  double spacing = 0.05;

  int num_corners() const { return rows * cols; }

  Vec3 corner(int k) const { return {(k % cols) * spacing, (k / cols) * spacing, 0.0}; }

  Vec3 center() const { return {0.5 * (cols - 1) * spacing, 0.5 * (rows - 1) * spacing, 0.0}; }

  double diagonal() const { return spacing * std::hypot(cols - 1, rows - 1); }

  std::optional<std::string> check() const {
    if (rows < 2 || cols < 2) return "board needs at least 2 rows and 2 columns";
    if (!(spacing > 0.0) || !std::isfinite(spacing)) return "board spacing must be positive";
    return std::nullopt;
  }

  bool operator==(const BoardGeometry&) const = default;
};

struct CornerObservation {
  int id = 0;
  Vec2 pixel = Vec2::Zero();
};

struct ImageDetections {
  int id = 0;
  std::vector<CornerObservation> corners;
};

/// Detected corners of every image plus the board they belong to. width and
/// height are 0 when the source did not state the image size.
struct DetectionSet {
  BoardGeometry board;
  std::vector<ImageDetections> images;
  int width = 0;
  int height = 0;

  std::size_t num_observations() const {
    std::size_t n = 0;
    for (const auto& im : images) n += im.corners.size();
    return n;
  }

  const ImageDetections* find_image(int id) const {
    for (const auto& im : images) {
      if (im.id == id) return &im;
    }
    return nullptr;
  }
};

/// Throws SchemaError if d violates a DetectionSet invariant.
inline void validate(const DetectionSet& d) {
  if (auto why = d.board.check()) throw SchemaError(*why);
  if (d.images.empty()) throw SchemaError("detection set has no images");
  if (d.width < 0 || d.height < 0) throw SchemaError("negative image size");
  std::set<int> image_ids;
  for (const auto& im : d.images) {
    if (!image_ids.insert(im.id).second) {
      throw SchemaError("duplicate image id " + std::to_string(im.id));
    }
    std::set<int> seen;
    for (const auto& c : im.corners) {
      const std::string where = "image " + std::to_string(im.id) + ", corner " + std::to_string(c.id);
      if (c.id < 0 || c.id >= d.board.num_corners()) throw SchemaError(where + ": id not on the board");
      if (!seen.insert(c.id).second) throw SchemaError(where + ": duplicate corner id");
      if (!c.pixel.allFinite()) throw SchemaError(where + ": non-finite pixel");
    }
  }
}

namespace detail {

// Typed field access with a path in the error message.
template <typename T>
T field(const Json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) throw ParseError(path + ": expected an object");
  const auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(path + "." + key + ": missing");
  try {
    return it->get<T>();
  } catch (const Json::exception&) {
    throw ParseError(path + "." + key + ": wrong type");
  }
}

inline double number_field(const Json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) throw ParseError(path + ": expected an object");
  const auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(path + "." + key + ": missing");
  if (!it->is_number()) throw ParseError(path + "." + key + ": expected a number");
  return it->get<double>();
}

inline int int_field(const Json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) throw ParseError(path + ": expected an object");
  const auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(path + "." + key + ": missing");
  if (!it->is_number_integer()) throw ParseError(path + "." + key + ": expected an integer");
  return it->get<int>();
}

}  // namespace detail

inline DetectionSet detections_from_json(const Json& j, const std::string& source = "detections") {
  using detail::int_field;
  using detail::number_field;
  const std::string schema = detail::field<std::string>(j, "schema", source);
  if (schema != kDetectionsSchema) {
    throw SchemaError(source + ": unsupported schema '" + schema + "'");
  }
  DetectionSet d;
  const auto board_it = j.find("board");
  if (board_it == j.end()) throw ParseError(source + ".board: missing");
  const Json& board = *board_it;
  d.board.rows = int_field(board, "rows", source + ".board");
  d.board.cols = int_field(board, "cols", source + ".board");
  d.board.spacing = number_field(board, "spacing", source + ".board");
  if (j.contains("width")) d.width = int_field(j, "width", source);
  if (j.contains("height")) d.height = int_field(j, "height", source);

  const auto images_it = j.find("images");
  if (images_it == j.end() || !images_it->is_array()) {
    throw ParseError(source + ".images: expected an array");
  }
  for (std::size_t i = 0; i < images_it->size(); ++i) {
    const Json& im = (*images_it)[i];
    const std::string path = source + ".images[" + std::to_string(i) + "]";
    ImageDetections out;
    out.id = int_field(im, "id", path);
    const auto corners_it = im.find("corners");
    if (corners_it == im.end() || !corners_it->is_array()) {
      throw ParseError(path + ".corners: expected an array");
    }
    for (std::size_t c = 0; c < corners_it->size(); ++c) {
      const Json& cj = (*corners_it)[c];
      const std::string cpath = path + ".corners[" + std::to_string(c) + "]";
      CornerObservation obs;
      obs.id = int_field(cj, "k", cpath);
      obs.pixel = Vec2(number_field(cj, "u", cpath), number_field(cj, "v", cpath));
      out.corners.push_back(obs);
    }
    d.images.push_back(std::move(out));
  }
  try {
    validate(d);
  } catch (const SchemaError& e) {
    throw SchemaError(source + ": " + e.what());
  }
  return d;
}

inline Json detections_to_json(const DetectionSet& d) {
  Json j;
  j["schema"] = kDetectionsSchema;
  j["board"] = {{"rows", d.board.rows}, {"cols", d.board.cols}, {"spacing", d.board.spacing}};
  if (d.width > 0) j["width"] = d.width;
  if (d.height > 0) j["height"] = d.height;
  Json images = Json::array();
  for (const auto& im : d.images) {
    Json corners = Json::array();
    for (const auto& c : im.corners) {
      corners.push_back({{"k", c.id}, {"u", c.pixel.x()}, {"v", c.pixel.y()}});
    }
    images.push_back({{"id", im.id}, {"corners", std::move(corners)}});
  }
  j["images"] = std::move(images);
  return j;
}

inline DetectionSet load_detections(const std::filesystem::path& path) {
  return detections_from_json(parse_json(read_file(path), path.string()), path.string());
}

/// Validates, then writes atomically.
inline void save_detections(const DetectionSet& d, const std::filesystem::path& path) {
  validate(d);
  write_file_atomic(path, detections_to_json(d).dump(1) + "\n");
}

/// Parameters of a synthetic calibration sequence. Distances are in board
/// diagonals; the optical axis is aimed at the board center, then tilted by up
/// to max_aim_offset times the half field of view so that the board also lands
/// in the image periphery.
struct SynthSpec {
  CameraModel camera;
  BoardGeometry board;
  int num_images = 20;
  double noise_sigma = 0.0;
  double outlier_fraction = 0.0;
  double outlier_magnitude = 20.0;  // minimum displacement of an outlier, pixels
  std::uint64_t seed = 1;
  double min_distance = 0.5;
  double max_distance = 2.0;
  double max_tilt_deg = 60.0;
  double max_aim_offset = 0.8;
  int min_corners = 8;
  int max_retries = 100;

  std::optional<std::string> check() const {
    if (auto why = board.check()) return why;
    if (camera.width() <= 0 || camera.height() <= 0) return "camera needs a positive image size";
    if (num_images < 3) return "need at least 3 images";
    if (!(noise_sigma >= 0.0)) return "noise sigma must be >= 0";
    if (!(outlier_fraction >= 0.0 && outlier_fraction < 0.5)) return "outlier fraction must be in [0, 0.5)";
    if (!(outlier_magnitude >= 0.0)) return "outlier magnitude must be >= 0";
    if (!(min_distance > 0.0 && max_distance >= min_distance)) return "bad distance range";
    if (!(max_tilt_deg >= 0.0 && max_tilt_deg < 90.0)) return "tilt must be in [0, 90)";
    if (!(max_aim_offset >= 0.0 && max_aim_offset < 1.0)) return "aim offset must be in [0, 1)";
    return std::nullopt;
  }
};

struct SynthData {
  DetectionSet detections;
  std::vector<Pose> poses;  // board to camera, one per image
  std::size_t num_outliers = 0;
};

namespace detail {

// Largest incidence angle among bearings of the image corners, so that aimed
// boards also reach the corners of the image.
inline double half_field_of_view(const CameraModel& cam) {
  const double w = cam.width(), h = cam.height();
  const Vec2 c = cam.params().segment<2>(2);
  double best = 0.0;
  for (const Vec2& u : {Vec2(0, 0), Vec2(w, 0), Vec2(0, h), Vec2(w, h)}) {
    // step in from corners that fall outside Theta
    for (double s = 1.0; s > 0.05; s -= 0.05) {
      Vec3 b;
      if (cam.try_unproject(c + s * (u - c), b) == Status::kOk) {
        best = std::max(best, std::acos(std::clamp(b.z(), -1.0, 1.0)));
        break;
      }
    }
  }
  return best > 0.0 ? best : 0.25 * std::numbers::pi;
}

// Rotation whose third row is the given unit viewing direction.
inline Mat3 look_rotation(const Vec3& forward, double roll) {
  const Vec3 helper = std::abs(forward.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  Vec3 x = helper.cross(forward).normalized();
  Vec3 y = forward.cross(x);
  const double c = std::cos(roll), s = std::sin(roll);
  const Vec3 xr = c * x + s * y;
  const Vec3 yr = -s * x + c * y;
  Mat3 r;
  r.row(0) = xr.transpose();
  r.row(1) = yr.transpose();
  r.row(2) = forward.transpose();
  return r;
}

}  // namespace detail

/// Samples poses on a spherical cap above the board, projects every corner and
/// keeps those inside Omega and the image. Deterministic given spec.seed.
/// Throws InvalidParameters for a bad spec and PoseSamplingError when a pose
/// keeps seeing fewer than min_corners corners.
inline SynthData generate_synthetic(const SynthSpec& spec) {
  if (auto why = spec.check()) throw InvalidParameters("synth: " + *why);
  const CameraModel& cam = spec.camera;
  const double w = cam.width(), h = cam.height();
  const BoardGeometry& board = spec.board;
  const double diag = board.diagonal();
  const double half_fov = detail::half_field_of_view(cam);
  const double max_tilt = spec.max_tilt_deg * std::numbers::pi / 180.0;

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  SynthData out;
  out.detections.board = board;
  out.detections.width = cam.width();
  out.detections.height = cam.height();

  for (int n = 0; n < spec.num_images; ++n) {
    bool accepted = false;
    for (int attempt = 0; attempt <= spec.max_retries && !accepted; ++attempt) {
      const double dist = diag * (spec.min_distance + (spec.max_distance - spec.min_distance) * unit(rng));
      // uniform in solid angle over the cap
      const double cos_tilt = 1.0 - unit(rng) * (1.0 - std::cos(max_tilt));
      const double tilt = std::acos(cos_tilt);
      const double azimuth = 2.0 * std::numbers::pi * unit(rng);
      const Vec3 position = board.center() + dist * Vec3(std::sin(tilt) * std::cos(azimuth),
                                                         std::sin(tilt) * std::sin(azimuth),
                                                         -std::cos(tilt));
      Vec3 forward = (board.center() - position).normalized();
      // tilt the optical axis away from the board center
      const double aim = spec.max_aim_offset * half_fov * std::sqrt(unit(rng));
      const double aim_dir = 2.0 * std::numbers::pi * unit(rng);
      const Mat3 frame = detail::look_rotation(forward, 0.0);
      const Vec3 side = std::cos(aim_dir) * frame.row(0).transpose() +
                        std::sin(aim_dir) * frame.row(1).transpose();
      forward = (std::cos(aim) * forward + std::sin(aim) * side).normalized();
      const double roll = 2.0 * std::numbers::pi * unit(rng);

      Pose pose;
      pose.rotation = detail::look_rotation(forward, roll);
      pose.translation = -(pose.rotation * position);

      ImageDetections im;
      im.id = n;
      std::vector<Vec2> clean;
      for (int k = 0; k < board.num_corners(); ++k) {
        const Vec3 pc = pose * board.corner(k);
        Vec2 u;
        if (!cam.in_omega(pc) || cam.try_project(pc, u) != Status::kOk) continue;
        if (!(u.x() >= 0.0 && u.x() <= w && u.y() >= 0.0 && u.y() <= h)) continue;
        im.corners.push_back({k, u});
      }
      if (static_cast<int>(im.corners.size()) < spec.min_corners) continue;
      // noise is drawn only for accepted poses, so retries do not shift it
      for (auto& c : im.corners) {
        Vec2 noisy;
        do {
          noisy = c.pixel + spec.noise_sigma * Vec2(noise(rng), noise(rng));
        } while (!(noisy.x() >= 0.0 && noisy.x() <= w && noisy.y() >= 0.0 && noisy.y() <= h));
        c.pixel = noisy;
      }
      out.detections.images.push_back(std::move(im));
      out.poses.push_back(pose);
      accepted = true;
    }
    if (!accepted) {
      throw PoseSamplingError("synth: image " + std::to_string(n) + " saw fewer than " +
                              std::to_string(spec.min_corners) + " corners after " +
                              std::to_string(spec.max_retries) + " retries");
    }
  }

  // Replace an exact fraction of all observations with gross outliers.
  const std::size_t total = out.detections.num_observations();
  const auto count = static_cast<std::size_t>(std::llround(spec.outlier_fraction * static_cast<double>(total)));
  if (count > 0) {
    std::vector<CornerObservation*> all;
    for (auto& im : out.detections.images) {
      for (auto& c : im.corners) all.push_back(&c);
    }
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, all.size() - 1);
      std::swap(all[i], all[pick(rng)]);
      CornerObservation& c = *all[i];
      Vec2 u;
      int tries = 0;
      do {
        u = Vec2(w * unit(rng), h * unit(rng));
      } while ((u - c.pixel).norm() < spec.outlier_magnitude && ++tries < 1000);
      c.pixel = u;
    }
    out.num_outliers = count;
  }
  return out;
}

}  // namespace widecam
