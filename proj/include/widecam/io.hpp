#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include <widecam/camera_model.hpp>
#include <widecam/errors.hpp>

namespace widecam {

using Json = nlohmann::json;

/// Writes to a sibling temp file, then renames over the target.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
    out << contents;
    out.flush();
    if (!out) throw Error("failed writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error("cannot rename onto '" + path.string() + "': " + ec.message());
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Parses text as JSON; errors carry the source name and line/column.
inline Json parse_json(const std::string& text, const std::string& source) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError(source + ": " + e.what());
  }
}

inline Json camera_to_json(const CameraModel& model) {
  const Eigen::VectorXd p = model.params();
  Json j;
  j["model"] = std::string(model.name());
  j["intrinsics"] = std::vector<double>(p.data(), p.data() + p.size());
  j["width"] = model.width();
  j["height"] = model.height();
  return j;
}

/// Extra keys are ignored, so result and ground-truth files also load.
inline CameraModel camera_from_json(const Json& j, const std::string& source = "camera") {
  try {
    const ModelKind kind = parse_model_kind(j.at("model").get<std::string>());
    const auto values = j.at("intrinsics").get<std::vector<double>>();
    Eigen::VectorXd p = Eigen::Map<const Eigen::VectorXd>(values.data(), values.size());
    const int width = j.value("width", 0);
    const int height = j.value("height", 0);
    return CameraModel::create(kind, p, width, height);
  } catch (const Json::exception& e) {
    throw ParseError(source + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(source + ": " + e.what());
  }
}

inline CameraModel read_camera(const std::filesystem::path& path) {
  return camera_from_json(parse_json(read_file(path), path.string()), path.string());
}

inline void write_camera(const std::filesystem::path& path, const CameraModel& model) {
  write_file_atomic(path, camera_to_json(model).dump(2) + "\n");
}

}  // namespace widecam
