#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csv.hpp"
#include "geometry.hpp"

namespace gridtrack {

inline constexpr int kCameraModelVersion = 1;

inline nlohmann::ordered_json camera_model_to_json(const CameraModel& m) {
  nlohmann::ordered_json j;
  j["version"] = kCameraModelVersion;
  j["camera_id"] = m.camera_id();
  j["image_w"] = m.image_w();
  j["image_h"] = m.image_h();
  j["principal_col"] = m.principal_col();
  j["depth_coeffs"] = m.depth_coeffs();
  j["lateral_coeffs"] = m.lateral_coeffs();
  j["world_pos"] = {m.world_pos().x, m.world_pos().y};
  j["yaw_deg"] = m.yaw_deg();
  j["valid_row_range"] = {m.valid_rows().v_min, m.valid_rows().v_max};
  return j;
}

inline CameraModel camera_model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kCameraModelVersion) throw ConfigError("unsupported camera model version");
    const auto pos = j.at("world_pos").get<std::vector<double>>();
    const auto rows = j.at("valid_row_range").get<std::vector<double>>();
    if (pos.size() != 2 || rows.size() != 2) throw ConfigError("world_pos and valid_row_range need 2 entries");
    CameraModelParams p;
    p.camera_id = j.at("camera_id").get<std::string>();
    p.image_w = j.at("image_w").get<int>();
    p.image_h = j.at("image_h").get<int>();
    if (j.contains("principal_col")) p.principal_col = j["principal_col"].get<double>();
    p.depth_coeffs = j.at("depth_coeffs").get<std::vector<double>>();
    p.lateral_coeffs = j.at("lateral_coeffs").get<std::vector<double>>();
    p.world_pos = {pos[0], pos[1]};
    p.yaw_deg = j.at("yaw_deg").get<double>();
    p.valid_rows = {rows[0], rows[1]};
    return CameraModel::create(std::move(p));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad camera model: ") + e.what());
  }
}

inline CameraModel load_camera_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open camera model " + path);
  try {
    return camera_model_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("camera model " + path + ": " + e.what());
  }
}

inline void save_camera_model(const CameraModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << camera_model_to_json(m).dump(2) << '\n';
}

inline constexpr std::string_view kCalibrationCsvHeader = "row_px,depth_m,object_width_px,object_width_m";

enum class WidthUnit { meters, inches };

// Reads a calibration CSV. The width columns are optional per row; widths given in inches are
// converted to meters here.
inline std::vector<CalibrationSample> read_calibration_csv(const std::string& path, WidthUnit unit = WidthUnit::meters) {
  const auto lines = csv::read_lines(path);
  if (lines.empty()) throw ConfigError(path + ": empty file");
  const auto header = csv::split(lines.front());
  if (header.size() < 2 || csv::trim(header[0]) != "row_px" || csv::trim(header[1]) != "depth_m") {
    throw ConfigError(path + ": expected header '" + std::string(kCalibrationCsvHeader) + "'");
  }
  std::vector<CalibrationSample> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = csv::split(lines[i]);
    if (f.size() < 2 || f.size() > 4) throw ConfigError(path + ": line " + std::to_string(i + 1) + " has wrong field count");
    CalibrationSample s;
    s.row_px = csv::parse<double>(f[0], "row_px");
    s.depth_m = csv::parse<double>(f[1], "depth_m");
    const bool w_px = f.size() > 2 && !csv::trim(f[2]).empty();
    const bool w_m = f.size() > 3 && !csv::trim(f[3]).empty();
    if (w_px != w_m) throw ConfigError(path + ": line " + std::to_string(i + 1) + " has only one width column");
    if (w_px) {
      s.object_width_px = csv::parse<double>(f[2], "object_width_px");
      const double w = csv::parse<double>(f[3], "object_width_m");
      s.object_width_m = unit == WidthUnit::inches ? inches_to_meters(w) : w;
    }
    out.push_back(s);
  }
  return out;
}

inline void write_calibration_csv(const std::vector<CalibrationSample>& samples, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << kCalibrationCsvHeader << '\n';
  for (const auto& s : samples) {
    out << csv::format(s.row_px) << ',' << csv::format(s.depth_m);
    if (s.has_width()) out << ',' << csv::format(*s.object_width_px) << ',' << csv::format(*s.object_width_m);
    out << '\n';
  }
}

}  // namespace gridtrack
