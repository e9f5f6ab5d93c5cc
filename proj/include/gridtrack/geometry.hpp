#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "polyfit.hpp"
#include "types.hpp"

namespace gridtrack {

// One calibration observation: an image row, the ground distance from the camera to the
// point imaged on that row, and optionally the width of a known object seen at that row.
struct CalibrationSample {
  double row_px{0.0};
  double depth_m{0.0};
  std::optional<double> object_width_px;
  std::optional<double> object_width_m;

  bool has_width() const { return object_width_px.has_value() && object_width_m.has_value(); }
};

struct RowRange {
  double v_min{0.0};
  double v_max{0.0};

  bool contains(double v) const { return v >= v_min && v <= v_max; }
  friend bool operator==(const RowRange&, const RowRange&) = default;
};

// Point in the camera's ground frame: lateral offset (image-right positive) and forward depth.
struct CameraGroundPoint {
  double lateral_m{0.0};
  double depth_m{0.0};
};

struct CameraModelParams {
  std::string camera_id;
  int image_w{0};
  int image_h{0};
  std::vector<double> depth_coeffs;
  std::vector<double> lateral_coeffs;
  std::optional<double> principal_col;  // defaults to (image_w - 1) / 2
  WorldPoint world_pos;
  double yaw_deg{0.0};
  RowRange valid_rows;
};

inline constexpr int kMonotonicityProbeRows = 256;

/// Per-camera ground-plane model: row -> depth polynomial, row -> meters-per-pixel polynomial,
/// and the camera's pose in the world (position plus yaw, CCW from world +Y to camera forward).
///
/// Immutable once built. Construction rejects non-positive lateral scale inside the valid rows;
/// a non-monotone depth polynomial is accepted but flagged, and such a model cannot be inverted.
class CameraModel {
 public:
  static CameraModel create(CameraModelParams p) {
    if (p.image_w <= 0 || p.image_h <= 0) throw CalibrationError("image dimensions must be positive");
    if (p.depth_coeffs.empty()) throw CalibrationError("empty depth polynomial");
    if (p.lateral_coeffs.empty()) throw CalibrationError("empty lateral polynomial");
    if (!(p.valid_rows.v_min <= p.valid_rows.v_max)) throw CalibrationError("inverted valid row range");
    if (p.valid_rows.v_min < 0.0 || p.valid_rows.v_max >= static_cast<double>(p.image_h)) {
      throw CalibrationError("valid row range outside image");
    }
    if (!std::isfinite(p.yaw_deg)) throw CalibrationError("non-finite yaw");

    CameraModel m;
    m.id_ = std::move(p.camera_id);
    m.image_w_ = p.image_w;
    m.image_h_ = p.image_h;
    m.depth_ = std::move(p.depth_coeffs);
    m.lateral_ = std::move(p.lateral_coeffs);
    m.principal_col_ = p.principal_col.value_or((static_cast<double>(p.image_w) - 1.0) / 2.0);
    m.world_pos_ = p.world_pos;
    m.yaw_deg_ = p.yaw_deg;
    m.rows_ = p.valid_rows;
    const double yaw = p.yaw_deg * std::numbers::pi / 180.0;
    m.cos_yaw_ = std::cos(yaw);
    m.sin_yaw_ = std::sin(yaw);

    int sign = 0;
    bool monotone = true;
    double prev = m.depth_at(m.rows_.v_min);
    for (int i = 0; i < kMonotonicityProbeRows; ++i) {
      const double v = m.probe_row(i);
      if (!(m.lateral_scale_at(v) > 0.0)) {
        throw CalibrationError("lateral scale not positive at row " + std::to_string(v));
      }
      if (i == 0) continue;
      const double d = m.depth_at(v);
      const int s = d > prev ? 1 : (d < prev ? -1 : 0);
      if (s == 0 || (sign != 0 && s != sign)) monotone = false;
      if (sign == 0) sign = s;
      prev = d;
    }
    if (m.rows_.v_min == m.rows_.v_max) monotone = false;
    m.monotone_ = monotone;
    m.depth_increasing_ = sign > 0;
    if (!monotone) m.warnings_.push_back("depth polynomial is not strictly monotone over the valid rows");
    return m;
  }

  const std::string& camera_id() const { return id_; }
  int image_w() const { return image_w_; }
  int image_h() const { return image_h_; }
  const std::vector<double>& depth_coeffs() const { return depth_; }
  const std::vector<double>& lateral_coeffs() const { return lateral_; }
  double principal_col() const { return principal_col_; }
  WorldPoint world_pos() const { return world_pos_; }
  double yaw_deg() const { return yaw_deg_; }
  RowRange valid_rows() const { return rows_; }
  bool depth_monotone() const { return monotone_; }
  bool depth_increasing() const { return depth_increasing_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  double depth_at(double v) const { return poly_eval(depth_, v); }
  double lateral_scale_at(double v) const { return poly_eval(lateral_, v); }

  // Camera ground frame -> world frame.
  WorldPoint to_world(const CameraGroundPoint& c) const {
    return {world_pos_.x + cos_yaw_ * c.lateral_m - sin_yaw_ * c.depth_m,
            world_pos_.y + sin_yaw_ * c.lateral_m + cos_yaw_ * c.depth_m};
  }

  // World frame -> camera ground frame (rotation by -yaw).
  CameraGroundPoint to_camera(const WorldPoint& p) const {
    const double dx = p.x - world_pos_.x;
    const double dy = p.y - world_pos_.y;
    return {cos_yaw_ * dx + sin_yaw_ * dy, -sin_yaw_ * dx + cos_yaw_ * dy};
  }

  double probe_row(int i) const {
    return rows_.v_min + (rows_.v_max - rows_.v_min) * static_cast<double>(i) /
                             static_cast<double>(kMonotonicityProbeRows - 1);
  }

 private:
  CameraModel() = default;

  std::string id_;
  int image_w_{0};
  int image_h_{0};
  std::vector<double> depth_;
  std::vector<double> lateral_;
  double principal_col_{0.0};
  WorldPoint world_pos_;
  double yaw_deg_{0.0};
  double cos_yaw_{1.0};
  double sin_yaw_{0.0};
  RowRange rows_;
  bool monotone_{false};
  bool depth_increasing_{false};
  std::vector<std::string> warnings_;
};

struct ModelFit {
  std::vector<double> coeffs;  // ascending degree in the image row
  double residual_rms{0.0};
  std::vector<std::string> warnings;
};

namespace detail {

inline void check_sample(const CalibrationSample& s) {
  if (!std::isfinite(s.row_px) || s.row_px < 0.0) throw CalibrationError("sample row must be >= 0");
  if (!(s.depth_m > 0.0)) throw CalibrationError("sample depth must be > 0");
}

inline bool strictly_monotone_on(std::span<const double> coeffs, double lo, double hi) {
  if (!(lo < hi)) return false;
  int sign = 0;
  double prev = poly_eval(coeffs, lo);
  for (int i = 1; i < kMonotonicityProbeRows; ++i) {
    const double v = lo + (hi - lo) * i / (kMonotonicityProbeRows - 1.0);
    const double d = poly_eval(coeffs, v);
    const int s = d > prev ? 1 : (d < prev ? -1 : 0);
    if (s == 0 || (sign != 0 && s != sign)) return false;
    sign = s;
    prev = d;
  }
  return true;
}

}  // namespace detail

// Fits depth D(v) over the samples.
inline ModelFit fit_depth_model(std::span<const CalibrationSample> samples, int degree) {
  std::vector<double> rows;
  std::vector<double> depths;
  rows.reserve(samples.size());
  depths.reserve(samples.size());
  for (const auto& s : samples) {
    detail::check_sample(s);
    rows.push_back(s.row_px);
    depths.push_back(s.depth_m);
  }
  auto fit = fit_polynomial(rows, depths, degree);
  ModelFit out{std::move(fit.coeffs), fit.residual_rms, {}};
  const auto [lo, hi] = std::minmax_element(rows.begin(), rows.end());
  if (!detail::strictly_monotone_on(out.coeffs, *lo, *hi)) {
    out.warnings.push_back("fitted depth model is not strictly monotone over the sample rows");
  }
  return out;
}

// Fits the lateral scale s(v) = W_m / W_px(v) over samples that carry both widths.
inline ModelFit fit_lateral_model(std::span<const CalibrationSample> samples, int degree) {
  std::vector<double> rows;
  std::vector<double> scales;
  for (const auto& s : samples) {
    if (!s.has_width()) continue;
    detail::check_sample(s);
    if (!(*s.object_width_px > 0.0)) throw CalibrationError("object width in pixels must be > 0");
    if (!(*s.object_width_m > 0.0)) throw CalibrationError("object width in meters must be > 0");
    rows.push_back(s.row_px);
    scales.push_back(*s.object_width_m / *s.object_width_px);
  }
  auto fit = fit_polynomial(rows, scales, degree);
  return {std::move(fit.coeffs), fit.residual_rms, {}};
}

struct CalibrationOptions {
  std::string camera_id;
  int image_w{640};
  int image_h{480};
  int depth_degree{3};
  int lateral_degree{3};
  std::optional<double> principal_col;
  WorldPoint world_pos;
  double yaw_deg{0.0};
};

struct CalibrationResult {
  CameraModel model;
  ModelFit depth;
  ModelFit lateral;
};

// Fits both polynomials and assembles a camera model whose valid rows span the samples.
inline CalibrationResult calibrate(std::span<const CalibrationSample> samples, const CalibrationOptions& opt) {
  for (const auto& s : samples) {
    if (s.row_px >= static_cast<double>(opt.image_h)) throw CalibrationError("sample row outside image");
  }
  auto depth = fit_depth_model(samples, opt.depth_degree);
  auto lateral = fit_lateral_model(samples, opt.lateral_degree);
  RowRange rows{samples.front().row_px, samples.front().row_px};
  for (const auto& s : samples) {
    rows.v_min = std::min(rows.v_min, s.row_px);
    rows.v_max = std::max(rows.v_max, s.row_px);
  }
  auto model = CameraModel::create({opt.camera_id, opt.image_w, opt.image_h, depth.coeffs, lateral.coeffs,
                                    opt.principal_col, opt.world_pos, opt.yaw_deg, rows});
  return {std::move(model), std::move(depth), std::move(lateral)};
}

// Anchor pixel -> camera ground frame. Throws OutOfCalibrationError outside the valid rows or image.
inline CameraGroundPoint pixel_to_camera(const CameraModel& m, double u, double v) {
  if (!(v >= m.valid_rows().v_min && v <= m.valid_rows().v_max)) {
    throw OutOfCalibrationError("row " + std::to_string(v) + " outside calibrated range [" +
                                std::to_string(m.valid_rows().v_min) + ", " +
                                std::to_string(m.valid_rows().v_max) + "]");
  }
  if (!(u >= 0.0 && u < static_cast<double>(m.image_w()))) {
    throw OutOfCalibrationError("column " + std::to_string(u) + " outside image");
  }
  return {(u - m.principal_col()) * m.lateral_scale_at(v), m.depth_at(v)};
}

inline WorldPoint pixel_to_world(const CameraModel& m, double u, double v) {
  return m.to_world(pixel_to_camera(m, u, v));
}

inline WorldPoint pixel_to_world(const CameraModel& m, PixelPoint px) { return pixel_to_world(m, px.u, px.v); }

inline constexpr double kRowBisectionTolerance = 1e-9;

// Inverse of pixel_to_world. Returns nullopt when the point is behind the camera, outside the
// calibrated depth band, or projects outside the image columns.
inline std::optional<PixelPoint> world_to_pixel(const CameraModel& m, const WorldPoint& p) {
  if (!m.depth_monotone()) throw UnsupportedModelError("camera '" + m.camera_id() + "' has a non-monotone depth model");
  const auto c = m.to_camera(p);
  if (!(c.depth_m > 0.0)) return std::nullopt;

  double lo = m.valid_rows().v_min;
  double hi = m.valid_rows().v_max;
  const double d_lo = m.depth_at(lo);
  const double d_hi = m.depth_at(hi);
  if (c.depth_m < std::min(d_lo, d_hi) || c.depth_m > std::max(d_lo, d_hi)) return std::nullopt;

  // Keep depth_at(lo) <= D <= depth_at(hi) in the increasing orientation.
  const bool increasing = m.depth_increasing();
  for (int it = 0; it < 200 && hi - lo > kRowBisectionTolerance; ++it) {
    const double mid = 0.5 * (lo + hi);
    const bool below = m.depth_at(mid) < c.depth_m;
    if (below == increasing) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double v = 0.5 * (lo + hi);
  const double u = m.principal_col() + c.lateral_m / m.lateral_scale_at(v);
  if (!(u >= 0.0 && u < static_cast<double>(m.image_w()))) return std::nullopt;
  return PixelPoint{u, v};
}

}  // namespace gridtrack
