#pragma once

#include <random>
#include <string>
#include <vector>

#include "gridtrack/geometry.hpp"
#include "oracles/oracles.hpp"

namespace fixtures {

// Calibration samples of an ideal downward-tilted pinhole over a flat floor: a camera at
// height h with focal length f (pixels) and horizon row vh sees depth f*h/(v - vh) on row v,
// and a lateral scale of depth/f meters per pixel.
inline std::vector<gridtrack::CalibrationSample> pinhole_samples(double f, double h, double vh, double v_lo, double v_hi,
                                                                 int n) {
  std::vector<gridtrack::CalibrationSample> out;
  for (int i = 0; i < n; ++i) {
    const double v = v_lo + (v_hi - v_lo) * i / (n - 1);
    const double d = f * h / (v - vh);
    const double width_m = 0.5;
    out.push_back({v, d, width_m / (d / f), width_m});
  }
  return out;
}

inline gridtrack::CameraModel pinhole_model(const std::string& id, gridtrack::WorldPoint pos, double yaw_deg,
                                            double f = 500.0, double h = 2.5, double vh = 60.0, double v_lo = 150.0,
                                            double v_hi = 470.0) {
  const auto samples = pinhole_samples(f, h, vh, v_lo, v_hi, 24);
  gridtrack::CalibrationOptions opt;
  opt.camera_id = id;
  opt.world_pos = pos;
  opt.yaw_deg = yaw_deg;
  return gridtrack::calibrate(samples, opt).model;
}

inline gridtrack::CameraModel random_model(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> f(350.0, 700.0), h(1.5, 3.5), vh(-40.0, 90.0), lo(120.0, 200.0),
      hi(380.0, 470.0), pos(-5.0, 5.0), yaw(-180.0, 180.0);
  return pinhole_model("cam", {pos(rng), pos(rng)}, yaw(rng), f(rng), h(rng), vh(rng), lo(rng), hi(rng));
}

inline oracle::Cam to_oracle(const gridtrack::CameraModel& m) {
  return {m.depth_coeffs(),          m.lateral_coeffs(),      m.principal_col(),
          m.world_pos().x,           m.world_pos().y,         m.yaw_deg(),
          m.valid_rows().v_min,      m.valid_rows().v_max,    m.image_w()};
}

// Two cameras watching a 12 ft square room from outside its south and west walls.
inline constexpr double kRoomSide = 3.6576;

inline std::vector<gridtrack::CameraModel> room_cameras() {
  return {pinhole_model("south", {kRoomSide / 2, -3.2}, 0.0), pinhole_model("west", {-3.2, kRoomSide / 2}, -90.0)};
}

}  // namespace fixtures
