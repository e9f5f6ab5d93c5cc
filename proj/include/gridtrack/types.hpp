#pragma once

#include <cmath>
#include <cstdint>

namespace gridtrack {

// Ground-plane position in meters.
struct WorldPoint {
  double x{0.0};
  double y{0.0};

  friend bool operator==(const WorldPoint&, const WorldPoint&) = default;
};

// Image position: u is the column, v the row (pixels).
struct PixelPoint {
  double u{0.0};
  double v{0.0};

  friend bool operator==(const PixelPoint&, const PixelPoint&) = default;
};

inline double distance(const WorldPoint& a, const WorldPoint& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

// Microseconds since epoch.
using TimestampUs = std::int64_t;

inline constexpr double kMetersPerInch = 0.0254;

inline constexpr double inches_to_meters(double inches) { return inches * kMetersPerInch; }

}  // namespace gridtrack
