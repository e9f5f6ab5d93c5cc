#pragma once

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <vector>

#include "error.hpp"
#include "types.hpp"

namespace gridtrack {

// COCO-17 keypoint order.
enum class Coco : std::size_t {
  nose = 0,
  left_eye,
  right_eye,
  left_ear,
  right_ear,
  left_shoulder,
  right_shoulder,
  left_elbow,
  right_elbow,
  left_wrist,
  right_wrist,
  left_hip,
  right_hip,
  left_knee,
  right_knee,
  left_ankle,
  right_ankle,
};

inline constexpr std::size_t kCocoKeypoints = 17;

struct Keypoint {
  float x{0.0F};  // column
  float y{0.0F};  // row
  float conf{0.0F};

  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

struct PoseDetection {
  std::array<Keypoint, kCocoKeypoints> keypoints{};
  int person_tag{0};

  Keypoint& operator[](Coco k) { return keypoints[static_cast<std::size_t>(k)]; }
  const Keypoint& operator[](Coco k) const { return keypoints[static_cast<std::size_t>(k)]; }

  friend bool operator==(const PoseDetection&, const PoseDetection&) = default;
};

class BBox {
 public:
  BBox(double x_min, double y_min, double x_max, double y_max)
      : x_min_(x_min), y_min_(y_min), x_max_(x_max), y_max_(y_max) {
    if (!(x_min < x_max) || !(y_min < y_max)) throw ConfigError("degenerate bounding box");
  }

  double x_min() const { return x_min_; }
  double y_min() const { return y_min_; }
  double x_max() const { return x_max_; }
  double y_max() const { return y_max_; }

 private:
  double x_min_;
  double y_min_;
  double x_max_;
  double y_max_;
};

inline constexpr float kDefaultAnchorConfidence = 0.3F;

// Ground-contact pixel of a person: left ankle, else right ankle, else the midpoint of both
// ankles when each clears half the threshold.
inline std::optional<PixelPoint> anchor_pixel_from_pose(const PoseDetection& d,
                                                        float conf_threshold = kDefaultAnchorConfidence) {
  const auto& left = d[Coco::left_ankle];
  const auto& right = d[Coco::right_ankle];
  if (left.conf >= conf_threshold) return PixelPoint{left.x, left.y};
  if (right.conf >= conf_threshold) return PixelPoint{right.x, right.y};
  const float half = conf_threshold / 2.0F;
  if (left.conf >= half && right.conf >= half) {
    return PixelPoint{(static_cast<double>(left.x) + right.x) / 2.0, (static_cast<double>(left.y) + right.y) / 2.0};
  }
  return std::nullopt;
}

// Bottom-center of the box.
inline PixelPoint bbox_to_anchor_pixel(const BBox& b) { return {(b.x_min() + b.x_max()) / 2.0, b.y_max()}; }

// kp17 payload: u16 LE person count, then per person 17 x (f32 x, f32 y, f32 conf) LE.
inline constexpr std::size_t kKp17RecordBytes = kCocoKeypoints * 3 * 4;
inline constexpr std::size_t kKp17MaxPersons = 0xFFFF;

inline constexpr std::size_t kp17_payload_size(std::size_t persons) { return 2 + persons * kKp17RecordBytes; }

namespace detail {

inline void put_u32_le(std::vector<std::byte>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFFU));
}

inline std::uint32_t get_u32_le(const std::byte* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline std::vector<std::byte> encode_kp17(std::span<const PoseDetection> detections) {
  if (detections.size() > kKp17MaxPersons) throw MalformedPayloadError("too many detections for kp17");
  std::vector<std::byte> out;
  out.reserve(kp17_payload_size(detections.size()));
  const auto n = static_cast<std::uint16_t>(detections.size());
  out.push_back(static_cast<std::byte>(n & 0xFFU));
  out.push_back(static_cast<std::byte>(n >> 8));
  for (const auto& d : detections) {
    for (const auto& k : d.keypoints) {
      detail::put_u32_le(out, std::bit_cast<std::uint32_t>(k.x));
      detail::put_u32_le(out, std::bit_cast<std::uint32_t>(k.y));
      detail::put_u32_le(out, std::bit_cast<std::uint32_t>(k.conf));
    }
  }
  return out;
}

// Decoded detections are tagged by their index in the payload.
inline std::vector<PoseDetection> decode_kp17(std::span<const std::byte> payload) {
  if (payload.size() < 2) throw MalformedPayloadError("kp17 payload shorter than its count field");
  const std::size_t n = static_cast<std::size_t>(payload[0]) | (static_cast<std::size_t>(payload[1]) << 8);
  if (payload.size() != kp17_payload_size(n)) {
    throw MalformedPayloadError("kp17 payload is " + std::to_string(payload.size()) + " bytes, count " +
                                std::to_string(n) + " needs " + std::to_string(kp17_payload_size(n)));
  }
  std::vector<PoseDetection> out(n);
  const std::byte* p = payload.data() + 2;
  for (std::size_t i = 0; i < n; ++i) {
    out[i].person_tag = static_cast<int>(i);
    for (auto& k : out[i].keypoints) {
      k.x = std::bit_cast<float>(detail::get_u32_le(p));
      k.y = std::bit_cast<float>(detail::get_u32_le(p + 4));
      k.conf = std::bit_cast<float>(detail::get_u32_le(p + 8));
      p += 12;
    }
  }
  return out;
}

}  // namespace gridtrack
