#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "pose.hpp"
#include "types.hpp"

namespace gridtrack {

enum class Encoding { jpeg, raw8, kp17 };

inline std::string_view to_string(Encoding e) {
  switch (e) {
    case Encoding::jpeg: return "jpeg";
    case Encoding::raw8: return "raw8";
    case Encoding::kp17: return "kp17";
  }
  return "?";
}

inline std::optional<Encoding> parse_encoding(std::string_view s) {
  if (s == "jpeg") return Encoding::jpeg;
  if (s == "raw8") return Encoding::raw8;
  if (s == "kp17") return Encoding::kp17;
  return std::nullopt;
}

inline constexpr int kFrameVersion = 1;
inline constexpr std::size_t kMaxCameraIdBytes = 64;
inline constexpr std::array<char, 4> kFrameMagic{'G', 'T', 'K', '1'};
inline constexpr std::uint32_t kMaxHeaderBytes = 64 * 1024;
inline constexpr std::uint32_t kMaxPayloadBytes = 64 * 1024 * 1024;
inline constexpr std::byte kRepByte{0x01};
inline constexpr std::uint16_t kDefaultPort = 5555;

struct FrameHeader {
  std::string camera_id;
  std::uint64_t seq{0};
  TimestampUs ts_us{0};
  int width{0};
  int height{0};
  Encoding encoding{Encoding::kp17};

  friend bool operator==(const FrameHeader&, const FrameHeader&) = default;
};

struct FrameMessage {
  FrameHeader header;
  std::vector<std::byte> payload;

  friend bool operator==(const FrameMessage&, const FrameMessage&) = default;
};

inline void validate_header(const FrameHeader& h) {
  if (h.camera_id.empty() || h.camera_id.size() > kMaxCameraIdBytes) {
    throw MalformedMessageError("camera id must be 1.." + std::to_string(kMaxCameraIdBytes) + " bytes");
  }
  if (h.width < 0 || h.height < 0) throw MalformedMessageError("negative frame dimensions");
}

// Payload-shape checks that depend on the encoding; JPEG is opaque.
inline void validate_payload(const FrameHeader& h, std::span<const std::byte> payload) {
  switch (h.encoding) {
    case Encoding::raw8:
      if (payload.size() != static_cast<std::size_t>(h.width) * static_cast<std::size_t>(h.height)) {
        throw MalformedMessageError("raw8 payload is " + std::to_string(payload.size()) + " bytes, expected " +
                                    std::to_string(static_cast<std::size_t>(h.width) * h.height));
      }
      break;
    case Encoding::kp17: {
      if (payload.size() < 2) throw MalformedMessageError("kp17 payload lacks count");
      const std::size_t n = static_cast<std::size_t>(payload[0]) | (static_cast<std::size_t>(payload[1]) << 8);
      if (payload.size() != kp17_payload_size(n)) throw MalformedMessageError("kp17 payload length disagrees with count");
      break;
    }
    case Encoding::jpeg:
      break;
  }
}

inline std::string encode_header_json(const FrameHeader& h) {
  nlohmann::ordered_json j;
  j["v"] = kFrameVersion;
  j["cam"] = h.camera_id;
  j["seq"] = h.seq;
  j["ts_us"] = h.ts_us;
  j["w"] = h.width;
  j["h"] = h.height;
  j["enc"] = std::string(to_string(h.encoding));
  return j.dump();
}

inline FrameHeader decode_header_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw MalformedMessageError(std::string("header is not JSON: ") + e.what());
  }
  try {
    if (!j.is_object()) throw MalformedMessageError("header is not a JSON object");
    if (j.at("v").get<int>() != kFrameVersion) throw MalformedMessageError("unsupported frame version");
    FrameHeader h;
    h.camera_id = j.at("cam").get<std::string>();
    if (!j.at("seq").is_number_unsigned()) throw MalformedMessageError("seq must be unsigned");
    h.seq = j["seq"].get<std::uint64_t>();
    if (!j.at("ts_us").is_number_integer()) throw MalformedMessageError("ts_us must be an integer");
    h.ts_us = j["ts_us"].get<std::int64_t>();
    h.width = j.at("w").get<int>();
    h.height = j.at("h").get<int>();
    const auto enc = parse_encoding(j.at("enc").get<std::string>());
    if (!enc) throw MalformedMessageError("unknown encoding");
    h.encoding = *enc;
    validate_header(h);
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw MalformedMessageError(std::string("bad header field: ") + e.what());
  }
}

namespace detail {

inline void put_u32_be(std::vector<std::byte>& out, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFFU));
}

inline std::uint32_t get_u32_be(const std::byte* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<std::uint32_t>(p[i]);
  return v;
}

}  // namespace detail

// Wire layout: "GTK1" | u32 BE header length | JSON header | u32 BE payload length | payload.
inline std::vector<std::byte> encode_frame(const FrameMessage& m) {
  validate_header(m.header);
  validate_payload(m.header, m.payload);
  if (m.payload.size() > kMaxPayloadBytes) throw MalformedMessageError("payload too large");
  const std::string header = encode_header_json(m.header);
  std::vector<std::byte> out;
  out.reserve(12 + header.size() + m.payload.size());
  for (char c : kFrameMagic) out.push_back(static_cast<std::byte>(c));
  detail::put_u32_be(out, static_cast<std::uint32_t>(header.size()));
  for (char c : header) out.push_back(static_cast<std::byte>(c));
  detail::put_u32_be(out, static_cast<std::uint32_t>(m.payload.size()));
  out.insert(out.end(), m.payload.begin(), m.payload.end());
  return out;
}

inline void check_magic(std::span<const std::byte> four) {
  for (std::size_t i = 0; i < 4; ++i) {
    if (four[i] != static_cast<std::byte>(kFrameMagic[i])) throw MalformedMessageError("bad magic");
  }
}

// Decodes exactly one message occupying the whole buffer.
inline FrameMessage decode_frame(std::span<const std::byte> bytes) {
  if (bytes.size() < 8) throw MalformedMessageError("message shorter than its preamble");
  check_magic(bytes.first(4));
  const std::uint32_t hlen = detail::get_u32_be(bytes.data() + 4);
  if (hlen > kMaxHeaderBytes || bytes.size() < 8 + std::size_t{hlen} + 4) {
    throw MalformedMessageError("truncated header");
  }
  const auto* hp = reinterpret_cast<const char*>(bytes.data() + 8);
  FrameMessage m;
  m.header = decode_header_json(std::string_view(hp, hlen));
  const std::uint32_t plen = detail::get_u32_be(bytes.data() + 8 + hlen);
  const std::size_t start = 12 + std::size_t{hlen};
  if (bytes.size() != start + plen) {
    throw MalformedMessageError("payload length " + std::to_string(plen) + " disagrees with " +
                                std::to_string(bytes.size() - start) + " remaining bytes");
  }
  m.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start), bytes.end());
  validate_payload(m.header, m.payload);
  return m;
}

inline FrameMessage make_kp17_message(std::string camera_id, std::uint64_t seq, TimestampUs ts_us,
                                      std::span<const PoseDetection> detections, int width = 640, int height = 480) {
  return {{std::move(camera_id), seq, ts_us, width, height, Encoding::kp17}, encode_kp17(detections)};
}

}  // namespace gridtrack
