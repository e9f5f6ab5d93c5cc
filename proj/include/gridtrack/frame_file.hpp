#pragma once

// Recorded streams: a file of back-to-back wire messages, as a camera would send them.

#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "frame_codec.hpp"

namespace gridtrack {

inline std::vector<FrameMessage> split_frames(std::span<const std::byte> bytes) {
  std::vector<FrameMessage> out;
  std::size_t at = 0;
  while (at < bytes.size()) {
    const auto rest = bytes.subspan(at);
    if (rest.size() < 12) throw MalformedMessageError("trailing bytes after message " + std::to_string(out.size()));
    check_magic(rest.first(4));
    const std::uint32_t hlen = detail::get_u32_be(rest.data() + 4);
    if (hlen > kMaxHeaderBytes || rest.size() < 12 + std::size_t{hlen}) throw MalformedMessageError("truncated header");
    const std::uint32_t plen = detail::get_u32_be(rest.data() + 8 + hlen);
    const std::size_t len = 12 + std::size_t{hlen} + plen;
    if (plen > kMaxPayloadBytes || rest.size() < len) throw MalformedMessageError("truncated payload");
    out.push_back(decode_frame(rest.first(len)));
    at += len;
  }
  return out;
}

inline std::vector<FrameMessage> read_frame_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return split_frames(std::as_bytes(std::span(raw)));
}

inline void write_frame_file(const std::string& path, std::span<const FrameMessage> frames) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  for (const auto& f : frames) {
    const auto bytes = encode_frame(f);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
}

}  // namespace gridtrack
