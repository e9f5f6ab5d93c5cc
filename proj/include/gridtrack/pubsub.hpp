#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "frame_codec.hpp"

namespace gridtrack {

// Receiver-side conflation for PUB/SUB: one message per sender, always the highest seq seen.
class ConflationMap {
 public:
  // Returns false when the message is not newer than what is held for its sender.
  bool offer(FrameMessage m) {
    {
      std::lock_guard lock(mu_);
      auto it = latest_.find(m.header.camera_id);
      if (it != latest_.end() && m.header.seq <= it->second.header.seq) {
        ++discarded_;
        return false;
      }
      const auto id = m.header.camera_id;
      latest_.insert_or_assign(id, std::move(m));
    }
    cv_.notify_all();
    return true;
  }

  std::optional<FrameMessage> latest(const std::string& camera_id) const {
    std::lock_guard lock(mu_);
    auto it = latest_.find(camera_id);
    if (it == latest_.end()) return std::nullopt;
    return it->second;
  }

  // Newest message for the sender with seq > after, waiting up to `timeout`.
  std::optional<FrameMessage> wait_newer(const std::string& camera_id, std::optional<std::uint64_t> after,
                                         std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mu_);
    auto ready = [&] {
      auto it = latest_.find(camera_id);
      return it != latest_.end() && (!after || it->second.header.seq > *after);
    };
    if (!cv_.wait_for(lock, timeout, ready)) return std::nullopt;
    return latest_.at(camera_id);
  }

  std::map<std::string, std::uint64_t> seq_snapshot() const {
    std::lock_guard lock(mu_);
    std::map<std::string, std::uint64_t> out;
    for (const auto& [id, m] : latest_) out.emplace(id, m.header.seq);
    return out;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return latest_.size();
  }

  std::uint64_t discarded() const {
    std::lock_guard lock(mu_);
    return discarded_;
  }

 private:
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::map<std::string, FrameMessage> latest_;
  std::uint64_t discarded_{0};
};

}  // namespace gridtrack
