#pragma once

#include <condition_variable>
#include <cstdint>
#include <mutex>
#include <optional>
#include <utility>

namespace gridtrack {

// Single-slot overwrite mailbox: put() replaces whatever is waiting, so a slow consumer always
// gets the newest item and nothing older is ever queued.
template <typename T>
class LatestSlot {
 public:
  void put(T value) {
    {
      std::lock_guard lock(mu_);
      if (slot_) ++overwritten_;
      slot_ = std::move(value);
      ++puts_;
    }
    cv_.notify_all();
  }

  // No more puts; take() drains the last item and then returns nullopt.
  void close() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  std::optional<T> take() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return slot_.has_value() || closed_; });
    return std::exchange(slot_, std::nullopt);
  }

  std::optional<T> try_take() {
    std::lock_guard lock(mu_);
    return std::exchange(slot_, std::nullopt);
  }

  std::uint64_t puts() const {
    std::lock_guard lock(mu_);
    return puts_;
  }

  // Items replaced before anyone took them.
  std::uint64_t overwritten() const {
    std::lock_guard lock(mu_);
    return overwritten_;
  }

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::optional<T> slot_;
  bool closed_{false};
  std::uint64_t puts_{0};
  std::uint64_t overwritten_{0};
};

}  // namespace gridtrack
