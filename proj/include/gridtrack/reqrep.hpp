#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "frame_codec.hpp"
#include "mailbox.hpp"
#include "socket.hpp"

namespace gridtrack {

inline constexpr net::Millis kDefaultRepTimeout{5000};

// Sending side of a REQ/REP session. One message may be outstanding; the sender must collect
// the 1-byte REP before sending again.
class ReqClient {
 public:
  explicit ReqClient(net::Endpoint station) : station_(std::move(station)) {}

  void connect() {
    sock_ = net::connect_tcp(station_);
    outstanding_ = false;
  }

  bool connected() const { return sock_.valid(); }
  bool outstanding() const { return outstanding_; }

  void send(const FrameMessage& m) {
    if (outstanding_) throw ProtocolViolationError("send before REP on a REQ/REP session");
    if (!sock_.valid()) connect();
    const auto bytes = encode_frame(m);
    sock_.send_all(bytes);
    outstanding_ = true;
  }

  // Throws net::TimeoutError if no REP arrives in time.
  void await_reply(net::Millis timeout = kDefaultRepTimeout) {
    if (!outstanding_) throw ProtocolViolationError("no request outstanding");
    std::byte rep{};
    if (!sock_.recv_exact(std::span(&rep, 1), timeout)) throw net::ClosedError("station closed the session");
    if (rep != kRepByte) throw ProtocolViolationError("unexpected REP byte");
    outstanding_ = false;
  }

  // send + await_reply. On timeout or a dropped connection the session is torn down and
  // reopened; the frame counts as lost and false is returned.
  bool request(const FrameMessage& m, net::Millis timeout = kDefaultRepTimeout) {
    try {
      send(m);
      await_reply(timeout);
      return true;
    } catch (const TransportError&) {
      reset();
      return false;
    }
  }

  void reset() {
    sock_.close();
    outstanding_ = false;
  }

 private:
  net::Endpoint station_;
  net::Socket sock_;
  bool outstanding_{false};
};

// Non-blocking sending side: fire and forget.
class PubClient {
 public:
  explicit PubClient(net::Endpoint station) : station_(std::move(station)) {}

  void connect() { sock_ = net::connect_tcp(station_); }

  void publish(const FrameMessage& m) {
    if (!sock_.valid()) connect();
    sock_.send_all(encode_frame(m));
  }

  void close() { sock_.close(); }

 private:
  net::Endpoint station_;
  net::Socket sock_;
};

enum class TransportMode { reqrep, pubsub };

struct CameraNodeOptions {
  net::Endpoint station;
  TransportMode mode{TransportMode::reqrep};
  net::Millis rep_timeout{kDefaultRepTimeout};
  net::Millis reconnect_backoff{100};
  int connect_attempts{50};
};

struct CameraNodeStats {
  std::uint64_t sent{0};
  std::uint64_t acked{0};
  std::uint64_t timeouts{0};
  std::vector<std::uint64_t> sent_seqs;
};

/// Camera-side sender. A capture context put()s every frame into mailbox(); run() repeatedly
/// takes the newest frame, sends it and (under REQ/REP) blocks for the REP. Frames captured
/// while blocked overwrite each other in the mailbox and are never sent. run() returns once
/// the mailbox is closed and drained.
///
/// Sequence numbers are assigned at capture, so a REP timeout followed by a reconnect resumes
/// with whatever seq the newest frame carries.
class CameraNode {
 public:
  explicit CameraNode(CameraNodeOptions opt) : opt_(std::move(opt)), req_(opt_.station), pub_(opt_.station) {}

  LatestSlot<FrameMessage>& mailbox() { return mailbox_; }

  CameraNodeStats run() {
    CameraNodeStats stats;
    connect_with_retry();
    while (auto frame = mailbox_.take()) {
      if (opt_.mode == TransportMode::pubsub) {
        try {
          pub_.publish(*frame);
        } catch (const TransportError&) {
          pub_.close();
          continue;
        }
        ++stats.sent;
        stats.sent_seqs.push_back(frame->header.seq);
        continue;
      }
      if (!req_.connected()) connect_with_retry();
      ++stats.sent;
      stats.sent_seqs.push_back(frame->header.seq);
      if (req_.request(*frame, opt_.rep_timeout)) {
        ++stats.acked;
      } else {
        ++stats.timeouts;
        std::this_thread::sleep_for(opt_.reconnect_backoff);
      }
    }
    req_.reset();
    pub_.close();
    return stats;
  }

 private:
  void connect_with_retry() {
    for (int attempt = 1;; ++attempt) {
      try {
        if (opt_.mode == TransportMode::reqrep) {
          req_.connect();
        } else {
          pub_.connect();
        }
        return;
      } catch (const TransportError&) {
        if (attempt >= opt_.connect_attempts) throw;
        std::this_thread::sleep_for(opt_.reconnect_backoff);
      }
    }
  }

  CameraNodeOptions opt_;
  LatestSlot<FrameMessage> mailbox_;
  ReqClient req_;
  PubClient pub_;
};

// Feeds frames into a mailbox at the pace of their capture timestamps, scaled by time_scale
// (0.5 plays twice as fast as real time), then closes it.
inline void replay_paced(LatestSlot<FrameMessage>& mailbox, std::span<const FrameMessage> frames, double time_scale = 1.0) {
  if (!frames.empty()) {
    const auto start = std::chrono::steady_clock::now();
    const auto t0 = frames.front().header.ts_us;
    for (const auto& f : frames) {
      const auto offset = std::chrono::microseconds(
          static_cast<std::int64_t>(static_cast<double>(f.header.ts_us - t0) * time_scale));
      std::this_thread::sleep_until(start + offset);
      mailbox.put(f);
    }
  }
  mailbox.close();
}

}  // namespace gridtrack
