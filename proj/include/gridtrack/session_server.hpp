#pragma once

#include <atomic>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <thread>

#include "frame_codec.hpp"
#include "reqrep.hpp"
#include "socket.hpp"

namespace gridtrack {

struct SessionHandlers {
  // Runs on the session's own thread; under REQ/REP the REP is sent after it returns.
  std::function<void(FrameMessage&&)> on_message;
  std::function<void(const Error&)> on_malformed;
};

struct SessionServerStats {
  std::uint64_t sessions{0};
  std::uint64_t framed{0};
  std::uint64_t malformed{0};
  std::uint64_t reps{0};
  std::uint64_t desynced{0};
  std::uint64_t handler_errors{0};
};

/// Accepts camera sessions and runs each on its own thread. Messages within a session are
/// handled strictly in order; sessions proceed independently.
class SessionServer {
 public:
  SessionServer(const net::Endpoint& listen, TransportMode mode, SessionHandlers handlers)
      : listener_(listen), mode_(mode), handlers_(std::move(handlers)) {}

  SessionServer(const SessionServer&) = delete;
  SessionServer& operator=(const SessionServer&) = delete;
  ~SessionServer() { stop(); }

  std::uint16_t port() const { return listener_.port(); }

  void start() {
    running_ = true;
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  void stop() {
    if (!running_.exchange(false)) return;
    if (acceptor_.joinable()) acceptor_.join();
    std::lock_guard lock(sessions_mu_);
    for (auto& s : sessions_) s->sock.shutdown();
    for (auto& s : sessions_) {
      if (s->th.joinable()) s->th.join();
    }
    sessions_.clear();
  }

  // Sessions currently open.
  std::size_t active_sessions() const {
    std::lock_guard lock(sessions_mu_);
    std::size_t n = 0;
    for (const auto& s : sessions_) n += s->done ? 0 : 1;
    return n;
  }

  SessionServerStats stats() const {
    std::lock_guard lock(sessions_mu_);
    return {sessions_.size() + reaped_, framed_, malformed_, reps_, desynced_, handler_errors_};
  }

 private:
  struct Session {
    net::Socket sock;
    std::thread th;
    std::atomic<bool> done{false};
  };

  void accept_loop() {
    while (running_) {
      auto sock = listener_.accept(net::Millis{50});
      reap();
      if (!sock) continue;
      auto session = std::make_unique<Session>();
      session->sock = std::move(*sock);
      auto* raw = session.get();
      std::lock_guard lock(sessions_mu_);
      session->th = std::thread([this, raw] { serve(*raw); });
      sessions_.push_back(std::move(session));
    }
  }

  void reap() {
    std::lock_guard lock(sessions_mu_);
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      if ((*it)->done) {
        (*it)->th.join();
        it = sessions_.erase(it);
        ++reaped_;
      } else {
        ++it;
      }
    }
  }

  void serve(Session& s) {
    try {
      while (running_) {
        auto bytes = net::read_frame_bytes(s.sock);
        if (!bytes) break;
        ++framed_;
        try {
          auto msg = decode_frame(*bytes);
          if (handlers_.on_message) handlers_.on_message(std::move(msg));
        } catch (const MalformedMessageError& e) {
          ++malformed_;
          if (handlers_.on_malformed) handlers_.on_malformed(e);
        } catch (const Error&) {
          ++handler_errors_;
        }
        if (mode_ == TransportMode::reqrep) {
          const std::byte rep = kRepByte;
          s.sock.send_all(std::span(&rep, 1));
          ++reps_;
        }
      }
    } catch (const MalformedMessageError& e) {
      // Framing lost; nothing after this point can be trusted.
      ++malformed_;
      ++desynced_;
      if (handlers_.on_malformed) handlers_.on_malformed(e);
    } catch (const TransportError&) {
    }
    // The socket is closed by whoever joins this thread.
    s.done = true;
  }

  net::Listener listener_;
  TransportMode mode_;
  SessionHandlers handlers_;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  mutable std::mutex sessions_mu_;
  std::list<std::unique_ptr<Session>> sessions_;
  std::uint64_t reaped_{0};
  std::atomic<std::uint64_t> framed_{0};
  std::atomic<std::uint64_t> malformed_{0};
  std::atomic<std::uint64_t> reps_{0};
  std::atomic<std::uint64_t> desynced_{0};
  std::atomic<std::uint64_t> handler_errors_{0};
};

}  // namespace gridtrack
