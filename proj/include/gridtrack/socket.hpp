#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "frame_codec.hpp"

namespace gridtrack::net {

class TimeoutError : public TransportError {
 public:
  using TransportError::TransportError;
};

// Peer closed the connection.
class ClosedError : public TransportError {
 public:
  using TransportError::TransportError;
};

using Millis = std::chrono::milliseconds;

inline std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

// Owns a file descriptor.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~Socket() { close(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }

  void close() {
    if (fd_ >= 0) ::close(std::exchange(fd_, -1));
  }

  // Unblocks a reader in another thread.
  void shutdown() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

  void send_all(std::span<const std::byte> data) {
    std::size_t sent = 0;
    while (sent < data.size()) {
      const auto n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError(errno_text("send"));
      }
      sent += static_cast<std::size_t>(n);
    }
  }

  // Waits until readable; false on timeout. A negative timeout waits forever.
  bool wait_readable(Millis timeout) {
    pollfd p{fd_, POLLIN, 0};
    while (true) {
      const int r = ::poll(&p, 1, static_cast<int>(timeout.count()));
      if (r < 0 && errno == EINTR) continue;
      if (r < 0) throw TransportError(errno_text("poll"));
      return r > 0;
    }
  }

  // Fills `out` completely. Returns false on EOF before the first byte.
  bool recv_exact(std::span<std::byte> out, Millis timeout = Millis{-1}) {
    std::size_t got = 0;
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (got < out.size()) {
      if (timeout.count() >= 0) {
        const auto left = std::chrono::duration_cast<Millis>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0 || !wait_readable(left)) throw TimeoutError("receive timed out");
      }
      const auto n = ::recv(fd_, out.data() + got, out.size() - got, 0);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError(errno_text("recv"));
      }
      if (n == 0) {
        if (got == 0) return false;
        throw ClosedError("connection closed mid-message");
      }
      got += static_cast<std::size_t>(n);
    }
    return true;
  }

 private:
  int fd_{-1};
};

struct Endpoint {
  std::string host{"127.0.0.1"};
  std::uint16_t port{kDefaultPort};
};

inline Endpoint parse_endpoint(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos) return {text, kDefaultPort};
  Endpoint e{text.substr(0, colon), 0};
  try {
    const int p = std::stoi(text.substr(colon + 1));
    if (p <= 0 || p > 65535) throw ConfigError("port out of range in '" + text + "'");
    e.port = static_cast<std::uint16_t>(p);
  } catch (const std::logic_error&) {
    throw ConfigError("bad port in '" + text + "'");
  }
  return e;
}

inline sockaddr_in resolve(const Endpoint& ep) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (const int rc = ::getaddrinfo(ep.host.c_str(), nullptr, &hints, &res); rc != 0 || res == nullptr) {
    throw TransportError("cannot resolve " + ep.host + ": " + ::gai_strerror(rc));
  }
  sockaddr_in addr = *reinterpret_cast<sockaddr_in*>(res->ai_addr);
  ::freeaddrinfo(res);
  addr.sin_port = htons(ep.port);
  return addr;
}

inline Socket connect_tcp(const Endpoint& ep) {
  const auto addr = resolve(ep);
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.valid()) throw TransportError(errno_text("socket"));
  if (::connect(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
    throw TransportError(errno_text(("connect " + ep.host + ":" + std::to_string(ep.port)).c_str()));
  }
  const int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return s;
}

class Listener {
 public:
  // Port 0 binds an ephemeral port; see port().
  explicit Listener(const Endpoint& ep) {
    auto addr = ep.host.empty() || ep.host == "0.0.0.0" ? sockaddr_in{} : resolve(ep);
    addr.sin_family = AF_INET;
    if (ep.host.empty() || ep.host == "0.0.0.0") addr.sin_addr.s_addr = htonl(INADDR_ANY);
    addr.sin_port = htons(ep.port);
    sock_ = Socket(::socket(AF_INET, SOCK_STREAM, 0));
    if (!sock_.valid()) throw TransportError(errno_text("socket"));
    const int one = 1;
    ::setsockopt(sock_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(sock_.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
      throw TransportError(errno_text("bind"));
    }
    if (::listen(sock_.fd(), 16) != 0) throw TransportError(errno_text("listen"));
    sockaddr_in bound{};
    socklen_t len = sizeof bound;
    ::getsockname(sock_.fd(), reinterpret_cast<sockaddr*>(&bound), &len);
    port_ = ntohs(bound.sin_port);
  }

  std::uint16_t port() const { return port_; }

  std::optional<Socket> accept(Millis timeout) {
    if (!sock_.wait_readable(timeout)) return std::nullopt;
    Socket s(::accept(sock_.fd(), nullptr, nullptr));
    if (!s.valid()) return std::nullopt;
    const int one = 1;
    ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return s;
  }

 private:
  Socket sock_;
  std::uint16_t port_{0};
};

// Reads one length-framed message off a stream. Returns nullopt on a clean EOF between
// messages. Bad magic or oversized lengths leave the stream unsynchronized and throw; a framed
// message with a bad header is returned intact for decode_frame to reject.
inline std::optional<std::vector<std::byte>> read_frame_bytes(Socket& s, Millis timeout = Millis{-1}) {
  std::vector<std::byte> buf(8);
  if (!s.recv_exact(buf, timeout)) return std::nullopt;
  check_magic(std::span<const std::byte>(buf).first(4));
  const std::uint32_t hlen = detail::get_u32_be(buf.data() + 4);
  if (hlen > kMaxHeaderBytes) throw MalformedMessageError("header length exceeds limit");
  buf.resize(8 + std::size_t{hlen} + 4);
  if (!s.recv_exact(std::span(buf).subspan(8), timeout)) throw ClosedError("closed mid-message");
  const std::uint32_t plen = detail::get_u32_be(buf.data() + 8 + hlen);
  if (plen > kMaxPayloadBytes) throw MalformedMessageError("payload length exceeds limit");
  const std::size_t start = buf.size();
  buf.resize(start + plen);
  if (plen > 0 && !s.recv_exact(std::span(buf).subspan(start), timeout)) throw ClosedError("closed mid-message");
  return buf;
}

}  // namespace gridtrack::net
