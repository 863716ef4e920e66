#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "advloop/core/error.hpp"
#include "advloop/netchan/wire.hpp"

namespace advloop {

struct HostPort {
  std::string host;
  std::uint16_t port = 0;
};

/// "host:port"; the host may be empty (meaning 127.0.0.1).
inline HostPort parse_host_port(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) fail(ErrorKind::invalid_config, "address '" + s + "' must be host:port");
  HostPort hp;
  hp.host = s.substr(0, colon);
  if (hp.host.empty()) hp.host = "127.0.0.1";
  const std::string port = s.substr(colon + 1);
  char* end = nullptr;
  const long v = std::strtol(port.c_str(), &end, 10);
  if (port.empty() || *end != '\0' || v < 0 || v > 65535) fail(ErrorKind::invalid_config, "bad port in '" + s + "'");
  hp.port = static_cast<std::uint16_t>(v);
  return hp;
}

namespace detail {

inline sockaddr_in resolve_ipv4(const HostPort& hp) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(hp.port);
  if (inet_pton(AF_INET, hp.host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (getaddrinfo(hp.host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr)
    fail(ErrorKind::network, "cannot resolve host '" + hp.host + "'");
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  freeaddrinfo(res);
  return addr;
}

inline std::uint64_t steady_us() {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now().time_since_epoch())
          .count());
}

}  // namespace detail

enum class LinkEventKind { up, down };

struct LinkEvent {
  LinkEventKind kind = LinkEventKind::up;
  std::uint64_t time_us = 0;  // steady clock
  std::string reason;
};

struct TcpLinkOptions {
  int heartbeat_ms = 500;
  int missed_heartbeats = 3;  // silence of this many periods means the peer is gone
};

/// One persistent connection carrying length-delimited WireMessages.
///
/// A reader thread parses incoming bytes into an ordered queue; a heartbeat
/// thread sends a heartbeat every period and declares the link down after
/// `missed_heartbeats` silent periods. EOF or a socket error also marks the
/// link down. Heartbeats are consumed internally and never queued.
class TcpLink {
 public:
  TcpLink(int fd, TcpLinkOptions opt) : fd_(fd), opt_(opt), last_rx_us_(detail::steady_us()) {
    const int one = 1;
    setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    events_.push_back({LinkEventKind::up, detail::steady_us(), "connected"});
    reader_ = std::thread([this] { read_loop(); });
    heart_ = std::thread([this] { heartbeat_loop(); });
  }
  TcpLink(const TcpLink&) = delete;
  TcpLink& operator=(const TcpLink&) = delete;
  ~TcpLink() { close(); }

  static std::unique_ptr<TcpLink> connect(const std::string& address, TcpLinkOptions opt = {}) {
    const auto addr = detail::resolve_ipv4(parse_host_port(address));
    const int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd < 0) fail(ErrorKind::network, std::string("socket: ") + std::strerror(errno));
    if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
      const int e = errno;
      ::close(fd);
      fail(ErrorKind::network, "connect to " + address + " failed: " + std::strerror(e));
    }
    return std::make_unique<TcpLink>(fd, opt);
  }

  /// Thread-safe; fails with a network error once the link is down.
  void send(const WireMessage& m) {
    if (!up_.load()) fail(ErrorKind::network, "send on a link that is down");
    const Bytes b = encode(m);
    std::lock_guard lock(write_mu_);
    std::size_t off = 0;
    while (off < b.size()) {
      const ssize_t n = ::send(fd_, b.data() + off, b.size() - off, MSG_NOSIGNAL);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) {
        mark_down("send failed");
        fail(ErrorKind::network, "send failed: link down");
      }
      off += static_cast<std::size_t>(n);
    }
  }

  /// Drains every queued message without blocking.
  std::vector<WireMessage> poll() {
    std::lock_guard lock(mu_);
    std::vector<WireMessage> out(std::make_move_iterator(queue_.begin()), std::make_move_iterator(queue_.end()));
    queue_.clear();
    return out;
  }

  /// Blocks until a message arrives, the link goes down, or the timeout ends.
  std::optional<WireMessage> wait(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, timeout, [&] { return !queue_.empty() || !up_.load(); });
    if (queue_.empty()) return std::nullopt;
    WireMessage m = std::move(queue_.front());
    queue_.pop_front();
    return m;
  }

  bool up() const { return up_.load(); }

  std::vector<LinkEvent> take_events() {
    std::lock_guard lock(mu_);
    auto out = std::move(events_);
    events_.clear();
    return out;
  }

  /// Forcibly drops the connection (the peer sees EOF).
  void close() {
    if (closed_.exchange(true)) return;
    stop_.store(true);
    ::shutdown(fd_, SHUT_RDWR);
    mark_down("closed locally");
    if (reader_.joinable()) reader_.join();
    if (heart_.joinable()) heart_.join();
    ::close(fd_);
  }

 private:
  void mark_down(const std::string& reason) {
    if (!up_.exchange(false)) return;
    {
      std::lock_guard lock(mu_);
      events_.push_back({LinkEventKind::down, detail::steady_us(), reason});
    }
    cv_.notify_all();
  }

  void read_loop() {
    Bytes buf;
    std::uint8_t chunk[65536];
    while (!stop_.load()) {
      pollfd p{fd_, POLLIN, 0};
      const int r = ::poll(&p, 1, 50);
      if (r < 0 && errno == EINTR) continue;
      if (r == 0) continue;
      const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) {
        mark_down(n == 0 ? "peer closed the connection" : "receive error");
        return;
      }
      last_rx_us_.store(detail::steady_us());
      buf.insert(buf.end(), chunk, chunk + n);
      std::size_t start = 0;
      try {
        for (;;) {
          std::size_t used = 0;
          auto m = try_decode_prefix(std::span<const std::uint8_t>(buf).subspan(start), used);
          if (!m) break;
          start += used;
          if (m->type == MessageType::heartbeat) continue;
          {
            std::lock_guard lock(mu_);
            queue_.push_back(std::move(*m));
          }
          cv_.notify_all();
        }
      } catch (const Error& e) {
        mark_down(std::string("protocol error: ") + e.what());
        return;
      }
      buf.erase(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(start));
    }
  }

  void heartbeat_loop() {
    std::uint32_t seq = 0;
    const auto period = std::chrono::milliseconds(opt_.heartbeat_ms);
    auto next = std::chrono::steady_clock::now();
    while (!stop_.load() && up_.load()) {
      WireMessage hb{MessageType::heartbeat, seq++, detail::steady_us(), {}};
      try {
        send(hb);
      } catch (const Error&) {
        return;
      }
      next += period;
      const auto limit = static_cast<std::uint64_t>(opt_.heartbeat_ms) * 1000u *
                         static_cast<std::uint64_t>(opt_.missed_heartbeats);
      while (!stop_.load() && std::chrono::steady_clock::now() < next) {
        if (detail::steady_us() - last_rx_us_.load() > limit) {
          mark_down("missed heartbeats");
          return;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
      }
    }
  }

  int fd_;
  TcpLinkOptions opt_;
  std::atomic<bool> up_{true}, stop_{false}, closed_{false};
  std::atomic<std::uint64_t> last_rx_us_;
  std::mutex mu_, write_mu_;
  std::condition_variable cv_;
  std::deque<WireMessage> queue_;
  std::vector<LinkEvent> events_;
  std::thread reader_, heart_;
};

/// Listening socket. Port 0 picks a free port; see port().
class TcpServer {
 public:
  explicit TcpServer(const std::string& bind_address, TcpLinkOptions opt = {}) : opt_(opt) {
    const auto addr = detail::resolve_ipv4(parse_host_port(bind_address));
    fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd_ < 0) fail(ErrorKind::network, std::string("socket: ") + std::strerror(errno));
    const int one = 1;
    setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd_, 4) != 0) {
      const int e = errno;
      ::close(fd_);
      fail(ErrorKind::network, "cannot listen on " + bind_address + ": " + std::strerror(e));
    }
    sockaddr_in bound{};
    socklen_t len = sizeof bound;
    getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len);
    port_ = ntohs(bound.sin_port);
  }
  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;
  ~TcpServer() { ::close(fd_); }

  std::uint16_t port() const { return port_; }

  /// Waits for one client; nullptr on timeout.
  std::unique_ptr<TcpLink> accept(std::chrono::milliseconds timeout) {
    pollfd p{fd_, POLLIN, 0};
    if (::poll(&p, 1, static_cast<int>(timeout.count())) <= 0) return nullptr;
    const int c = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (c < 0) fail(ErrorKind::network, std::string("accept: ") + std::strerror(errno));
    return std::make_unique<TcpLink>(c, opt_);
  }

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
  TcpLinkOptions opt_;
};

}  // namespace advloop
