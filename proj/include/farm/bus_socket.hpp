#pragma once

// Stream-socket transport for the device bus: tcp://host:port or unix:/path.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <array>
#include <atomic>
#include <cerrno>
#include <charconv>
#include <chrono>
#include <cstring>
#include <list>
#include <mutex>
#include <string>
#include <thread>
#include <utility>

#include "farm/bus.hpp"

namespace farm::bus {

struct Endpoint {
  enum class Kind : std::uint8_t { tcp, unix_socket };
  Kind kind = Kind::tcp;
  std::string host = "127.0.0.1";
  int port = 0;
  std::string path;

  std::string str() const { return kind == Kind::tcp ? "tcp://" + host + ":" + std::to_string(port) : "unix:" + path; }
};

inline Endpoint parse_endpoint(std::string_view s) {
  Endpoint e;
  if (s.starts_with("unix:")) {
    e.kind = Endpoint::Kind::unix_socket;
    e.path = std::string(s.substr(5));
    if (e.path.empty() || e.path.size() >= sizeof(sockaddr_un::sun_path)) throw std::invalid_argument("bad unix socket path");
    return e;
  }
  if (s.starts_with("tcp://")) s.remove_prefix(6);
  auto colon = s.rfind(':');
  if (colon == std::string_view::npos) throw std::invalid_argument("endpoint needs host:port");
  e.host = std::string(s.substr(0, colon));
  auto port = s.substr(colon + 1);
  int p = 0;
  auto [end, ec] = std::from_chars(port.data(), port.data() + port.size(), p);
  if (ec != std::errc{} || end != port.data() + port.size() || p < 0 || p > 65535)
    throw std::invalid_argument("bad port in endpoint");
  e.port = p;
  return e;
}

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
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  void shutdown() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

  bool send_all(std::string_view data) const {
    while (!data.empty()) {
      ssize_t n = ::send(fd_, data.data(), data.size(), MSG_NOSIGNAL);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) return false;
      data.remove_prefix(static_cast<std::size_t>(n));
    }
    return true;
  }

 private:
  int fd_ = -1;
};

namespace detail {

inline Socket open_socket(const Endpoint& e) {
  int fd = ::socket(e.kind == Endpoint::Kind::tcp ? AF_INET : AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw TransportError(std::string("socket: ") + std::strerror(errno));
  return Socket(fd);
}

inline sockaddr_in tcp_addr(const Endpoint& e) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(e.port));
  std::string host = e.host == "localhost" ? "127.0.0.1" : e.host;
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) throw TransportError("bad IPv4 address " + e.host);
  return addr;
}

inline sockaddr_un unix_addr(const Endpoint& e) {
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  std::strncpy(addr.sun_path, e.path.c_str(), sizeof(addr.sun_path) - 1);
  return addr;
}

}  // namespace detail

// Accepts any number of clients; each connection is served on its own thread
// and all commands go through one Dispatcher.
class Server {
 public:
  Server(Dispatcher& dispatcher, Endpoint endpoint) : dispatcher_(dispatcher), endpoint_(std::move(endpoint)) {}
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;
  ~Server() { stop(); }

  void start() {
    listener_ = detail::open_socket(endpoint_);
    int rc = 0;
    if (endpoint_.kind == Endpoint::Kind::tcp) {
      int one = 1;
      ::setsockopt(listener_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
      auto addr = detail::tcp_addr(endpoint_);
      rc = ::bind(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
      if (rc == 0) {
        socklen_t len = sizeof(addr);
        ::getsockname(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
        endpoint_.port = ntohs(addr.sin_port);
      }
    } else {
      ::unlink(endpoint_.path.c_str());
      auto addr = detail::unix_addr(endpoint_);
      rc = ::bind(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
    }
    if (rc != 0) throw TransportError("bind " + endpoint_.str() + ": " + std::strerror(errno));
    if (::listen(listener_.fd(), 16) != 0) throw TransportError(std::string("listen: ") + std::strerror(errno));
    running_ = true;
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  void stop() {
    if (!running_.exchange(false)) return;
    listener_.shutdown();
    if (acceptor_.joinable()) acceptor_.join();
    listener_.close();
    std::list<Connection> conns;
    {
      std::lock_guard lock(mu_);
      conns.swap(connections_);
    }
    for (auto& c : conns) c.sock.shutdown();
    for (auto& c : conns)
      if (c.thread.joinable()) c.thread.join();
    if (endpoint_.kind == Endpoint::Kind::unix_socket) ::unlink(endpoint_.path.c_str());
  }

  // Actual endpoint (resolved port when bound to port 0).
  const Endpoint& endpoint() const { return endpoint_; }

 private:
  struct Connection {
    Socket sock;
    std::thread thread;
  };

  void accept_loop() {
    while (running_) {
      pollfd pfd{listener_.fd(), POLLIN, 0};
      int pr = ::poll(&pfd, 1, 100);
      if (pr <= 0) continue;
      int fd = ::accept4(listener_.fd(), nullptr, nullptr, SOCK_CLOEXEC);
      if (fd < 0) continue;
      std::lock_guard lock(mu_);
      if (!running_) {
        ::close(fd);
        break;
      }
      connections_.emplace_back();
      auto& conn = connections_.back();
      conn.sock = Socket(fd);
      conn.thread = std::thread([this, &conn] { serve_connection(conn.sock); });
    }
  }

  void serve_connection(Socket& sock) {
    LineAssembler lines;
    std::array<char, 4096> buf{};
    bool alive = true;
    while (alive && running_) {
      ssize_t n = ::recv(sock.fd(), buf.data(), buf.size(), 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) break;
      lines.feed(std::string_view(buf.data(), static_cast<std::size_t>(n)), [&](std::optional<std::string> line) {
        if (!alive) return;
        std::string reply = line ? dispatcher_.handle_line(*line) : encode_response(Response::err(ErrCode::BADCMD, "line too long"));
        if (!sock.send_all(reply)) alive = false;
      });
    }
  }

  Dispatcher& dispatcher_;
  Endpoint endpoint_;
  Socket listener_;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::list<Connection> connections_;
};

// One outstanding command per connection.
class SocketClient final : public Client {
 public:
  explicit SocketClient(const Endpoint& e, std::chrono::milliseconds timeout = std::chrono::milliseconds(500))
      : timeout_(timeout) {
    sock_ = detail::open_socket(e);
    int rc = 0;
    if (e.kind == Endpoint::Kind::tcp) {
      auto addr = detail::tcp_addr(e);
      rc = ::connect(sock_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
      int one = 1;
      ::setsockopt(sock_.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    } else {
      auto addr = detail::unix_addr(e);
      rc = ::connect(sock_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
    }
    if (rc != 0) throw TransportError("connect " + e.str() + ": " + std::strerror(errno));
  }

  Response transact(const Command& cmd) override { return parse_response(roundtrip(encode_command(cmd))); }

  // Sends raw bytes and waits for one response line.
  std::string roundtrip(std::string_view line) {
    if (!sock_.send_all(line)) throw TransportError("send failed");
    return read_line();
  }

 private:
  std::string read_line() {
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    for (;;) {
      auto nl = pending_.find('\n');
      if (nl != std::string::npos) {
        std::string line = pending_.substr(0, nl + 1);
        pending_.erase(0, nl + 1);
        return line;
      }
      auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw TransportError("bus command timed out");
      pollfd pfd{sock_.fd(), POLLIN, 0};
      int pr = ::poll(&pfd, 1, static_cast<int>(left.count()));
      if (pr < 0 && errno == EINTR) continue;
      if (pr <= 0) throw TransportError("bus command timed out");
      std::array<char, 4096> buf{};
      ssize_t n = ::recv(sock_.fd(), buf.data(), buf.size(), 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw TransportError("bus connection closed");
      pending_.append(buf.data(), static_cast<std::size_t>(n));
    }
  }

  Socket sock_;
  std::chrono::milliseconds timeout_;
  std::string pending_;
};

}  // namespace farm::bus
