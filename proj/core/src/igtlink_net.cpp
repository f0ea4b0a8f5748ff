#include "brachy/igtlink.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace brachy::igtl {

namespace {

constexpr int kPollMs = 50;

[[noreturn]] void fail_errno(const std::string& what) {
  fail(ErrorCode::Io, what + ": " + std::strerror(errno));
}

void close_fd(int& fd) {
  if (fd >= 0) {
    ::close(fd);
    fd = -1;
  }
}

std::string peer_address(const sockaddr_storage& ss) {
  char host[INET6_ADDRSTRLEN] = {};
  std::uint16_t port = 0;
  if (ss.ss_family == AF_INET) {
    const auto* a = reinterpret_cast<const sockaddr_in*>(&ss);
    ::inet_ntop(AF_INET, &a->sin_addr, host, sizeof host);
    port = ntohs(a->sin_port);
  } else if (ss.ss_family == AF_INET6) {
    const auto* a = reinterpret_cast<const sockaddr_in6*>(&ss);
    ::inet_ntop(AF_INET6, &a->sin6_addr, host, sizeof host);
    port = ntohs(a->sin6_port);
  }
  return std::string(host) + ":" + std::to_string(port);
}

}  // namespace

Connection::Connection(Connection&& other) noexcept : fd_(other.fd_), decoder_(std::move(other.decoder_)) {
  other.fd_ = -1;
}

Connection& Connection::operator=(Connection&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = other.fd_;
    decoder_ = std::move(other.decoder_);
    other.fd_ = -1;
  }
  return *this;
}

Connection::~Connection() { close(); }

void Connection::close() { close_fd(fd_); }

Connection Connection::connect(const std::string& host, std::uint16_t port, int timeout_ms) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res); rc != 0) {
    fail(ErrorCode::Io, "resolve " + host + ": " + ::gai_strerror(rc));
  }
  std::string last_error = "no addresses";
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    int fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) continue;
    const int flags = ::fcntl(fd, F_GETFL);
    ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
    int rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
    if (rc != 0 && errno == EINPROGRESS) {
      pollfd p{fd, POLLOUT, 0};
      rc = ::poll(&p, 1, timeout_ms) == 1 ? 0 : -1;
      if (rc == 0) {
        int err = 0;
        socklen_t len = sizeof err;
        ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
        if (err != 0) {
          errno = err;
          rc = -1;
        }
      } else {
        errno = ETIMEDOUT;
      }
    }
    if (rc == 0) {
      ::fcntl(fd, F_SETFL, flags);
      const int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      ::freeaddrinfo(res);
      return Connection(fd);
    }
    last_error = std::strerror(errno);
    ::close(fd);
  }
  ::freeaddrinfo(res);
  fail(ErrorCode::Io, "connect " + host + ":" + std::to_string(port) + ": " + last_error);
}

void Connection::send_bytes(std::span<const std::uint8_t> bytes) {
  if (fd_ < 0) fail(ErrorCode::State, "send on closed connection");
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t n = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      fail_errno("send");
    }
    sent += static_cast<std::size_t>(n);
  }
}

void Connection::send(const Message& msg) { send_bytes(encode(msg)); }

std::optional<DecodeResult> Connection::receive(int timeout_ms) {
  std::vector<std::uint8_t> chunk(64 * 1024);
  while (true) {
    DecodeResult r = decoder_.next();
    if (r.status != DecodeStatus::NeedMore) return r;
    if (fd_ < 0) return std::nullopt;
    pollfd p{fd_, POLLIN, 0};
    const int pr = ::poll(&p, 1, timeout_ms);
    if (pr < 0) {
      if (errno == EINTR) continue;
      fail_errno("poll");
    }
    if (pr == 0) return std::nullopt;
    const ssize_t n = ::recv(fd_, chunk.data(), chunk.size(), 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      fail_errno("recv");
    }
    if (n == 0) {
      close();
      r = decoder_.next();
      if (r.status == DecodeStatus::NeedMore) return std::nullopt;
      return r;
    }
    decoder_.feed(std::span(chunk.data(), static_cast<std::size_t>(n)));
  }
}

void push_volume(Connection& conn, const ScalarVolume& vol, const std::string& device_name) {
  auto [geometry, image] = volume_messages(vol, device_name);
  std::vector<std::uint8_t> bytes = encode(geometry);
  const auto img = encode(image);
  bytes.insert(bytes.end(), img.begin(), img.end());
  conn.send_bytes(bytes);
}

Server::Server(ServerOptions options, Handler handler, ErrorHandler on_error)
    : options_(std::move(options)), handler_(std::move(handler)), on_error_(std::move(on_error)) {}

Server::~Server() { stop(); }

void Server::start() {
  if (listen_fd_ >= 0) fail(ErrorCode::State, "igtlink server already started");
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE | AI_NUMERICHOST;
  addrinfo* res = nullptr;
  if (int rc = ::getaddrinfo(options_.bind_address.c_str(), std::to_string(options_.port).c_str(), &hints, &res);
      rc != 0) {
    fail(ErrorCode::Io, "bind address " + options_.bind_address + ": " + ::gai_strerror(rc));
  }
  int fd = ::socket(res->ai_family, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) {
    ::freeaddrinfo(res);
    fail_errno("socket");
  }
  const int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(fd, res->ai_addr, res->ai_addrlen) != 0 || ::listen(fd, 64) != 0) {
    const std::string err = std::strerror(errno);
    ::freeaddrinfo(res);
    ::close(fd);
    fail(ErrorCode::Io, "bind " + options_.bind_address + ":" + std::to_string(options_.port) + ": " + err);
  }
  ::freeaddrinfo(res);
  sockaddr_storage ss{};
  socklen_t len = sizeof ss;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&ss), &len);
  port_ = ss.ss_family == AF_INET6 ? ntohs(reinterpret_cast<sockaddr_in6*>(&ss)->sin6_port)
                                   : ntohs(reinterpret_cast<sockaddr_in*>(&ss)->sin_port);
  listen_fd_ = fd;
  stopping_ = false;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void Server::accept_loop() {
  while (!stopping_) {
    pollfd p{listen_fd_, POLLIN, 0};
    if (::poll(&p, 1, kPollMs) <= 0) continue;
    sockaddr_storage ss{};
    socklen_t len = sizeof ss;
    const int fd = ::accept4(listen_fd_, reinterpret_cast<sockaddr*>(&ss), &len, SOCK_CLOEXEC);
    if (fd < 0) continue;
    Peer peer{next_id_++, peer_address(ss)};
    reap();
    std::lock_guard lock(workers_mutex_);
    Worker& w = workers_.emplace_back();
    w.thread = std::thread([this, fd, peer, &w] { serve_connection(fd, peer, &w); });
  }
}

void Server::serve_connection(int fd, Peer peer, Worker* self) {
  StreamDecoder decoder(options_.max_body);
  std::vector<std::uint8_t> chunk(64 * 1024);
  bool open = true;
  bool errored = false;
  while (open) {
    pollfd p{fd, POLLIN, 0};
    const int pr = ::poll(&p, 1, kPollMs);
    if (pr < 0 && errno != EINTR) break;
    if (pr == 0) {
      // idle: after stop() there is nothing in flight left to drain
      if (stopping_) break;
      continue;
    }
    if (pr < 0) continue;
    const ssize_t n = ::recv(fd, chunk.data(), chunk.size(), 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) open = false;
    if (n > 0) decoder.feed(std::span(chunk.data(), static_cast<std::size_t>(n)));
    while (true) {
      DecodeResult r = decoder.next();
      if (r.status == DecodeStatus::NeedMore) break;
      if (r.status == DecodeStatus::Ok) {
        if (handler_) handler_(peer, *r.message);
        continue;
      }
      if (on_error_) on_error_(peer, r);
      if (r.status == DecodeStatus::Oversize || r.status == DecodeStatus::Malformed) {
        errored = true;
        open = false;
        break;
      }
    }
  }
  if (errored) ++closed_on_error_;
  ::close(fd);
  self->done = true;
}

void Server::reap() {
  std::lock_guard lock(workers_mutex_);
  for (auto it = workers_.begin(); it != workers_.end();) {
    if (it->done) {
      it->thread.join();
      it = workers_.erase(it);
    } else {
      ++it;
    }
  }
}

std::size_t Server::active_connections() const {
  std::lock_guard lock(workers_mutex_);
  std::size_t n = 0;
  for (const auto& w : workers_) n += w.done ? 0 : 1;
  return n;
}

void Server::stop() {
  if (listen_fd_ < 0) return;
  stopping_ = true;
  if (acceptor_.joinable()) acceptor_.join();
  close_fd(listen_fd_);
  std::lock_guard lock(workers_mutex_);
  for (auto& w : workers_) {
    if (w.thread.joinable()) w.thread.join();
  }
  workers_.clear();
}

}  // namespace brachy::igtl
