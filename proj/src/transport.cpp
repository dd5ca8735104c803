#include "avsim/transport.hpp"

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
#include <mutex>

#include "avsim/error.hpp"

namespace avsim::net {

using Clock = std::chrono::steady_clock;
using std::chrono::milliseconds;

Socket::~Socket() {
  if (fd_ >= 0) ::close(fd_);
}

Socket& Socket::operator=(Socket&& o) noexcept {
  if (this != &o) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = o.release();
  }
  return *this;
}

int Socket::release() {
  const int fd = fd_;
  fd_ = -1;
  return fd;
}

void Socket::shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

bool Socket::write_all(std::span<const std::uint8_t> data) {
  std::size_t done = 0;
  while (done < data.size()) {
    const ssize_t n = ::send(fd_, data.data() + done, data.size() - done, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    done += static_cast<std::size_t>(n);
  }
  return true;
}

long Socket::read_some(std::span<std::uint8_t> buffer, milliseconds timeout) {
  pollfd p{fd_, POLLIN, 0};
  int r = 0;
  do {
    r = ::poll(&p, 1, static_cast<int>(std::max<long long>(timeout.count(), 0)));
  } while (r < 0 && errno == EINTR);
  if (r < 0) return -1;
  if (r == 0) return 0;
  const ssize_t n = ::recv(fd_, buffer.data(), buffer.size(), 0);
  if (n <= 0) return -1;
  return static_cast<long>(n);
}

namespace {

void tune(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

class TcpChannel final : public Channel {
 public:
  TcpChannel(Socket s, std::string prefetched) : socket_(std::move(s)) {
    tune(socket_.fd());
    if (!prefetched.empty()) {
      decoder_.feed({reinterpret_cast<const std::uint8_t*>(prefetched.data()), prefetched.size()});
    }
  }

  bool send(const wire::Message& m) override {
    const auto bytes = wire::encode(m);
    std::lock_guard lock(send_mutex_);
    return socket_.write_all(bytes);
  }

  Received receive(milliseconds timeout) override {
    const auto deadline = Clock::now() + timeout;
    std::uint8_t buf[65536];
    for (;;) {
      if (auto d = decoder_.next()) {
        if (d->ok()) return {Received::Status::message, std::move(d->message), {}};
        return {Received::Status::error, std::nullopt, d->error->text};
      }
      if (decoder_.failed() || closed_) return {Received::Status::closed, std::nullopt, {}};
      const auto left = std::chrono::duration_cast<milliseconds>(deadline - Clock::now());
      const long n = socket_.read_some(buf, std::max(left, milliseconds(0)));
      if (n < 0) {
        closed_ = true;
        return {Received::Status::closed, std::nullopt, {}};
      }
      if (n == 0) return {Received::Status::timeout, std::nullopt, {}};
      decoder_.feed({buf, static_cast<std::size_t>(n)});
    }
  }

  void close() override { socket_.shutdown(); }
  std::string binding() const override { return "tcp"; }

 private:
  Socket socket_;
  std::mutex send_mutex_;
  wire::StreamDecoder decoder_;
  bool closed_ = false;
};

}  // namespace

std::unique_ptr<Channel> tcp_channel(Socket socket, std::string prefetched) {
  return std::make_unique<TcpChannel>(std::move(socket), std::move(prefetched));
}

Socket connect_tcp(const std::string& host, std::uint16_t port, milliseconds timeout) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (::getaddrinfo(host.c_str(), service.c_str(), &hints, &res) != 0 || res == nullptr) {
    throw UserError("cannot resolve " + host);
  }
  Socket s(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
  if (!s.valid()) {
    ::freeaddrinfo(res);
    throw UserError(std::string("socket: ") + std::strerror(errno));
  }
  const int flags = ::fcntl(s.fd(), F_GETFL, 0);
  ::fcntl(s.fd(), F_SETFL, flags | O_NONBLOCK);
  int rc = ::connect(s.fd(), res->ai_addr, res->ai_addrlen);
  ::freeaddrinfo(res);
  if (rc < 0 && errno == EINPROGRESS) {
    pollfd p{s.fd(), POLLOUT, 0};
    rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
    int err = 0;
    socklen_t len = sizeof err;
    ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
    rc = (rc == 1 && err == 0) ? 0 : -1;
  }
  if (rc < 0) throw UserError("cannot connect to " + host + ":" + service);
  ::fcntl(s.fd(), F_SETFL, flags);
  tune(s.fd());
  return s;
}

TcpListener::TcpListener(const std::string& host, std::uint16_t port) {
  socket_ = Socket(::socket(AF_INET, SOCK_STREAM, 0));
  if (!socket_.valid()) throw UserError(std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(socket_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    throw UserError("listen address must be an IPv4 address: " + host);
  }
  if (::bind(socket_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 ||
      ::listen(socket_.fd(), 16) < 0) {
    throw UserError("cannot listen on " + host + ":" + std::to_string(port) + ": " + std::strerror(errno));
  }
  socklen_t len = sizeof addr;
  ::getsockname(socket_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

std::optional<Socket> TcpListener::accept(milliseconds timeout) {
  if (!socket_.valid()) return std::nullopt;
  pollfd p{socket_.fd(), POLLIN, 0};
  if (::poll(&p, 1, static_cast<int>(timeout.count())) != 1) return std::nullopt;
  const int fd = ::accept(socket_.fd(), nullptr, nullptr);
  if (fd < 0) return std::nullopt;
  return Socket(fd);
}

std::unique_ptr<Channel> accept_channel(Socket socket, milliseconds handshake_timeout) {
  const auto deadline = Clock::now() + handshake_timeout;
  std::string head;
  std::uint8_t buf[4096];
  while (head.size() < 4) {
    const auto left = std::chrono::duration_cast<milliseconds>(deadline - Clock::now());
    if (left.count() <= 0) return nullptr;
    const long n = socket.read_some(buf, left);
    if (n < 0) return nullptr;
    head.append(reinterpret_cast<const char*>(buf), static_cast<std::size_t>(n));
  }
  if (head.compare(0, 4, "GET ") == 0) {
    const auto left = std::chrono::duration_cast<milliseconds>(deadline - Clock::now());
    return websocket_server(std::move(socket), std::move(head), std::max(left, milliseconds(1)));
  }
  return tcp_channel(std::move(socket), std::move(head));
}

}  // namespace avsim::net
