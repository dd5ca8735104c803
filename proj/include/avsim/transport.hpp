#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>

#include "avsim/wire.hpp"

namespace avsim::net {

// Owning POSIX socket descriptor.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket();
  Socket(Socket&& o) noexcept : fd_(o.release()) {}
  Socket& operator=(Socket&& o) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  int release();
  void shutdown();  // wakes any thread blocked on the socket

  // Blocking write of the whole buffer; false once the peer is gone.
  bool write_all(std::span<const std::uint8_t> data);
  // Waits up to `timeout` for readable data. Returns bytes read, 0 on
  // timeout, -1 on EOF or error.
  long read_some(std::span<std::uint8_t> buffer, std::chrono::milliseconds timeout);

 private:
  int fd_ = -1;
};

Socket connect_tcp(const std::string& host, std::uint16_t port,
                   std::chrono::milliseconds timeout = std::chrono::milliseconds(2000));

class TcpListener {
 public:
  // Port 0 picks an ephemeral port. Throws UserError when the address is unavailable.
  TcpListener(const std::string& host, std::uint16_t port);
  std::uint16_t port() const { return port_; }
  std::optional<Socket> accept(std::chrono::milliseconds timeout);
  void close() { socket_ = Socket(); }

 private:
  Socket socket_;
  std::uint16_t port_ = 0;
};

struct Received {
  enum class Status { message, timeout, closed, error };
  Status status = Status::timeout;
  std::optional<wire::Message> message;
  std::string error;  // decode error text when status == error
};

// Message-framed, reliable, ordered channel. One sending and one receiving
// thread may use a channel concurrently; close() may come from any thread.
class Channel {
 public:
  virtual ~Channel() = default;
  virtual bool send(const wire::Message& m) = 0;
  virtual Received receive(std::chrono::milliseconds timeout) = 0;
  virtual void close() = 0;
  virtual std::string binding() const = 0;  // "tcp" or "websocket"
};

// Wire frames directly on the byte stream.
std::unique_ptr<Channel> tcp_channel(Socket socket, std::string prefetched = {});

// Server side of an accepted connection: a request starting with "GET " is
// upgraded to a WebSocket (one binary message per wire frame); anything else
// is treated as a raw frame stream.
std::unique_ptr<Channel> accept_channel(Socket socket, std::chrono::milliseconds handshake_timeout);

// ---- WebSocket binding (RFC 6455 subset: binary/close/ping/pong, no extensions) ----

// Sec-WebSocket-Accept for a client key.
std::string websocket_accept_key(const std::string& client_key);

// Completes the server handshake; `request` holds bytes already read from the socket.
std::unique_ptr<Channel> websocket_server(Socket socket, std::string request,
                                          std::chrono::milliseconds timeout);
// Performs the client handshake (masked frames, as browsers send them).
std::unique_ptr<Channel> websocket_client(Socket socket, const std::string& host,
                                          const std::string& path = "/",
                                          std::chrono::milliseconds timeout = std::chrono::milliseconds(2000));

}  // namespace avsim::net
