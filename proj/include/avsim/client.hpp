#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "avsim/transport.hpp"
#include "avsim/wire.hpp"

namespace avsim::net {

enum class Binding { tcp, websocket };

// Operator-side connection. connect() performs the Hello exchange and throws
// UserError when the server refuses (the server's Error text is included).
class Client {
 public:
  static Client connect(const std::string& host, std::uint16_t port, const wire::Hello& hello = {},
                        Binding binding = Binding::tcp,
                        std::chrono::milliseconds timeout = std::chrono::milliseconds(3000));

  bool send(const wire::Message& m) { return channel_->send(m); }
  Received receive(std::chrono::milliseconds timeout) { return channel_->receive(timeout); }
  void close() { channel_->close(); }
  const wire::Hello& server_hello() const { return server_hello_; }
  Channel& channel() { return *channel_; }

 private:
  Client(std::unique_ptr<Channel> channel, wire::Hello server_hello)
      : channel_(std::move(channel)), server_hello_(std::move(server_hello)) {}
  std::unique_ptr<Channel> channel_;
  wire::Hello server_hello_;
};

struct ProbeStats {
  int sent = 0;
  int received = 0;
  double p50_ms = 0.0;
  double p99_ms = 0.0;
  double max_ms = 0.0;
  bool sequence_increasing = true;  // pongs came back with strictly increasing sequence numbers
  std::vector<double> rtt_ms;
};

// Sends `count` pings `interval` apart, each waiting for its pong (other
// traffic is discarded). Sequence numbers start after `first_seq`.
ProbeStats latency_probe(Client& client, int count, std::chrono::milliseconds interval,
                         std::uint64_t first_seq = 0);

// Microseconds on a steady clock, for ping timestamps.
std::int64_t monotonic_us();

}  // namespace avsim::net
