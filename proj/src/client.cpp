#include "avsim/client.hpp"

#include <thread>

#include "avsim/error.hpp"
#include "avsim/stats.hpp"

namespace avsim::net {

using Clock = std::chrono::steady_clock;
using std::chrono::milliseconds;

std::int64_t monotonic_us() {
  return std::chrono::duration_cast<std::chrono::microseconds>(Clock::now().time_since_epoch()).count();
}

Client Client::connect(const std::string& host, std::uint16_t port, const wire::Hello& hello, Binding binding,
                       milliseconds timeout) {
  Socket s = connect_tcp(host, port, timeout);
  std::unique_ptr<Channel> ch = binding == Binding::websocket ? websocket_client(std::move(s), host, "/", timeout)
                                                              : tcp_channel(std::move(s));
  if (!ch) throw UserError("websocket handshake with " + host + " failed");
  if (!ch->send(hello)) throw UserError("connection to " + host + " lost during handshake");
  const auto deadline = Clock::now() + timeout;
  for (;;) {
    const auto left = std::chrono::duration_cast<milliseconds>(deadline - Clock::now());
    if (left.count() <= 0) throw UserError("no Hello from server");
    Received r = ch->receive(left);
    if (r.status == Received::Status::timeout) continue;
    if (r.status != Received::Status::message) throw UserError("server closed the connection during handshake");
    if (auto* h = std::get_if<wire::Hello>(&*r.message)) return Client(std::move(ch), *h);
    if (auto* e = std::get_if<wire::Error>(&*r.message)) throw UserError("server refused (" + e->code + "): " + e->text);
  }
}

ProbeStats latency_probe(Client& client, int count, milliseconds interval, std::uint64_t first_seq) {
  ProbeStats st;
  std::uint64_t last_seen = first_seq;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t seq = first_seq + static_cast<std::uint64_t>(i) + 1;
    const auto start = Clock::now();
    if (!client.send(wire::Ping{seq, monotonic_us()})) break;
    ++st.sent;
    const auto deadline = start + milliseconds(1000);
    while (Clock::now() < deadline) {
      Received r = client.receive(std::chrono::duration_cast<milliseconds>(deadline - Clock::now()));
      if (r.status == Received::Status::closed || r.status == Received::Status::error) return st;
      if (r.status != Received::Status::message) continue;
      if (const auto* p = std::get_if<wire::Pong>(&*r.message)) {
        if (p->seq <= last_seen) st.sequence_increasing = false;
        last_seen = p->seq;
        if (p->seq != seq) continue;
        st.rtt_ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - start).count());
        ++st.received;
        break;
      }
    }
    std::this_thread::sleep_until(start + interval);
  }
  st.p50_ms = percentile(st.rtt_ms, 50.0);
  st.p99_ms = percentile(st.rtt_ms, 99.0);
  st.max_ms = percentile(st.rtt_ms, 100.0);
  return st;
}

}  // namespace avsim::net
