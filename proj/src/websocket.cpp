#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <cstring>
#include <mutex>
#include <random>

#include "avsim/transport.hpp"

namespace avsim::net {

using Clock = std::chrono::steady_clock;
using std::chrono::milliseconds;

namespace {

constexpr const char* kGuid = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";

std::string base64(const std::uint8_t* data, std::size_t n) {
  std::string out(4 * ((n + 2) / 3) + 1, '\0');
  const int len = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data, static_cast<int>(n));
  out.resize(static_cast<std::size_t>(len));
  return out;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Header value by case-insensitive name, empty when absent.
std::string header(const std::string& head, const std::string& name) {
  std::size_t pos = head.find("\r\n");
  const std::string want = lower(name);
  while (pos != std::string::npos && pos + 2 < head.size()) {
    const std::size_t start = pos + 2;
    const std::size_t end = head.find("\r\n", start);
    const std::string line = head.substr(start, end == std::string::npos ? std::string::npos : end - start);
    const auto colon = line.find(':');
    if (colon != std::string::npos && lower(trim(line.substr(0, colon))) == want) {
      return trim(line.substr(colon + 1));
    }
    pos = end;
  }
  return {};
}

// Reads until the blank line ending an HTTP head; the remainder stays in `rest`.
bool read_head(Socket& s, std::string& buffer, std::string& head, std::string& rest, Clock::time_point deadline) {
  std::uint8_t buf[4096];
  for (;;) {
    const auto end = buffer.find("\r\n\r\n");
    if (end != std::string::npos) {
      head = buffer.substr(0, end + 2);
      rest = buffer.substr(end + 4);
      return true;
    }
    if (buffer.size() > 16384) return false;
    const auto left = std::chrono::duration_cast<milliseconds>(deadline - Clock::now());
    if (left.count() <= 0) return false;
    const long n = s.read_some(buf, left);
    if (n < 0) return false;
    buffer.append(reinterpret_cast<const char*>(buf), static_cast<std::size_t>(n));
  }
}

class WebSocketChannel final : public Channel {
 public:
  WebSocketChannel(Socket s, std::string rest, bool client)
      : socket_(std::move(s)), buffer_(rest.begin(), rest.end()), client_(client), rng_(std::random_device{}()) {}

  bool send(const wire::Message& m) override {
    const auto payload = wire::encode(m);
    std::lock_guard lock(send_mutex_);
    return send_frame(0x2, payload);
  }

  Received receive(milliseconds timeout) override {
    const auto deadline = Clock::now() + timeout;
    for (;;) {
      if (closed_) return {Received::Status::closed, std::nullopt, {}};
      if (auto r = parse_one()) return *r;
      if (closed_) return {Received::Status::closed, std::nullopt, {}};
      const auto left = std::chrono::duration_cast<milliseconds>(deadline - Clock::now());
      std::uint8_t buf[65536];
      const long n = socket_.read_some(buf, std::max(left, milliseconds(0)));
      if (n < 0) {
        closed_ = true;
        return {Received::Status::closed, std::nullopt, {}};
      }
      if (n == 0) return {Received::Status::timeout, std::nullopt, {}};
      buffer_.insert(buffer_.end(), buf, buf + n);
    }
  }

  void close() override {
    {
      std::lock_guard lock(send_mutex_);
      const std::uint8_t code[2] = {0x03, 0xE8};
      send_frame(0x8, code);
    }
    socket_.shutdown();
  }

  std::string binding() const override { return "websocket"; }

 private:
  bool send_frame(std::uint8_t opcode, std::span<const std::uint8_t> payload) {
    std::vector<std::uint8_t> f;
    f.reserve(payload.size() + 14);
    f.push_back(static_cast<std::uint8_t>(0x80 | opcode));
    const std::uint8_t mask_bit = client_ ? 0x80 : 0x00;
    const std::size_t n = payload.size();
    if (n < 126) {
      f.push_back(static_cast<std::uint8_t>(mask_bit | n));
    } else if (n <= 0xFFFF) {
      f.push_back(mask_bit | 126);
      f.push_back(static_cast<std::uint8_t>(n >> 8));
      f.push_back(static_cast<std::uint8_t>(n));
    } else {
      f.push_back(mask_bit | 127);
      for (int i = 7; i >= 0; --i) f.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(n) >> (8 * i)));
    }
    std::uint8_t mask[4] = {0, 0, 0, 0};
    if (client_) {
      const auto m = static_cast<std::uint32_t>(rng_());
      std::memcpy(mask, &m, 4);
      f.insert(f.end(), mask, mask + 4);
    }
    const std::size_t start = f.size();
    f.insert(f.end(), payload.begin(), payload.end());
    if (client_) {
      for (std::size_t i = 0; i < n; ++i) f[start + i] ^= mask[i % 4];
    }
    return socket_.write_all(f);
  }

  Received protocol_error(const std::string& text) {
    closed_ = true;
    return {Received::Status::error, std::nullopt, text};
  }

  // One complete data message from the buffer, if present.
  std::optional<Received> parse_one() {
    for (;;) {
      const std::size_t avail = buffer_.size() - offset_;
      if (avail < 2) return std::nullopt;
      const std::uint8_t* p = buffer_.data() + offset_;
      const bool fin = (p[0] & 0x80) != 0;
      const std::uint8_t opcode = p[0] & 0x0F;
      const bool masked = (p[1] & 0x80) != 0;
      std::uint64_t len = p[1] & 0x7F;
      std::size_t hdr = 2;
      if (len == 126) {
        if (avail < 4) return std::nullopt;
        len = (static_cast<std::uint64_t>(p[2]) << 8) | p[3];
        hdr = 4;
      } else if (len == 127) {
        if (avail < 10) return std::nullopt;
        len = 0;
        for (int i = 0; i < 8; ++i) len = (len << 8) | p[2 + i];
        hdr = 10;
      }
      if (masked != !client_) return protocol_error("websocket frame masking is wrong for this side");
      if (len > wire::kMaxFrameLength + wire::kLengthBytes) return protocol_error("websocket message too large");
      const std::size_t mask_at = hdr;
      if (masked) hdr += 4;
      if (avail < hdr + len) return std::nullopt;
      std::vector<std::uint8_t> payload(p + hdr, p + hdr + len);
      if (masked) {
        for (std::size_t i = 0; i < payload.size(); ++i) payload[i] ^= p[mask_at + i % 4];
      }
      offset_ += hdr + static_cast<std::size_t>(len);
      if (offset_ > 65536 && offset_ * 2 > buffer_.size()) {
        buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(offset_));
        offset_ = 0;
      }

      switch (opcode) {
        case 0x8:
          closed_ = true;
          return Received{Received::Status::closed, std::nullopt, {}};
        case 0x9: {
          std::lock_guard lock(send_mutex_);
          send_frame(0xA, payload);
          continue;
        }
        case 0xA: continue;
        case 0x1: return protocol_error("text websocket messages are not part of the protocol");
        case 0x2:
        case 0x0: {
          if (opcode == 0x2 && !fragments_.empty()) return protocol_error("unfinished fragmented message");
          if (opcode == 0x0 && !in_message_) return protocol_error("continuation without a message");
          fragments_.insert(fragments_.end(), payload.begin(), payload.end());
          in_message_ = true;
          if (fragments_.size() > wire::kMaxFrameLength + wire::kLengthBytes) {
            return protocol_error("websocket message too large");
          }
          if (!fin) continue;
          in_message_ = false;
          const wire::Decoded d = wire::decode(fragments_);
          fragments_.clear();
          if (!d.ok()) return protocol_error(d.error->text);
          return Received{Received::Status::message, d.message, {}};
        }
        default: return protocol_error("unknown websocket opcode");
      }
    }
  }

  Socket socket_;
  std::vector<std::uint8_t> buffer_;
  std::size_t offset_ = 0;
  std::vector<std::uint8_t> fragments_;
  bool in_message_ = false;
  bool client_;
  bool closed_ = false;
  std::mutex send_mutex_;
  std::mt19937 rng_;
};

}  // namespace

std::string websocket_accept_key(const std::string& client_key) {
  const std::string input = client_key + kGuid;
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(input.data(), input.size(), digest, &len, EVP_sha1(), nullptr);
  return base64(digest, len);
}

std::unique_ptr<Channel> websocket_server(Socket socket, std::string request, milliseconds timeout) {
  std::string head;
  std::string rest;
  if (!read_head(socket, request, head, rest, Clock::now() + timeout)) return nullptr;
  const std::string key = header(head, "Sec-WebSocket-Key");
  if (lower(header(head, "Upgrade")) != "websocket" || key.empty()) {
    const std::string resp = "HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\nConnection: close\r\n\r\n";
    socket.write_all({reinterpret_cast<const std::uint8_t*>(resp.data()), resp.size()});
    return nullptr;
  }
  const std::string resp = "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
                           "Sec-WebSocket-Accept: " + websocket_accept_key(key) + "\r\n\r\n";
  if (!socket.write_all({reinterpret_cast<const std::uint8_t*>(resp.data()), resp.size()})) return nullptr;
  return std::make_unique<WebSocketChannel>(std::move(socket), std::move(rest), false);
}

std::unique_ptr<Channel> websocket_client(Socket socket, const std::string& host, const std::string& path,
                                          milliseconds timeout) {
  std::random_device rd;
  std::uint8_t nonce[16];
  for (auto& b : nonce) b = static_cast<std::uint8_t>(rd());
  const std::string key = base64(nonce, sizeof nonce);
  const std::string req = "GET " + path + " HTTP/1.1\r\nHost: " + host +
                          "\r\nUpgrade: websocket\r\nConnection: Upgrade\r\nSec-WebSocket-Key: " + key +
                          "\r\nSec-WebSocket-Version: 13\r\n\r\n";
  if (!socket.write_all({reinterpret_cast<const std::uint8_t*>(req.data()), req.size()})) return nullptr;
  std::string buffer;
  std::string head;
  std::string rest;
  if (!read_head(socket, buffer, head, rest, Clock::now() + timeout)) return nullptr;
  if (head.rfind("HTTP/1.1 101", 0) != 0 || header(head, "Sec-WebSocket-Accept") != websocket_accept_key(key)) {
    return nullptr;
  }
  return std::make_unique<WebSocketChannel>(std::move(socket), std::move(rest), true);
}

}  // namespace avsim::net
