#include "avsim/wire.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include <nlohmann/json.hpp>

namespace avsim::wire {

static_assert(std::endian::native == std::endian::little, "wire codec assumes a little-endian host");

namespace {

using nlohmann::json;

class Writer {
 public:
  template <class T>
  void put(const T& v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out.insert(out.end(), p, p + n);
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}
  template <class T>
  bool get(T& v) {
    if (data_.size() - pos_ < sizeof(T)) return false;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return true;
  }
  bool bytes(std::vector<std::uint8_t>& v, std::size_t n) {
    if (data_.size() - pos_ < n) return false;
    v.assign(data_.begin() + static_cast<std::ptrdiff_t>(pos_), data_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return true;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::string dump(const json& j) { return j.dump(-1, ' ', false, json::error_handler_t::replace); }

json cameras_json(CameraSet set) {
  json a = json::array();
  for (CameraId id : set.ids()) a.push_back(std::string(avsim::to_string(id)));
  return a;
}

struct BodyError {
  std::string text;
};

// Each body decoder returns the message or throws BodyError.
json parse_object(std::span<const std::uint8_t> body) {
  json j = json::parse(body.begin(), body.end(), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw BodyError{"control body is not a JSON object"};
  return j;
}

template <class T>
T field(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) throw BodyError{std::string("missing field '") + key + "'"};
  if constexpr (std::is_same_v<T, std::string>) {
    if (!it->is_string()) throw BodyError{std::string("field '") + key + "' must be a string"};
    return it->template get<std::string>();
  } else if constexpr (std::is_same_v<T, std::uint64_t> || std::is_same_v<T, std::uint32_t>) {
    if (!it->is_number_unsigned()) throw BodyError{std::string("field '") + key + "' must be unsigned"};
    const auto v = it->template get<std::uint64_t>();
    if (v > std::numeric_limits<T>::max()) throw BodyError{std::string("field '") + key + "' out of range"};
    return static_cast<T>(v);
  }
}

template <class T>
std::optional<T> optional_field(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return field<T>(j, key);
}

Hello decode_hello(const json& j) {
  Hello h;
  h.protocol_version = field<std::uint32_t>(j, "protocol_version");
  if (j.contains("cameras")) {
    const json& c = j.at("cameras");
    if (!c.is_array()) throw BodyError{"field 'cameras' must be an array"};
    std::uint8_t bits = 0;
    for (const auto& e : c) {
      if (!e.is_string()) throw BodyError{"camera ids must be strings"};
      const auto id = camera_id_from_string(e.get<std::string>());
      if (!id) throw BodyError{"unknown camera '" + e.get<std::string>() + "'"};
      bits |= static_cast<std::uint8_t>(1U << static_cast<int>(*id));
    }
    h.cameras = CameraSet(bits);
  }
  if (j.contains("role")) h.role = field<std::string>(j, "role");
  h.task = optional_field<std::string>(j, "task");
  h.seed = optional_field<std::uint64_t>(j, "seed");
  return h;
}

bool finite(const float* v, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(v[i])) return false;
  }
  return true;
}

Message decode_body(MsgType type, std::span<const std::uint8_t> body) {
  Reader r(body);
  switch (type) {
    case MsgType::hello: return decode_hello(parse_object(body));
    case MsgType::anchor_request: parse_object(body); return AnchorRequest{};
    case MsgType::re_anchor: parse_object(body); return ReAnchor{};
    case MsgType::record_control: {
      const json j = parse_object(body);
      RecordControl rc;
      rc.action = field<std::string>(j, "action");
      rc.task = optional_field<std::string>(j, "task");
      rc.seed = optional_field<std::uint64_t>(j, "seed");
      rc.episode = optional_field<std::string>(j, "episode");
      return rc;
    }
    case MsgType::error: {
      const json j = parse_object(body);
      return Error{field<std::string>(j, "code"), field<std::string>(j, "text")};
    }
    case MsgType::pose_update: {
      if (body.size() != kPoseUpdateBytes) throw BodyError{"pose update must be 120 bytes"};
      PoseUpdate p;
      for (auto& d : p.devices) {
        for (float& v : d.pose) r.get(v);
        r.get(d.trigger);
        r.get(d.timestamp_us);
        if (!finite(d.pose.data(), 7) || !std::isfinite(d.trigger)) throw BodyError{"non-finite pose"};
      }
      return p;
    }
    case MsgType::state_update: {
      StateUpdate s;
      std::uint8_t n = 0;
      if (!r.get(s.time_step) || !r.get(s.status)) throw BodyError{"state update truncated"};
      for (float& v : s.qpos) {
        if (!r.get(v)) throw BodyError{"state update truncated"};
      }
      if (!finite(s.qpos.data(), s.qpos.size())) throw BodyError{"non-finite joint value"};
      if (!r.get(n)) throw BodyError{"state update truncated"};
      for (int i = 0; i < n; ++i) {
        std::uint8_t f = 0;
        if (!r.get(f) || f > 1) throw BodyError{"bad stage flag"};
        s.stage_flags.push_back(f == 1);
      }
      if (!r.done()) throw BodyError{"trailing bytes in state update"};
      return s;
    }
    case MsgType::frame: {
      FrameMsg f;
      std::uint8_t cam = 0;
      if (!r.get(cam) || !r.get(f.time_step) || !r.get(f.width) || !r.get(f.height)) {
        throw BodyError{"frame header truncated"};
      }
      if (cam >= kCameraCount) throw BodyError{"unknown camera id"};
      f.camera = static_cast<CameraId>(cam);
      if (!r.bytes(f.pixels, static_cast<std::size_t>(f.width) * f.height) || !r.done()) {
        throw BodyError{"frame size does not match its dimensions"};
      }
      return f;
    }
    case MsgType::ping:
    case MsgType::pong: {
      std::uint64_t seq = 0;
      std::int64_t t = 0;
      if (!r.get(seq) || !r.get(t) || !r.done()) throw BodyError{"probe body must be 16 bytes"};
      if (type == MsgType::ping) return Ping{seq, t};
      return Pong{seq, t};
    }
  }
  throw BodyError{"unknown type"};
}

}  // namespace

PoseUpdate PoseUpdate::from(const DeviceFrame& frame) {
  PoseUpdate p;
  for (std::size_t i = 0; i < 3; ++i) {
    const DevicePose& d = frame[i];
    const Vec3& t = d.pose.translation();
    const Quat& q = d.pose.rotation();
    p.devices[i].pose = {static_cast<float>(t.x()), static_cast<float>(t.y()), static_cast<float>(t.z()),
                         static_cast<float>(q.w()), static_cast<float>(q.x()), static_cast<float>(q.y()),
                         static_cast<float>(q.z())};
    p.devices[i].trigger = static_cast<float>(d.trigger);
    p.devices[i].timestamp_us = d.timestamp_us;
  }
  return p;
}

DeviceFrame PoseUpdate::to_device_frame() const {
  DeviceFrame out;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& s = devices[i].pose;
    out[i].device = kAllDevices[i];
    out[i].pose = Pose(Vec3(s[0], s[1], s[2]), Quat(s[3], s[4], s[5], s[6]).normalized());
    out[i].trigger = devices[i].trigger;
    out[i].timestamp_us = devices[i].timestamp_us;
  }
  return out;
}

MsgType type_of(const Message& m) { return static_cast<MsgType>(m.index() + 1); }

std::string_view to_string(MsgType t) {
  switch (t) {
    case MsgType::hello: return "Hello";
    case MsgType::anchor_request: return "AnchorRequest";
    case MsgType::pose_update: return "PoseUpdate";
    case MsgType::re_anchor: return "ReAnchor";
    case MsgType::state_update: return "StateUpdate";
    case MsgType::frame: return "FrameMsg";
    case MsgType::record_control: return "RecordControl";
    case MsgType::error: return "Error";
    case MsgType::ping: return "Ping";
    case MsgType::pong: return "Pong";
  }
  return "?";
}

std::vector<std::uint8_t> encode(const Message& m) {
  Writer w;
  w.put(std::uint32_t{0});
  w.put(static_cast<std::uint8_t>(type_of(m)));
  std::visit(
      [&](const auto& msg) {
        using T = std::decay_t<decltype(msg)>;
        if constexpr (std::is_same_v<T, Hello>) {
          json j{{"protocol_version", msg.protocol_version}, {"cameras", cameras_json(msg.cameras)},
                 {"role", msg.role}};
          if (msg.task) j["task"] = *msg.task;
          if (msg.seed) j["seed"] = *msg.seed;
          const std::string s = dump(j);
          w.bytes(s.data(), s.size());
        } else if constexpr (std::is_same_v<T, AnchorRequest> || std::is_same_v<T, ReAnchor>) {
          w.bytes("{}", 2);
        } else if constexpr (std::is_same_v<T, RecordControl>) {
          json j{{"action", msg.action}};
          if (msg.task) j["task"] = *msg.task;
          if (msg.seed) j["seed"] = *msg.seed;
          if (msg.episode) j["episode"] = *msg.episode;
          const std::string s = dump(j);
          w.bytes(s.data(), s.size());
        } else if constexpr (std::is_same_v<T, Error>) {
          const std::string s = dump(json{{"code", msg.code}, {"text", msg.text}});
          w.bytes(s.data(), s.size());
        } else if constexpr (std::is_same_v<T, PoseUpdate>) {
          for (const auto& d : msg.devices) {
            w.bytes(d.pose.data(), sizeof(float) * 7);
            w.put(d.trigger);
            w.put(d.timestamp_us);
          }
        } else if constexpr (std::is_same_v<T, StateUpdate>) {
          if (msg.stage_flags.size() > 255) throw std::length_error("too many stage flags");
          w.put(msg.time_step);
          w.put(msg.status);
          w.bytes(msg.qpos.data(), sizeof(float) * msg.qpos.size());
          w.put(static_cast<std::uint8_t>(msg.stage_flags.size()));
          for (bool b : msg.stage_flags) w.put(static_cast<std::uint8_t>(b ? 1 : 0));
        } else if constexpr (std::is_same_v<T, FrameMsg>) {
          if (msg.pixels.size() != static_cast<std::size_t>(msg.width) * msg.height) {
            throw std::length_error("frame pixels do not match its dimensions");
          }
          w.put(static_cast<std::uint8_t>(msg.camera));
          w.put(msg.time_step);
          w.put(msg.width);
          w.put(msg.height);
          w.bytes(msg.pixels.data(), msg.pixels.size());
        } else if constexpr (std::is_same_v<T, Ping> || std::is_same_v<T, Pong>) {
          w.put(msg.seq);
          w.put(msg.sent_us);
        }
      },
      m);
  const std::size_t length = w.out.size() - kLengthBytes;
  if (length > kMaxFrameLength) throw std::length_error("message exceeds the frame limit");
  const auto len32 = static_cast<std::uint32_t>(length);
  std::memcpy(w.out.data(), &len32, sizeof len32);
  return std::move(w.out);
}

namespace {

Decoded fail(DecodeError::Kind kind, std::string text) { return Decoded{std::nullopt, DecodeError{kind, std::move(text)}}; }

// Decodes the tag + body part of a frame whose length is already validated.
Decoded decode_payload(std::span<const std::uint8_t> payload) {
  const std::uint8_t tag = payload[0];
  if (tag < 1 || tag > 10) return fail(DecodeError::Kind::unknown_type, "unknown message type " + std::to_string(tag));
  try {
    return Decoded{decode_body(static_cast<MsgType>(tag), payload.subspan(1)), std::nullopt};
  } catch (const BodyError& e) {
    return fail(DecodeError::Kind::malformed,
                std::string(to_string(static_cast<MsgType>(tag))) + ": " + e.text);
  } catch (const std::exception& e) {
    return fail(DecodeError::Kind::malformed, e.what());
  }
}

std::optional<DecodeError> check_length(std::uint32_t length) {
  if (length == 0) return DecodeError{DecodeError::Kind::malformed, "empty frame"};
  if (length > kMaxFrameLength) {
    return DecodeError{DecodeError::Kind::overlong, "frame length " + std::to_string(length) + " exceeds the limit"};
  }
  return std::nullopt;
}

}  // namespace

Decoded decode(std::span<const std::uint8_t> frame) {
  if (frame.size() < kLengthBytes + 1) return fail(DecodeError::Kind::truncated, "frame shorter than its header");
  std::uint32_t length = 0;
  std::memcpy(&length, frame.data(), sizeof length);
  if (auto e = check_length(length)) return Decoded{std::nullopt, e};
  if (frame.size() < kLengthBytes + length) return fail(DecodeError::Kind::truncated, "frame body truncated");
  if (frame.size() > kLengthBytes + length) return fail(DecodeError::Kind::malformed, "bytes after the frame");
  return decode_payload(frame.subspan(kLengthBytes));
}

void StreamDecoder::feed(std::span<const std::uint8_t> bytes) {
  if (failed_) return;
  if (offset_ > 0 && offset_ >= buffer_.size() / 2) {
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(offset_));
    offset_ = 0;
  }
  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

std::optional<Decoded> StreamDecoder::next() {
  if (failed_) return std::nullopt;
  const std::size_t avail = buffer_.size() - offset_;
  if (avail < kLengthBytes) return std::nullopt;
  std::uint32_t length = 0;
  std::memcpy(&length, buffer_.data() + offset_, sizeof length);
  if (auto e = check_length(length)) {
    failed_ = true;
    return Decoded{std::nullopt, e};
  }
  if (avail < kLengthBytes + length) return std::nullopt;
  const std::span<const std::uint8_t> payload(buffer_.data() + offset_ + kLengthBytes, length);
  Decoded d = decode_payload(payload);
  offset_ += kLengthBytes + length;
  if (!d.ok()) failed_ = true;
  return d;
}

}  // namespace avsim::wire
