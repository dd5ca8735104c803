#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "avsim/camera.hpp"
#include "avsim/teleop.hpp"

namespace avsim::wire {

// Frame: u32 little-endian length of (tag + body), u8 type tag, body.
// Control messages carry UTF-8 JSON bodies; pose, state, frame and probe
// messages are packed little-endian binary. Layouts: docs/wire_format.md.
inline constexpr std::uint32_t kProtocolVersion = 1;
inline constexpr std::size_t kLengthBytes = 4;
inline constexpr std::uint32_t kMaxFrameLength = 16U << 20;
inline constexpr std::size_t kPoseUpdateBytes = 3 * (7 * 4 + 4 + 8);  // 120

enum class MsgType : std::uint8_t {
  hello = 1,
  anchor_request = 2,
  pose_update = 3,
  re_anchor = 4,
  state_update = 5,
  frame = 6,
  record_control = 7,
  error = 8,
  ping = 9,
  pong = 10,
};

struct Hello {
  std::uint32_t protocol_version = kProtocolVersion;
  CameraSet cameras;
  std::string role = "operator";  // operator | observer | server
  std::optional<std::string> task;
  std::optional<std::uint64_t> seed;
  bool operator==(const Hello&) const = default;
};

struct AnchorRequest {
  bool operator==(const AnchorRequest&) const = default;
};

struct DeviceSample {
  std::array<float, 7> pose{0, 0, 0, 1, 0, 0, 0};  // tx ty tz qw qx qy qz, operator frame
  float trigger = 0.0F;
  std::int64_t timestamp_us = 0;
  bool operator==(const DeviceSample&) const = default;
};

struct PoseUpdate {
  std::array<DeviceSample, 3> devices;  // head, left hand, right hand
  bool operator==(const PoseUpdate&) const = default;

  static PoseUpdate from(const DeviceFrame& frame);
  DeviceFrame to_device_frame() const;
};

struct ReAnchor {
  bool operator==(const ReAnchor&) const = default;
};

enum StatusBits : std::uint8_t {
  kStatusAnchored = 1,
  kStatusParked = 2,
  kStatusRecording = 4,
};

struct StateUpdate {
  std::uint64_t time_step = 0;
  std::uint8_t status = 0;
  std::array<float, kRigDof> qpos{};
  std::vector<bool> stage_flags;
  bool operator==(const StateUpdate&) const = default;
};

struct FrameMsg {
  CameraId camera = CameraId::static_top;
  std::uint64_t time_step = 0;
  std::uint16_t width = 0;
  std::uint16_t height = 0;
  std::vector<std::uint8_t> pixels;
  bool operator==(const FrameMsg&) const = default;
};

struct RecordControl {
  std::string action;  // start | stop from clients; started | stopped in server acknowledgements
  std::optional<std::string> task;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> episode;  // file name, in a stop acknowledgement
  bool operator==(const RecordControl&) const = default;
};

struct Error {
  std::string code;  // version | protocol | state | record | internal
  std::string text;
  bool operator==(const Error&) const = default;
};

struct Ping {
  std::uint64_t seq = 0;
  std::int64_t sent_us = 0;
  bool operator==(const Ping&) const = default;
};

struct Pong {
  std::uint64_t seq = 0;
  std::int64_t sent_us = 0;  // echoed from the ping
  bool operator==(const Pong&) const = default;
};

using Message = std::variant<Hello, AnchorRequest, PoseUpdate, ReAnchor, StateUpdate, FrameMsg,
                             RecordControl, Error, Ping, Pong>;

MsgType type_of(const Message& m);
std::string_view to_string(MsgType t);

struct DecodeError {
  enum class Kind { truncated, overlong, unknown_type, malformed };
  Kind kind = Kind::malformed;
  std::string text;
};

struct Decoded {
  std::optional<Message> message;
  std::optional<DecodeError> error;
  bool ok() const { return message.has_value(); }
};

std::vector<std::uint8_t> encode(const Message& m);

// Decodes exactly one frame; anything else (short, long, trailing bytes) is an error.
Decoded decode(std::span<const std::uint8_t> frame);

// Incremental decoder for a byte stream. After an error it stays failed.
class StreamDecoder {
 public:
  void feed(std::span<const std::uint8_t> bytes);
  // A decoded message, an error, or nothing when more bytes are needed.
  std::optional<Decoded> next();
  bool failed() const { return failed_; }
  std::size_t buffered() const { return buffer_.size() - offset_; }

 private:
  std::vector<std::uint8_t> buffer_;
  std::size_t offset_ = 0;
  bool failed_ = false;
};

}  // namespace avsim::wire
