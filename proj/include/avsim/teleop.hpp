#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>

#include "avsim/kinematics.hpp"
#include "avsim/pose.hpp"
#include "avsim/rig.hpp"

namespace avsim {

enum class DeviceId : std::uint8_t { head = 0, left_hand = 1, right_hand = 2 };

inline constexpr std::array<DeviceId, 3> kAllDevices = {DeviceId::head, DeviceId::left_hand,
                                                       DeviceId::right_hand};

std::string_view to_string(DeviceId id);
ChainId chain_for(DeviceId id);

struct DevicePose {
  DeviceId device = DeviceId::head;
  Pose pose;                     // operator frame (y-up)
  double trigger = 0.0;          // hands only, [0, 1]
  std::int64_t timestamp_us = 0;
};

// One sample of every device, indexed by DeviceId.
using DeviceFrame = std::array<DevicePose, 3>;

// Rotation taking operator axes (y-up, -z forward) to robot axes (z-up, +y forward).
Quat default_frame_adapter();

struct TeleopAnchor {
  struct Entry {
    Pose device_init;
    Pose robot_init;
  };
  std::array<Entry, 3> entries;
  Quat frame_adapter = default_frame_adapter();

  const Entry& entry(DeviceId id) const { return entries[static_cast<std::size_t>(id)]; }
};

// Captures the initial device poses and the matching robot tool poses
// (head -> AV camera, left_hand -> left tool, right_hand -> right tool).
// Throws UserError when a device is missing or repeated.
TeleopAnchor anchor_session(std::span<const DevicePose> device_poses, const Rig& rig,
                            const RigVector& q, const Quat& frame_adapter = default_frame_adapter());

// robot_init * adapt(device_init^-1 * now), adapt = conjugation by the frame adapter.
Pose map_pose(const TeleopAnchor& anchor, const DevicePose& now);

// Inverse of map_pose: the device pose that yields `robot_target`.
Pose unmap_pose(const TeleopAnchor& anchor, DeviceId device, const Pose& robot_target);

// Conjugation of a relative motion by the frame adapter.
Pose adapt_motion(const Quat& frame_adapter, const Pose& motion);

// Affine [0,1] -> [open, closed]; out-of-range input is clamped and flagged.
double trigger_to_gripper(double trigger, const GripperModel& gripper, bool* clamped = nullptr);

struct TeleopConfig {
  bool filter_enabled = true;
  // filtered = alpha * previous + (1 - alpha) * incoming, per 50 Hz message
  double filter_alpha = 0.8;
  RegularizedOptions arm_ik{.w_center = 0.01, .w_disp = 0.0025, .max_iters = 30,
                            .max_step = 0.1, .tol = {}};
  DlsOptions av_ik{.lambda = 0.05, .max_iters = 30, .max_step = 0.1, .tol = {}};
};

struct TeleopTelemetry {
  std::uint64_t updates = 0;
  std::uint64_t clamped_triggers = 0;
  std::array<IkReport, 3> last_ik{};
};

// Device stream -> joint targets: anchoring, mapping, jitter filter, then
// regularized IK for the manipulators and DLS for the AV arm.
class TeleopPipeline {
 public:
  TeleopPipeline(const Rig& rig, TeleopConfig config = {});

  // (Re)anchors on `devices` at rig configuration `q`; clears the filter.
  void anchor(const DeviceFrame& devices, const RigVector& q);
  bool anchored() const { return anchor_.has_value(); }
  const TeleopAnchor& current_anchor() const;

  // Joint targets for one message. Requires an anchor.
  RigVector update(const DeviceFrame& devices);

  // Targets after filtering (robot frame) from the last update.
  const std::array<Pose, 3>& filtered_targets() const { return filtered_; }
  const RigVector& commanded() const { return commanded_; }
  const TeleopTelemetry& telemetry() const { return telemetry_; }
  const TeleopConfig& config() const { return config_; }

 private:
  const Rig* rig_;
  TeleopConfig config_;
  std::optional<TeleopAnchor> anchor_;
  std::array<Pose, 3> filtered_{};
  bool have_filtered_ = false;
  RigVector commanded_ = RigVector::Zero();
  TeleopTelemetry telemetry_;
};

}  // namespace avsim
