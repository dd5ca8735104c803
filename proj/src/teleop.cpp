#include "avsim/teleop.hpp"

#include <algorithm>
#include <string>

#include "avsim/error.hpp"

namespace avsim {

std::string_view to_string(DeviceId id) {
  switch (id) {
    case DeviceId::head: return "head";
    case DeviceId::left_hand: return "left_hand";
    case DeviceId::right_hand: return "right_hand";
  }
  return "?";
}

ChainId chain_for(DeviceId id) {
  switch (id) {
    case DeviceId::head: return ChainId::av;
    case DeviceId::left_hand: return ChainId::left;
    case DeviceId::right_hand: return ChainId::right;
  }
  throw ContractViolation("unknown device");
}

Quat default_frame_adapter() {
  // operator x -> robot x, operator y (up) -> robot z, operator z (back) -> robot -y
  return Quat(Eigen::AngleAxisd(M_PI_2, Vec3::UnitX()));
}

Pose adapt_motion(const Quat& frame_adapter, const Pose& motion) {
  const Pose a = Pose::from_rotation(frame_adapter);
  return a * motion * a.inverse();
}

TeleopAnchor anchor_session(std::span<const DevicePose> device_poses, const Rig& rig,
                            const RigVector& q, const Quat& frame_adapter) {
  if (std::abs(frame_adapter.norm() - 1.0) > 1e-9) {
    throw ContractViolation("frame adapter must be a unit quaternion");
  }
  std::array<bool, 3> seen{};
  TeleopAnchor anchor;
  anchor.frame_adapter = canonical(frame_adapter);
  for (const auto& dp : device_poses) {
    const auto idx = static_cast<std::size_t>(dp.device);
    if (idx >= seen.size()) throw UserError("unknown device in anchor request");
    if (seen[idx]) {
      throw UserError("device " + std::string(to_string(dp.device)) + " given twice");
    }
    seen[idx] = true;
    anchor.entries[idx] = {dp.pose, rig.tool(q, chain_for(dp.device))};
  }
  for (DeviceId id : kAllDevices) {
    if (!seen[static_cast<std::size_t>(id)]) {
      throw UserError("anchor refused: no pose for device " + std::string(to_string(id)));
    }
  }
  return anchor;
}

Pose map_pose(const TeleopAnchor& anchor, const DevicePose& now) {
  const auto idx = static_cast<std::size_t>(now.device);
  if (idx >= anchor.entries.size()) throw ContractViolation("map_pose: unknown device");
  const auto& e = anchor.entries[idx];
  return e.robot_init * adapt_motion(anchor.frame_adapter, e.device_init.inverse() * now.pose);
}

Pose unmap_pose(const TeleopAnchor& anchor, DeviceId device, const Pose& robot_target) {
  const auto& e = anchor.entry(device);
  const Pose robot_motion = e.robot_init.inverse() * robot_target;
  return e.device_init * adapt_motion(anchor.frame_adapter.conjugate(), robot_motion);
}

double trigger_to_gripper(double trigger, const GripperModel& gripper, bool* clamped) {
  const double t = std::clamp(trigger, 0.0, 1.0);
  if (clamped != nullptr) *clamped = (t != trigger);
  return gripper.open_angle + t * (gripper.closed_angle - gripper.open_angle);
}

TeleopPipeline::TeleopPipeline(const Rig& rig, TeleopConfig config)
    : rig_(&rig), config_(config) {}

void TeleopPipeline::anchor(const DeviceFrame& devices, const RigVector& q) {
  anchor_ = anchor_session(devices, *rig_, q);
  have_filtered_ = false;
  commanded_ = q;
}

const TeleopAnchor& TeleopPipeline::current_anchor() const {
  if (!anchor_) throw ContractViolation("teleop pipeline is not anchored");
  return *anchor_;
}

RigVector TeleopPipeline::update(const DeviceFrame& devices) {
  if (!anchor_) throw ContractViolation("teleop update before anchoring");
  for (DeviceId id : kAllDevices) {
    const auto idx = static_cast<std::size_t>(id);
    if (devices[idx].device != id) throw ContractViolation("device frame out of order");
    const Pose target = map_pose(*anchor_, devices[idx]);
    if (config_.filter_enabled && have_filtered_) {
      filtered_[idx] = interpolate(target, filtered_[idx], config_.filter_alpha);
    } else {
      filtered_[idx] = target;
    }
  }
  have_filtered_ = true;

  RigVector out = commanded_;
  for (DeviceId id : kAllDevices) {
    const auto idx = static_cast<std::size_t>(id);
    const ChainId chain_id = chain_for(id);
    const KinematicChain& chain = rig_->chain(chain_id);
    const JointState seed = rig_->arm_joints(commanded_, chain_id);
    const IkResult r = chain_id == ChainId::av
                           ? ik_dls(chain, seed, filtered_[idx], config_.av_ik)
                           : ik_regularized(chain, seed, filtered_[idx], config_.arm_ik);
    rig_->set_arm_joints(out, chain_id, r.q);
    telemetry_.last_ik[idx] = r.report;
    const auto lay = layout_of(chain_id);
    if (lay.gripper >= 0) {
      bool clamped = false;
      out[lay.gripper] = trigger_to_gripper(devices[idx].trigger, rig_->gripper, &clamped);
      if (clamped) ++telemetry_.clamped_triggers;
    }
  }
  commanded_ = out;
  ++telemetry_.updates;
  return out;
}

}  // namespace avsim
