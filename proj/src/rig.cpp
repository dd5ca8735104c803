#include "avsim/rig.hpp"

#include <cmath>
#include <string>

#include "avsim/chain_io.hpp"
#include "avsim/error.hpp"

namespace avsim {

namespace {

Joint revolute(std::string name, const Vec3& offset, const Vec3& axis, double lo, double hi) {
  Joint j;
  j.name = std::move(name);
  j.parent_offset = Pose::from_translation(offset);
  j.axis = axis;
  j.limit_lo = lo;
  j.limit_hi = hi;
  j.center = 0.5 * (lo + hi);
  return j;
}

// ViperX-300-scale 6-DoF arm: waist, shoulder, elbow, forearm roll, wrist angle, wrist rotate.
std::vector<Joint> viperx_joints() {
  return {
      revolute("waist", {0.0, 0.0, 0.079}, Vec3::UnitZ(), -3.1, 3.1),
      revolute("shoulder", {0.0, 0.0, 0.048}, Vec3::UnitY(), -1.85, 1.25),
      revolute("elbow", {0.06, 0.0, 0.3}, Vec3::UnitY(), -1.76, 1.6),
      revolute("forearm_roll", {0.2, 0.0, 0.0}, Vec3::UnitX(), -3.1, 3.1),
      revolute("wrist_angle", {0.1, 0.0, 0.0}, Vec3::UnitY(), -1.8, 2.1),
      revolute("wrist_rotate", {0.07, 0.0, 0.0}, Vec3::UnitX(), -3.1, 3.1),
  };
}

void set_home(KinematicChain& chain, std::initializer_list<double> values) {
  chain.home = JointState(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double v : values) chain.home[i++] = v;
  // centering cost pulls toward the home posture
  for (std::size_t k = 0; k < chain.dof(); ++k) chain.joints[k].center = chain.home[k];
}

}  // namespace

std::string_view to_string(ChainId id) {
  switch (id) {
    case ChainId::left: return "left";
    case ChainId::right: return "right";
    case ChainId::av: return "av";
  }
  return "?";
}

ChainId chain_id_from_string(std::string_view name) {
  if (name == "left") return ChainId::left;
  if (name == "right") return ChainId::right;
  if (name == "av") return ChainId::av;
  throw ContractViolation("unknown chain id '" + std::string(name) + "'");
}

RigLayout layout_of(ChainId id) {
  switch (id) {
    case ChainId::left: return {0, 6, 6};
    case ChainId::right: return {7, 6, 13};
    case ChainId::av: return {14, 7, -1};
  }
  throw ContractViolation("bad chain id");
}

const KinematicChain& Rig::chain(ChainId id) const {
  switch (id) {
    case ChainId::left: return left;
    case ChainId::right: return right;
    case ChainId::av: return av;
  }
  throw ContractViolation("bad chain id");
}

RigVector Rig::home() const {
  RigVector q = RigVector::Zero();
  for (ChainId id : kAllChains) {
    set_arm_joints(q, id, chain(id).home_or_center());
    const auto lay = layout_of(id);
    if (lay.gripper >= 0) q[lay.gripper] = gripper.open_angle;
  }
  return q;
}

RigVector Rig::lower_limits() const {
  RigVector v;
  for (ChainId id : kAllChains) {
    const auto lay = layout_of(id);
    v.segment(lay.offset, lay.arm_dof) = chain(id).lower_limits();
    if (lay.gripper >= 0) v[lay.gripper] = std::min(gripper.open_angle, gripper.closed_angle);
  }
  return v;
}

RigVector Rig::upper_limits() const {
  RigVector v;
  for (ChainId id : kAllChains) {
    const auto lay = layout_of(id);
    v.segment(lay.offset, lay.arm_dof) = chain(id).upper_limits();
    if (lay.gripper >= 0) v[lay.gripper] = std::max(gripper.open_angle, gripper.closed_angle);
  }
  return v;
}

RigVector Rig::clamp(const RigVector& q) const {
  return q.cwiseMax(lower_limits()).cwiseMin(upper_limits());
}

JointState Rig::arm_joints(const RigVector& q, ChainId id) const {
  const auto lay = layout_of(id);
  return q.segment(lay.offset, lay.arm_dof);
}

void Rig::set_arm_joints(RigVector& q, ChainId id, const JointState& joints) const {
  const auto lay = layout_of(id);
  if (joints.size() != lay.arm_dof) {
    throw ContractViolation("set_arm_joints: wrong joint count for chain " +
                            std::string(to_string(id)));
  }
  q.segment(lay.offset, lay.arm_dof) = joints;
}

double Rig::gripper_angle(const RigVector& q, ChainId id) const {
  const auto lay = layout_of(id);
  if (lay.gripper < 0) throw ContractViolation("the AV arm has no gripper");
  return q[lay.gripper];
}

Pose Rig::tool(const RigVector& q, ChainId id) const {
  return tool_pose(chain(id), arm_joints(q, id));
}

std::array<std::uint32_t, 3> Rig::checksums() const {
  return {chain_checksum(left), chain_checksum(right), chain_checksum(av)};
}

Rig Rig::nominal() {
  Rig rig;

  rig.left.name = "left";
  rig.left.base_pose = Pose::from_translation({-0.47, 0.0, 0.0});
  rig.left.joints = viperx_joints();
  rig.left.tool_offset = Pose::from_translation({0.1, 0.0, 0.0});
  set_home(rig.left, {0.0, -0.1756, 0.3867, 0.0, 1.3597, 0.0});

  rig.right = rig.left;
  rig.right.name = "right";
  rig.right.base_pose = Pose({0.47, 0.0, 0.0}, Quat(Eigen::AngleAxisd(M_PI, Vec3::UnitZ())));

  rig.av.name = "av";
  rig.av.base_pose = Pose({0.0, -0.45, 0.0}, Quat(Eigen::AngleAxisd(M_PI_2, Vec3::UnitZ())));
  rig.av.joints = viperx_joints();
  rig.av.joints.push_back(revolute("camera_pan", {0.05, 0.0, 0.0}, Vec3::UnitZ(), -1.6, 1.6));
  // link x -> optical axis, link -y -> image right, link -z -> image down
  Eigen::Matrix3d cam;
  cam << 0, 0, 1,
         -1, 0, 0,
         0, -1, 0;
  rig.av.tool_offset = Pose({0.04, 0.0, 0.0}, Quat(cam));
  set_home(rig.av, {0.0, -0.8455, 0.2491, 0.0, 1.4389, 0.0, 0.0});

  rig.left.validate();
  rig.right.validate();
  rig.av.validate();
  return rig;
}

Rig Rig::load(const std::filesystem::path& dir) {
  Rig rig;
  rig.left = load_chain(dir / "left.json");
  rig.right = load_chain(dir / "right.json");
  rig.av = load_chain(dir / "av.json");
  if (rig.left.dof() != 6 || rig.right.dof() != 6) {
    throw UserError("manipulator chains must have 6 joints");
  }
  if (rig.av.dof() != 7) throw UserError("the AV chain must have 7 joints");
  return rig;
}

void Rig::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  save_chain(dir / "left.json", left);
  save_chain(dir / "right.json", right);
  save_chain(dir / "av.json", av);
}

}  // namespace avsim
