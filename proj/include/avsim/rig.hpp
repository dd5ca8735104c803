#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string_view>

#include <Eigen/Core>

#include "avsim/kinematics.hpp"

namespace avsim {

enum class ChainId : std::uint8_t { left = 0, right = 1, av = 2 };

inline constexpr std::array<ChainId, 3> kAllChains = {ChainId::left, ChainId::right, ChainId::av};

std::string_view to_string(ChainId id);
ChainId chain_id_from_string(std::string_view name);

// Joint-position vector of the whole rig:
//   [0..5] left arm, [6] left gripper, [7..12] right arm, [13] right gripper, [14..20] AV arm.
inline constexpr int kRigDof = 21;
using RigVector = Eigen::Matrix<double, kRigDof, 1>;

struct RigLayout {
  int offset;
  int arm_dof;
  int gripper;  // index of the gripper joint, -1 for the AV arm
};

RigLayout layout_of(ChainId id);

struct GripperModel {
  double open_angle = 0.0;
  double closed_angle = 1.0;
  // Crossing this angle while closing grasps, while opening releases.
  double threshold = 0.5;
};

struct Rig {
  KinematicChain left;
  KinematicChain right;
  KinematicChain av;
  GripperModel gripper;

  const KinematicChain& chain(ChainId id) const;

  // Arms at their home configuration, grippers open.
  RigVector home() const;
  RigVector lower_limits() const;
  RigVector upper_limits() const;
  RigVector clamp(const RigVector& q) const;

  JointState arm_joints(const RigVector& q, ChainId id) const;
  void set_arm_joints(RigVector& q, ChainId id, const JointState& joints) const;
  double gripper_angle(const RigVector& q, ChainId id) const;
  Pose tool(const RigVector& q, ChainId id) const;

  std::array<std::uint32_t, 3> checksums() const;

  // Nominal ViperX-300-scale geometry (~0.75 m reach); not measured hardware values.
  static Rig nominal();
  // Reads left.json, right.json and av.json from a directory.
  static Rig load(const std::filesystem::path& dir);
  void save(const std::filesystem::path& dir) const;
};

}  // namespace avsim
