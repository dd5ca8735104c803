#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "avsim/pose.hpp"

namespace avsim {

using JointState = Eigen::VectorXd;
using Jacobian = Eigen::Matrix<double, 6, Eigen::Dynamic>;

struct Joint {
  std::string name;
  Pose parent_offset;            // previous link frame -> this joint frame
  Vec3 axis = Vec3::UnitZ();     // rotation axis in the joint frame
  double limit_lo = -M_PI;
  double limit_hi = M_PI;
  double center = 0.0;
};

// Serial revolute chain. Tool pose = base * prod(offset_i * Rot(axis_i, q_i)) * tool.
struct KinematicChain {
  std::string name;
  Pose base_pose;
  std::vector<Joint> joints;
  Pose tool_offset;
  JointState home;  // start configuration; empty means all centers

  std::size_t dof() const { return joints.size(); }
  JointState lower_limits() const;
  JointState upper_limits() const;
  JointState centers() const;
  JointState home_or_center() const;
  JointState clamp(const JointState& q) const;
  bool within_limits(const JointState& q) const;

  // Throws ContractViolation when an invariant of the description fails.
  void validate() const;
};

// Poses of every joint frame (after its rotation), followed by the tool frame.
std::vector<Pose> forward_kinematics(const KinematicChain& chain, const JointState& q);
Pose tool_pose(const KinematicChain& chain, const JointState& q);

// Geometric Jacobian at the tool point, world frame; rows are (v, w).
Jacobian jacobian(const KinematicChain& chain, const JointState& q);

// (target.t - current.t, rotvec(target.R * current.R^-1)).
Vec6 pose_error(const Pose& current, const Pose& target);

struct IkTolerance {
  double meters = 1e-4;
  double radians = 1e-3;
};

struct DlsOptions {
  double lambda = 0.05;
  int max_iters = 200;
  double max_step = 0.1;  // per-iteration joint delta bound, radians
  IkTolerance tol;
};

struct RegularizedOptions {
  double w_center = 0.01;
  double w_disp = 0.0025;
  int max_iters = 200;
  double max_step = 0.1;
  IkTolerance tol;
};

struct IkReport {
  bool converged = false;
  int iterations = 0;
  double translation_error = 0.0;
  double rotation_error = 0.0;
};

// One solver iteration: the error driving it and the step actually applied.
struct IkIteration {
  Vec6 error;
  JointState raw_step;
  JointState applied_step;
};

struct IkResult {
  JointState q;
  IkReport report;
};

// dq = J^T (J J^T + lambda^2 I)^-1 e, scaled to max_step, clamped to limits.
// Non-convergence is reported, never thrown.
IkResult ik_dls(const KinematicChain& chain, const JointState& q0, const Pose& target,
                const DlsOptions& options = {}, std::vector<IkIteration>* trace = nullptr);

// Minimizes |J dq - e|^2 + w_center |q + dq - q_center|^2 + w_disp |dq|^2 per iteration.
IkResult ik_regularized(const KinematicChain& chain, const JointState& q0, const Pose& target,
                        const RegularizedOptions& options = {},
                        std::vector<IkIteration>* trace = nullptr);

}  // namespace avsim
