#include "avsim/kinematics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Cholesky>

#include "avsim/error.hpp"

namespace avsim {

namespace {

void require_dof(const KinematicChain& chain, const JointState& q) {
  if (static_cast<std::size_t>(q.size()) != chain.dof()) {
    throw ContractViolation("chain '" + chain.name + "' has " + std::to_string(chain.dof()) +
                            " joints, got a joint vector of length " + std::to_string(q.size()));
  }
}

JointState scale_to_bound(const JointState& step, double max_step) {
  const double peak = step.cwiseAbs().maxCoeff();
  if (peak > max_step && peak > 0.0) return step * (max_step / peak);
  return step;
}

bool within_tolerance(const Vec6& e, const IkTolerance& tol) {
  return e.head<3>().norm() < tol.meters && e.tail<3>().norm() < tol.radians;
}

void fill_report(IkReport& report, const Vec6& e, const IkTolerance& tol, int iterations) {
  report.iterations = iterations;
  report.translation_error = e.head<3>().norm();
  report.rotation_error = e.tail<3>().norm();
  report.converged = within_tolerance(e, tol);
}

// Shared Newton-style loop; `solve` maps (J, e, q) to the unbounded step.
template <typename StepFn>
IkResult iterate_ik(const KinematicChain& chain, const JointState& q0, const Pose& target,
                    int max_iters, double max_step, const IkTolerance& tol,
                    std::vector<IkIteration>* trace, StepFn&& solve) {
  require_dof(chain, q0);
  IkResult result;
  JointState q = q0;
  int it = 0;
  Vec6 e = pose_error(tool_pose(chain, q), target);
  while (!within_tolerance(e, tol) && it < max_iters) {
    Jacobian J = jacobian(chain, q);
    JointState raw = solve(J, e, q);
    // joints pinned at a limit and pushed outward drop out of the step
    for (std::size_t pass = 0; pass < chain.dof(); ++pass) {
      bool masked = false;
      for (std::size_t i = 0; i < chain.dof(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        const bool pinned = (q[k] <= chain.joints[i].limit_lo && raw[k] < 0.0) ||
                            (q[k] >= chain.joints[i].limit_hi && raw[k] > 0.0);
        if (pinned && !J.col(k).isZero()) {
          J.col(k).setZero();
          masked = true;
        }
      }
      if (!masked) break;
      raw = solve(J, e, q);
    }
    const JointState next = chain.clamp(q + scale_to_bound(raw, max_step));
    const JointState applied = next - q;
    if (trace != nullptr) trace->push_back({e, raw, applied});
    q = next;
    ++it;
    e = pose_error(tool_pose(chain, q), target);
    if (applied.norm() < 1e-13) break;  // stationary: limits or regularization hold it
  }
  result.q = q;
  fill_report(result.report, e, tol, it);
  return result;
}

}  // namespace

JointState KinematicChain::lower_limits() const {
  JointState v(dof());
  for (std::size_t i = 0; i < dof(); ++i) v[i] = joints[i].limit_lo;
  return v;
}

JointState KinematicChain::upper_limits() const {
  JointState v(dof());
  for (std::size_t i = 0; i < dof(); ++i) v[i] = joints[i].limit_hi;
  return v;
}

JointState KinematicChain::centers() const {
  JointState v(dof());
  for (std::size_t i = 0; i < dof(); ++i) v[i] = joints[i].center;
  return v;
}

JointState KinematicChain::home_or_center() const {
  return home.size() == static_cast<Eigen::Index>(dof()) ? home : centers();
}

JointState KinematicChain::clamp(const JointState& q) const {
  require_dof(*this, q);
  JointState out = q;
  for (std::size_t i = 0; i < dof(); ++i) {
    out[i] = std::clamp(q[i], joints[i].limit_lo, joints[i].limit_hi);
  }
  return out;
}

bool KinematicChain::within_limits(const JointState& q) const {
  if (static_cast<std::size_t>(q.size()) != dof()) return false;
  for (std::size_t i = 0; i < dof(); ++i) {
    if (q[i] < joints[i].limit_lo || q[i] > joints[i].limit_hi) return false;
  }
  return true;
}

void KinematicChain::validate() const {
  if (joints.empty()) throw ContractViolation("chain '" + name + "' has no joints");
  for (const auto& j : joints) {
    if (std::abs(j.axis.norm() - 1.0) > 1e-9) {
      throw ContractViolation("joint '" + j.name + "' axis is not unit length");
    }
    if (!(j.limit_lo < j.limit_hi)) {
      throw ContractViolation("joint '" + j.name + "' has limit_lo >= limit_hi");
    }
    if (j.center < j.limit_lo || j.center > j.limit_hi) {
      throw ContractViolation("joint '" + j.name + "' center lies outside its limits");
    }
  }
  if (home.size() != 0) {
    if (static_cast<std::size_t>(home.size()) != dof() || !within_limits(home)) {
      throw ContractViolation("chain '" + name + "' home configuration is invalid");
    }
  }
}

std::vector<Pose> forward_kinematics(const KinematicChain& chain, const JointState& q) {
  require_dof(chain, q);
  std::vector<Pose> frames;
  frames.reserve(chain.dof() + 1);
  Pose current = chain.base_pose;
  for (std::size_t i = 0; i < chain.dof(); ++i) {
    const Joint& j = chain.joints[i];
    current = current * j.parent_offset * Pose::from_axis_angle(j.axis, q[i]);
    frames.push_back(current);
  }
  frames.push_back(current * chain.tool_offset);
  return frames;
}

Pose tool_pose(const KinematicChain& chain, const JointState& q) {
  return forward_kinematics(chain, q).back();
}

Jacobian jacobian(const KinematicChain& chain, const JointState& q) {
  const auto frames = forward_kinematics(chain, q);
  const Vec3 p_tool = frames.back().translation();
  Jacobian J(6, chain.dof());
  for (std::size_t i = 0; i < chain.dof(); ++i) {
    const Vec3 w = frames[i].rotate(chain.joints[i].axis);
    J.block<3, 1>(0, i) = w.cross(p_tool - frames[i].translation());
    J.block<3, 1>(3, i) = w;
  }
  return J;
}

Vec6 pose_error(const Pose& current, const Pose& target) {
  Vec6 e;
  e.head<3>() = target.translation() - current.translation();
  e.tail<3>() = rotation_vector(target.rotation() * current.rotation().conjugate());
  return e;
}

IkResult ik_dls(const KinematicChain& chain, const JointState& q0, const Pose& target,
                const DlsOptions& options, std::vector<IkIteration>* trace) {
  if (!(options.lambda > 0.0)) throw ContractViolation("ik_dls: lambda must be positive");
  const double damping = options.lambda * options.lambda;
  return iterate_ik(chain, q0, target, options.max_iters, options.max_step, options.tol, trace,
                    [damping](const Jacobian& J, const Vec6& e, const JointState&) {
                      Eigen::Matrix<double, 6, 6> A = J * J.transpose();
                      A.diagonal().array() += damping;
                      return JointState(J.transpose() * A.ldlt().solve(e));
                    });
}

IkResult ik_regularized(const KinematicChain& chain, const JointState& q0, const Pose& target,
                        const RegularizedOptions& options, std::vector<IkIteration>* trace) {
  if (options.w_center < 0.0) throw ContractViolation("ik_regularized: w_center must be >= 0");
  if (!(options.w_disp > 0.0)) throw ContractViolation("ik_regularized: w_disp must be > 0");
  const JointState q_center = chain.centers();
  const double wc = options.w_center;
  const double wd = options.w_disp;
  return iterate_ik(chain, q0, target, options.max_iters, options.max_step, options.tol, trace,
                    [&](const Jacobian& J, const Vec6& e, const JointState& q) {
                      Eigen::MatrixXd A = J.transpose() * J;
                      A.diagonal().array() += wc + wd;
                      const JointState rhs = J.transpose() * e - wc * (q - q_center);
                      return JointState(A.ldlt().solve(rhs));
                    });
}

}  // namespace avsim
