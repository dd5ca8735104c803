#include "avsim/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "avsim/error.hpp"

namespace avsim {

namespace {

constexpr std::array<ChainId, 2> kManipulators = {ChainId::left, ChainId::right};

double along_half_extent(const Shape& shape) {
  if (const auto* c = std::get_if<Cylinder>(&shape)) return c->half_length;
  if (const auto* c = std::get_if<Capsule>(&shape)) return c->half_length + c->radius;
  if (const auto* s = std::get_if<Sphere>(&shape)) return s->radius;
  return std::get<Box>(shape).half_extents.z();
}

bool holds_satisfied(const SimState& state, const StageSpec& stage) {
  for (const Hold& h : stage.holds) {
    const SceneObject* obj = state.find(h.object);
    if (obj == nullptr) return false;
    const auto& slot = h.support ? obj->support : obj->attached;
    if (!slot || slot->chain != h.chain) return false;
  }
  return true;
}

// Nearest graspable object whose core lies within the grasp radius of `tool_point`.
int nearest_graspable(const std::vector<SceneObject>& objects, const Vec3& tool_point,
                      double grasp_radius) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const auto& o = objects[i];
    if (!o.graspable) continue;
    const double d = core_distance(o.shape, o.pose.inverse() * tool_point);
    if (d <= grasp_radius && d < best_d) {
      best = static_cast<int>(i);
      best_d = d;
    }
  }
  return best;
}

}  // namespace

std::vector<bool> SimState::stage_flags() const {
  std::vector<bool> flags;
  flags.reserve(stage_latched_at.size());
  for (auto t : stage_latched_at) flags.push_back(t >= 0);
  return flags;
}

const SceneObject* SimState::find(std::string_view id) const {
  for (const auto& o : objects) {
    if (o.id == id) return &o;
  }
  return nullptr;
}

SceneObject* SimState::find(std::string_view id) {
  for (auto& o : objects) {
    if (o.id == id) return &o;
  }
  return nullptr;
}

bool SimState::operator==(const SimState& other) const {
  return time_step == other.time_step && q == other.q && objects == other.objects &&
         stage_latched_at == other.stage_latched_at;
}

SimState reset(const TaskSpec& task, const Rig& rig, std::uint64_t seed) {
  SimState s;
  s.time_step = 0;
  s.q = rig.home();
  s.objects = task.sample_scene(seed);
  s.stage_latched_at.assign(task.stages.size(), -1);
  return s;
}

InsertionGeometry measure_insertion(const SceneObject& object, const SceneObject& target,
                                    const StageSpec& stage) {
  if (!target.socket) throw ContractViolation("insert target '" + target.id + "' has no socket");
  const Socket& sock = *target.socket;
  const Vec3 tip = object.pose * stage.tip_local;
  const Vec3 dir = object.pose.rotate(stage.direction_local).normalized();
  const Vec3 entry = target.pose * sock.entry_point;
  const Vec3 axis = target.pose.rotate(sock.axis).normalized();

  InsertionGeometry g;
  const Vec3 rel = tip - entry;
  g.penetration = rel.dot(axis);
  if (sock.slot) {
    const Vec3 slot_dir = target.pose.rotate(sock.slot_dir).normalized();
    const Vec3 across = axis.cross(slot_dir).normalized();
    g.lateral = std::abs(rel.dot(across));
    g.misalignment = std::acos(std::clamp(std::abs(dir.dot(slot_dir)), 0.0, 1.0));
    g.overhang = std::abs(rel.dot(slot_dir)) + along_half_extent(object.shape) - sock.half_length;
  } else {
    g.lateral = (rel - g.penetration * axis).norm();
    g.misalignment = std::acos(std::clamp(dir.dot(axis), -1.0, 1.0));
  }
  return g;
}

bool insertion_satisfied(const InsertionGeometry& g, const Socket& socket, const SimParams& params) {
  return g.lateral <= socket.radius && g.misalignment < params.align_tol &&
         g.penetration >= socket.depth && g.overhang <= 0.0;
}

bool stage_condition(const SimState& state, const StageSpec& stage, const SimParams& params) {
  if (stage.kind == StageKind::grasp) return holds_satisfied(state, stage);
  const SceneObject* obj = state.find(stage.object);
  const SceneObject* target = state.find(stage.target);
  if (obj == nullptr || target == nullptr || !target->socket) return false;
  return insertion_satisfied(measure_insertion(*obj, *target, stage), *target->socket, params);
}

SimState step(const SimState& state, const RigVector& joint_targets, const TaskSpec& task,
              const Rig& rig) {
  const SimParams& p = task.params;
  SimState next = state;

  const RigVector targets = rig.clamp(joint_targets);
  if (targets != joint_targets) ++next.telemetry.clamped_targets;

  const double max_delta = p.v_max * p.dt;
  for (int i = 0; i < kRigDof; ++i) {
    const double delta = std::clamp(targets[i] - state.q[i], -max_delta, max_delta);
    next.q[i] = state.q[i] + delta;
  }

  std::array<Pose, 3> tools;
  for (ChainId id : kAllChains) tools[static_cast<std::size_t>(id)] = rig.tool(next.q, id);

  const double thr = rig.gripper.threshold;
  const bool closes_upward = rig.gripper.closed_angle > rig.gripper.open_angle;
  for (ChainId id : kManipulators) {
    const double before = rig.gripper_angle(state.q, id);
    const double after = rig.gripper_angle(next.q, id);
    const bool closed_before = closes_upward ? before >= thr : before <= thr;
    const bool closed_after = closes_upward ? after >= thr : after <= thr;
    const Pose& tool = tools[static_cast<std::size_t>(id)];

    if (!closed_before && closed_after) {
      const int k = nearest_graspable(next.objects, tool.translation(), p.grasp_radius);
      if (k >= 0) {
        SceneObject& obj = next.objects[static_cast<std::size_t>(k)];
        const Attachment grip{id, tool.inverse() * obj.pose};
        if (!obj.attached) {
          obj.attached = grip;
          ++next.telemetry.attach_events;
        } else if (obj.attached->chain != id && !obj.support) {
          obj.support = grip;
          ++next.telemetry.attach_events;
        }
      }
    } else if (closed_before && !closed_after) {
      for (auto& obj : next.objects) {
        if (obj.support && obj.support->chain == id) {
          obj.support.reset();
          ++next.telemetry.release_events;
        }
        if (obj.attached && obj.attached->chain == id) {
          obj.attached.reset();
          ++next.telemetry.release_events;
          if (obj.support) {
            // the supporting hand keeps holding
            obj.attached = obj.support;
            obj.support.reset();
          }
        }
      }
    }
  }

  for (auto& obj : next.objects) {
    if (obj.attached) obj.pose = tools[static_cast<std::size_t>(obj.attached->chain)] * obj.attached->offset;
  }

  next.time_step = state.time_step + 1;
  const auto now = static_cast<std::int64_t>(next.time_step);
  for (std::size_t k = 0; k < task.stages.size(); ++k) {
    if (next.stage_latched_at[k] >= 0) continue;
    if (k > 0 && (next.stage_latched_at[k - 1] < 0 || next.stage_latched_at[k - 1] >= now)) break;
    if (stage_condition(next, task.stages[k], p)) next.stage_latched_at[k] = now;
  }
  return next;
}

std::vector<bool> stage_status(const SimState& state, const TaskSpec& task) {
  if (state.stage_latched_at.size() != task.stages.size()) {
    throw ContractViolation("state does not belong to this task");
  }
  return state.stage_flags();
}

}  // namespace avsim
