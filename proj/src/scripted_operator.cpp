#include "avsim/scripted_operator.hpp"

#include <algorithm>
#include <cmath>

#include "avsim/error.hpp"

namespace avsim {

namespace {

using Goal = ScriptedOperator::Goal;
using Step = ScriptedOperator::Step;

constexpr double kHover = 0.08;
constexpr double kLift = 0.1;
constexpr double kPreInsert = 0.04;
constexpr double kInsertMargin = 0.012;
constexpr double kArriveMeters = 0.003;
constexpr double kArriveRadians = 0.03;

std::size_t idx(ChainId id) { return static_cast<std::size_t>(id); }

Quat from_columns(const Vec3& x, const Vec3& y, const Vec3& z) {
  Eigen::Matrix3d r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return Quat(r);
}

// Body lying on the table with local z along `dir` (horizontal) and local x up.
Quat lying(const Vec3& dir) {
  const Vec3 z = Vec3(dir.x(), dir.y(), 0.0).normalized();
  const Vec3 x = Vec3::UnitZ();
  return from_columns(x, z.cross(x), z);
}

// Gripper pointing straight down with the fingers closing across `axis`.
// Of the two such grasps, picks the one nearer to `reference`.
Quat top_down(const Vec3& axis, const Quat& reference) {
  const Vec3 x = -Vec3::UnitZ();
  Vec3 z = Vec3(axis.x(), axis.y(), 0.0).normalized();
  const Quat a = from_columns(x, z.cross(x), z);
  z = -z;
  const Quat b = from_columns(x, z.cross(x), z);
  return a.angularDistance(reference) <= b.angularDistance(reference) ? a : b;
}

// Sign of `dir` closer to `current`.
Vec3 aligned(const Vec3& dir, const Vec3& current) { return dir.dot(current) >= 0.0 ? dir : -dir; }

const SceneObject& object(const SimState& s, std::string_view id) {
  const SceneObject* o = s.find(id);
  if (o == nullptr) throw ContractViolation("scripted operator: missing object " + std::string(id));
  return *o;
}

Vec3 axis_of(const SceneObject& o) { return o.pose.rotate(Vec3::UnitZ()); }

// Tool pose that puts a held object at `object_pose`.
Pose tool_for(const SimState& s, std::string_view id, ChainId chain, const Pose& object_pose) {
  const SceneObject& o = object(s, id);
  if (o.attached && o.attached->chain == chain) return object_pose * o.attached->offset.inverse();
  if (o.support && o.support->chain == chain) return object_pose * o.support->offset.inverse();
  throw ContractViolation("scripted operator: object not held by chain");
}

bool held_by(const SimState& s, std::string_view id, ChainId chain, bool support = false) {
  const SceneObject& o = object(s, id);
  const auto& slot = support ? o.support : o.attached;
  return slot && slot->chain == chain;
}

Pose raised(const Pose& p, double dz) { return Pose(p.translation() + Vec3(0.0, 0.0, dz), p.rotation()); }

// Object pose that puts the world point `tip_local` at `tip` with local z along `dir`.
Pose place_tip(const Vec3& tip, const Vec3& dir, const Vec3& tip_local) {
  const Quat r = lying(dir);
  return Pose(tip - r * tip_local, r);
}

struct SocketWorld {
  Vec3 entry;
  Vec3 axis;
  double depth;
};

SocketWorld socket_world(const SceneObject& target) {
  const Socket& s = *target.socket;
  return {target.pose * s.entry_point, target.pose.rotate(s.axis).normalized(), s.depth};
}

bool latched(const SimState& s, std::size_t stage) {
  return stage < s.stage_latched_at.size() && s.stage_latched_at[stage] >= 0;
}

Goal with(std::initializer_list<std::pair<ChainId, Pose>> tools) {
  Goal g;
  for (const auto& [id, p] : tools) g.tool[idx(id)] = p;
  return g;
}

std::vector<Step> peg_script(const TaskSpec& task) {
  const double grasp_offset = task.config["peg"]["grasp_offset"].get<double>();
  const Vec3 meet = [&] {
    const auto& m = task.config["meeting_point"];
    return Vec3(m[0].get<double>(), m[1].get<double>(), m[2].get<double>());
  }();
  const StageSpec insert = task.stages[1];

  auto grasp_poses = [grasp_offset](const SimState& s, const ScriptedOperator& op) {
    const SceneObject& peg = object(s, "peg");
    const SceneObject& sock = object(s, "socket");
    const Vec3 pa = axis_of(peg);
    const Pose right(peg.pose.translation() + grasp_offset * pa,
                     top_down(pa, op.setpoint(ChainId::right).rotation()));
    const Vec3 sa = sock.pose.rotate(Vec3::UnitY());
    const Pose left(sock.pose.translation(), top_down(sa, op.setpoint(ChainId::left).rotation()));
    return std::pair{left, right};
  };

  std::vector<Step> s;
  s.push_back([=](const SimState& st, const ScriptedOperator& op) {
    auto [l, r] = grasp_poses(st, op);
    Goal g = with({{ChainId::left, raised(l, kHover)}, {ChainId::right, raised(r, kHover)}});
    g.trigger = {0.0, 0.0};
    return g;
  });
  s.push_back([=](const SimState& st, const ScriptedOperator& op) {
    auto [l, r] = grasp_poses(st, op);
    Goal g = with({{ChainId::left, l}, {ChainId::right, r}});
    g.precise = true;
    return g;
  });
  s.push_back([](const SimState&, const ScriptedOperator&) {
    Goal g;
    g.trigger = {1.0, 1.0};
    g.until = [](const SimState& st) {
      return held_by(st, "peg", ChainId::right) && held_by(st, "socket", ChainId::left);
    };
    g.timeout = 60;
    return g;
  });
  s.push_back([](const SimState&, const ScriptedOperator& op) {
    return with({{ChainId::left, raised(op.setpoint(ChainId::left), kLift)},
                 {ChainId::right, raised(op.setpoint(ChainId::right), kLift)}});
  });
  // socket to the meeting point with its opening toward the right arm
  s.push_back([=](const SimState& st, const ScriptedOperator&) {
    const SceneObject& sock = object(st, "socket");
    const Vec3 entry_local = sock.socket->entry_point;
    const Pose want(meet - entry_local, Quat::Identity());
    Goal g = with({{ChainId::left, tool_for(st, "socket", ChainId::left, want)}});
    const SocketWorld sw{want * entry_local, want.rotate(sock.socket->axis), 0.0};
    g.tool[idx(ChainId::right)] = tool_for(
        st, "peg", ChainId::right,
        place_tip(sw.entry - (kPreInsert + 0.03) * sw.axis, sw.axis, insert.tip_local));
    return g;
  });
  s.push_back([=](const SimState& st, const ScriptedOperator&) {
    const SocketWorld sw = socket_world(object(st, "socket"));
    Goal g = with({{ChainId::right, tool_for(st, "peg", ChainId::right,
                                             place_tip(sw.entry - kPreInsert * sw.axis, sw.axis,
                                                       insert.tip_local))}});
    g.precise = true;
    g.track = true;
    return g;
  });
  s.push_back([=](const SimState& st, const ScriptedOperator&) {
    const SocketWorld sw = socket_world(object(st, "socket"));
    Goal g = with({{ChainId::right,
                    tool_for(st, "peg", ChainId::right,
                             place_tip(sw.entry + (sw.depth + kInsertMargin) * sw.axis, sw.axis,
                                       insert.tip_local))}});
    g.precise = true;
    g.track = true;
    g.until = [](const SimState& x) { return latched(x, 1); };
    g.dwell = 10;
    return g;
  });
  return s;
}

std::vector<Step> slot_script(const TaskSpec& task) {
  const double grasp_offset = task.config["stick"]["grasp_offset"].get<double>();

  auto grasp_poses = [grasp_offset](const SimState& s, const ScriptedOperator& op) {
    const SceneObject& stick = object(s, "stick");
    const Vec3 a = axis_of(stick);
    const Vec3 c = stick.pose.translation();
    // the right hand takes the end nearer to the right arm
    const Vec3 toward_right = a.x() >= 0.0 ? a : Vec3(-a);
    const Pose right(c + grasp_offset * toward_right, top_down(a, op.setpoint(ChainId::right).rotation()));
    const Pose left(c - grasp_offset * toward_right, top_down(a, op.setpoint(ChainId::left).rotation()));
    return std::pair{left, right};
  };
  auto stick_goal = [](const SimState& st, const Pose& want) {
    return with({{ChainId::right, tool_for(st, "stick", ChainId::right, want)},
                 {ChainId::left, tool_for(st, "stick", ChainId::left, want)}});
  };

  std::vector<Step> s;
  s.push_back([=](const SimState& st, const ScriptedOperator& op) {
    auto [l, r] = grasp_poses(st, op);
    Goal g = with({{ChainId::left, raised(l, kHover)}, {ChainId::right, raised(r, kHover)}});
    g.trigger = {0.0, 0.0};
    return g;
  });
  s.push_back([=](const SimState& st, const ScriptedOperator& op) {
    auto [l, r] = grasp_poses(st, op);
    Goal g = with({{ChainId::left, l}, {ChainId::right, r}});
    g.precise = true;
    return g;
  });
  s.push_back([](const SimState&, const ScriptedOperator&) {
    Goal g;
    g.trigger = {std::nullopt, 1.0};
    g.until = [](const SimState& st) { return held_by(st, "stick", ChainId::right); };
    g.timeout = 60;
    return g;
  });
  s.push_back([](const SimState&, const ScriptedOperator&) {
    Goal g;
    g.trigger = {1.0, std::nullopt};
    g.until = [](const SimState& st) { return held_by(st, "stick", ChainId::left, true); };
    g.timeout = 60;
    return g;
  });
  s.push_back([=](const SimState& st, const ScriptedOperator&) {
    return stick_goal(st, raised(object(st, "stick").pose, kLift));
  });
  auto over_slot = [](const SimState& st, double below_entry) {
    const SceneObject& slot = object(st, "slot");
    const SocketWorld sw = socket_world(slot);
    const Vec3 dir = aligned(slot.pose.rotate(slot.socket->slot_dir), axis_of(object(st, "stick")));
    return Pose(sw.entry + below_entry * sw.axis, lying(dir));
  };
  s.push_back([=](const SimState& st, const ScriptedOperator&) {
    return stick_goal(st, over_slot(st, -0.07));
  });
  s.push_back([=](const SimState& st, const ScriptedOperator&) {
    Goal g = stick_goal(st, over_slot(st, -kPreInsert));
    g.precise = true;
    g.track = true;
    return g;
  });
  s.push_back([=](const SimState& st, const ScriptedOperator&) {
    const double depth = object(st, "slot").socket->depth;
    Goal g = stick_goal(st, over_slot(st, depth + kInsertMargin));
    g.precise = true;
    g.track = true;
    g.until = [](const SimState& x) { return latched(x, 1); };
    g.dwell = 10;
    return g;
  });
  return s;
}

std::vector<Step> needle_script(const TaskSpec& task) {
  const double grasp_offset = task.config["needle"]["grasp_offset"].get<double>();
  const StageSpec thread = task.stages[1];

  auto grasp_pose = [grasp_offset](const SimState& s, const ScriptedOperator& op) {
    const SceneObject& needle = object(s, "needle");
    const Vec3 a = axis_of(needle);
    return Pose(needle.pose.translation() + grasp_offset * a,
                top_down(a, op.setpoint(ChainId::right).rotation()));
  };
  auto needle_at = [thread](const SimState& st, double along) {
    const SocketWorld sw = socket_world(object(st, "eyelet"));
    return tool_for(st, "needle", ChainId::right,
                    place_tip(sw.entry + along * sw.axis, sw.axis, thread.tip_local));
  };

  std::vector<Step> s;
  s.push_back([=](const SimState& st, const ScriptedOperator& op) {
    Goal g = with({{ChainId::right, raised(grasp_pose(st, op), kHover)}});
    g.trigger = {0.0, 0.0};
    return g;
  });
  s.push_back([=](const SimState& st, const ScriptedOperator& op) {
    Goal g = with({{ChainId::right, grasp_pose(st, op)}});
    g.precise = true;
    return g;
  });
  s.push_back([](const SimState&, const ScriptedOperator&) {
    Goal g;
    g.trigger = {std::nullopt, 1.0};
    g.until = [](const SimState& st) { return held_by(st, "needle", ChainId::right); };
    g.timeout = 60;
    return g;
  });
  s.push_back([](const SimState&, const ScriptedOperator& op) {
    return with({{ChainId::right, raised(op.setpoint(ChainId::right), kLift)}});
  });
  s.push_back([=](const SimState& st, const ScriptedOperator&) {
    return with({{ChainId::right, needle_at(st, -(kPreInsert + 0.04))}});
  });
  s.push_back([=](const SimState& st, const ScriptedOperator&) {
    Goal g = with({{ChainId::right, needle_at(st, -kPreInsert)}});
    g.precise = true;
    g.track = true;
    return g;
  });
  s.push_back([=](const SimState& st, const ScriptedOperator&) {
    const double depth = object(st, "eyelet").socket->depth;
    Goal g = with({{ChainId::right, needle_at(st, depth + kInsertMargin)}});
    g.precise = true;
    g.track = true;
    g.until = [](const SimState& x) { return latched(x, 1); };
    g.dwell = 10;
    return g;
  });
  return s;
}

Vec3 vec3(const nlohmann::json& a) {
  return {a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()};
}

// Camera pose the AV arm should reach for this task's scene.
Pose nominal_vantage(const TaskSpec& task, const SimState& s) {
  const auto& v = task.config.at("vantage");
  if (task.id == TaskId::thread_needle) {
    const SocketWorld sw = socket_world(object(s, "eyelet"));
    const Vec3 eye = sw.entry - v.at("distance").get<double>() * sw.axis +
                     v.at("elevation").get<double>() * Vec3::UnitZ();
    return Pose::look_at(eye, sw.entry, Vec3::UnitZ());
  }
  return Pose::look_at(vec3(v.at("eye")), vec3(v.at("target")), Vec3::UnitZ());
}

}  // namespace

DeviceFrame nominal_device_frame() {
  DeviceFrame f;
  f[0] = {DeviceId::head, Pose::from_translation({0.0, 1.6, 0.0}), 0.0, 0};
  f[1] = {DeviceId::left_hand, Pose::from_translation({-0.2, 1.2, -0.3}), 0.0, 0};
  f[2] = {DeviceId::right_hand, Pose::from_translation({0.2, 1.2, -0.3}), 0.0, 0};
  return f;
}

ScriptedOperator::ScriptedOperator(const TaskSpec& task, const Rig& rig, std::uint64_t seed,
                                   OperatorConfig config)
    : task_(&task),
      rig_(&rig),
      config_(config),
      rng_(seed * 0xD1B54A32D192ED03ULL + 0x5EED),
      start_(nominal_device_frame()) {
  if (config_.noise_std < 0.0) throw UserError("noise_std must be non-negative");
  const SimState initial = reset(task, rig, seed);
  anchor_ = anchor_session(start_, rig, initial.q);
  for (ChainId id : kAllChains) {
    setpoint_[idx(id)] = rig.tool(initial.q, id);
    bias_t_[idx(id)].setZero();
    bias_r_[idx(id)].setZero();
  }
  build_script(initial);
}

void ScriptedOperator::build_script(const SimState& initial) {
  switch (task_->id) {
    case TaskId::peg_insertion: script_ = peg_script(*task_); break;
    case TaskId::slot_insertion: script_ = slot_script(*task_); break;
    case TaskId::thread_needle: script_ = needle_script(*task_); break;
  }

  // Pick a vantage the AV arm can actually reach; perturb it around the
  // looked-at point until the DLS solver converges.
  const KinematicChain& av = rig_->chain(ChainId::av);
  const Pose nominal = nominal_vantage(*task_, initial);
  const Vec3 eye0 = nominal.translation();
  const Vec3 look = eye0 + 0.25 * nominal.rotate(Vec3::UnitZ());
  std::mt19937_64 perturb(rng_());
  std::normal_distribution<double> yaw(0.0, 0.2);
  std::uniform_real_distribution<double> scale(0.85, 1.1);
  vantage_ = nominal;
  for (vantage_attempts_ = 1; vantage_attempts_ <= 12; ++vantage_attempts_) {
    const IkResult r = ik_dls(av, rig_->arm_joints(initial.q, ChainId::av), vantage_);
    if (r.report.converged) break;
    const Vec3 offset = Eigen::AngleAxisd(yaw(perturb), Vec3::UnitZ()) * (eye0 - look) * scale(perturb);
    vantage_ = Pose::look_at(look + offset, look, Vec3::UnitZ());
  }
  vantage_attempts_ = std::min(vantage_attempts_, 12);
}

bool ScriptedOperator::arrived(const SimState& state) const {
  if (!goal_) return true;
  for (ChainId id : kAllChains) {
    const auto& want = goal_->tool[idx(id)];
    if (!want) continue;
    const Pose& sp = setpoint_[idx(id)];
    if (translation_distance(sp, *want) > 1e-9 || rotation_distance(sp, *want) > 1e-9) return false;
    if (goal_->precise) {
      const Pose actual = rig_->tool(state.q, id);
      if (translation_distance(actual, *want) > kArriveMeters ||
          rotation_distance(actual, *want) > kArriveRadians) {
        return false;
      }
    }
  }
  return !goal_->until || goal_->until(state);
}

DeviceFrame ScriptedOperator::next(const SimState& state) {
  // the AV arm heads for its vantage for the whole episode
  Goal av_goal;
  av_goal.tool[idx(ChainId::av)] = vantage_;

  if (segment_ < script_.size()) {
    if (!goal_) {
      goal_ = script_[segment_](state, *this);
      segment_ticks_ = 0;
      dwell_left_ = -1;
    } else if (goal_->track) {
      Goal fresh = script_[segment_](state, *this);
      goal_->tool = fresh.tool;
    }
    for (int h = 0; h < 2; ++h) {
      if (goal_->trigger[static_cast<std::size_t>(h)]) {
        trigger_[static_cast<std::size_t>(h)] = *goal_->trigger[static_cast<std::size_t>(h)];
      }
    }
  }

  // advance setpoints toward their goals at bounded speed
  const double max_lin = config_.speed * config_.dt;
  const double max_ang = config_.turn_rate * config_.dt;
  for (ChainId id : kAllChains) {
    std::optional<Pose> want = goal_ ? goal_->tool[idx(id)] : std::nullopt;
    if (id == ChainId::av) want = av_goal.tool[idx(id)];
    if (!want) continue;
    Pose& sp = setpoint_[idx(id)];
    const double lin = translation_distance(sp, *want);
    const double ang = rotation_distance(sp, *want);
    double s = 1.0;
    if (lin > max_lin) s = std::min(s, max_lin / lin);
    if (ang > max_ang) s = std::min(s, max_ang / ang);
    sp = s >= 1.0 ? *want : interpolate(sp, *want, s);
  }

  if (goal_) {
    ++segment_ticks_;
    if (dwell_left_ < 0 && (arrived(state) || segment_ticks_ >= goal_->timeout)) {
      dwell_left_ = goal_->dwell;
    }
    if (dwell_left_ >= 0 && dwell_left_-- == 0) {
      ++segment_;
      goal_.reset();
    }
  }

  // integral correction: the operator sees where the tool actually is
  DeviceFrame out;
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (DeviceId dev : kAllDevices) {
    const ChainId id = chain_for(dev);
    const std::size_t i = idx(id);
    const Pose actual = rig_->tool(state.q, id);
    const Pose& sp = setpoint_[i];
    bias_t_[i] += config_.bias_gain * (sp.translation() - actual.translation());
    bias_r_[i] += config_.bias_gain * rotation_vector(sp.rotation() * actual.rotation().conjugate());
    if (bias_t_[i].norm() > config_.bias_limit) bias_t_[i] *= config_.bias_limit / bias_t_[i].norm();
    if (bias_r_[i].norm() > config_.bias_limit) bias_r_[i] *= config_.bias_limit / bias_r_[i].norm();
    const Pose command(sp.translation() + bias_t_[i],
                       quat_from_rotation_vector(bias_r_[i]) * sp.rotation());

    Pose device = unmap_pose(anchor_, dev, command);
    if (config_.noise_std > 0.0) {
      const Vec3 dt(gauss(rng_), gauss(rng_), gauss(rng_));
      const Vec3 dr(gauss(rng_), gauss(rng_), gauss(rng_));
      device = Pose(device.translation() + config_.noise_std * dt,
                    quat_from_rotation_vector(2.0 * config_.noise_std * dr) * device.rotation());
    }
    const std::size_t d = static_cast<std::size_t>(dev);
    out[d].device = dev;
    out[d].pose = device;
    out[d].trigger = dev == DeviceId::head ? 0.0 : trigger_[dev == DeviceId::left_hand ? 0 : 1];
    out[d].timestamp_us = (tick_ + 1) * static_cast<std::int64_t>(config_.dt * 1e6 + 0.5);
  }
  ++tick_;
  return out;
}

}  // namespace avsim
