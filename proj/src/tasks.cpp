#include <cmath>
#include <random>
#include <string>

#include "avsim/error.hpp"
#include "avsim/sim.hpp"

namespace avsim {

namespace {

using nlohmann::json;

Quat yaw(double angle) { return Quat(Eigen::AngleAxisd(angle, Vec3::UnitZ())); }

// Orientation whose local z is `z` and local x is `x` (both unit, orthogonal).
Quat frame_zx(const Vec3& z, const Vec3& x) {
  Eigen::Matrix3d r;
  r.col(0) = x;
  r.col(1) = z.cross(x);
  r.col(2) = z;
  return Quat(r);
}

// Lying body whose local z points along the horizontal heading `dir`.
Quat lying(const Vec3& dir) { return frame_zx(dir.normalized(), Vec3::UnitZ()); }

class Sampler {
 public:
  Sampler(TaskId id, std::uint64_t seed)
      : rng_(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(id) + 1) {}

  double range(const json& r) {
    const double lo = r.at(0).get<double>();
    const double hi = r.at(1).get<double>();
    if (hi < lo) throw UserError("task config: empty sampling range");
    return std::uniform_real_distribution<double>(lo, hi)(rng_);
  }

 private:
  std::mt19937_64 rng_;
};

Vec3 vec3(const json& a) { return {a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()}; }

double slack(const json& cfg) { return cfg.at("tolerances").at("socket_slack").get<double>(); }

std::vector<SceneObject> sample_peg(const json& cfg, Sampler& s) {
  const json& pc = cfg.at("peg");
  const json& sc = cfg.at("socket");
  SceneObject peg;
  peg.id = "peg";
  const double pr = pc.at("radius").get<double>();
  peg.shape = Cylinder{pr, pc.at("half_length").get<double>()};
  {
    const double x = s.range(pc.at("x"));
    const double y = s.range(pc.at("y"));
    const double heading = s.range(pc.at("yaw"));
    peg.pose = Pose({x, y, pr}, lying(yaw(heading) * Vec3(-1.0, 0.0, 0.0)));
  }
  peg.graspable = true;

  SceneObject socket;
  socket.id = "socket";
  const Vec3 half = vec3(sc.at("half_extents"));
  socket.shape = Box{half};
  {
    const double x = s.range(sc.at("x"));
    const double y = s.range(sc.at("y"));
    const double heading = s.range(sc.at("yaw"));
    socket.pose = Pose({x, y, half.z()}, yaw(heading));
  }
  socket.graspable = true;
  Socket hole;
  hole.entry_point = Vec3(half.x(), 0.0, 0.0);
  hole.axis = -Vec3::UnitX();
  hole.depth = sc.at("depth").get<double>();
  hole.radius = slack(cfg) * pr;
  socket.socket = hole;
  return {peg, socket};
}

std::vector<SceneObject> sample_slot(const json& cfg, Sampler& s) {
  const json& kc = cfg.at("stick");
  const json& sc = cfg.at("slot");
  SceneObject stick;
  stick.id = "stick";
  const double r = kc.at("radius").get<double>();
  stick.shape = Cylinder{r, kc.at("half_length").get<double>()};
  {
    const double x = s.range(kc.at("x"));
    const double y = s.range(kc.at("y"));
    const double heading = s.range(kc.at("yaw"));
    stick.pose = Pose({x, y, r}, lying(yaw(heading) * Vec3::UnitX()));
  }
  stick.graspable = true;

  SceneObject slot;
  slot.id = "slot";
  const Vec3 half = vec3(sc.at("half_extents"));
  slot.shape = Box{half};
  {
    const double x = s.range(sc.at("x"));
    const double y = s.range(sc.at("y"));
    const double heading = s.range(sc.at("yaw"));
    slot.pose = Pose({x, y, half.z()}, yaw(heading));
  }
  Socket opening;
  opening.slot = true;
  opening.entry_point = Vec3(0.0, 0.0, half.z());
  opening.axis = -Vec3::UnitZ();
  opening.slot_dir = Vec3::UnitX();
  opening.half_length = half.x() - sc.at("wall").get<double>();
  opening.depth = sc.at("depth").get<double>();
  opening.radius = slack(cfg) * r;
  slot.socket = opening;
  return {stick, slot};
}

std::vector<SceneObject> sample_needle(const json& cfg, Sampler& s) {
  const json& nc = cfg.at("needle");
  const json& ec = cfg.at("eyelet");
  SceneObject needle;
  needle.id = "needle";
  const double r = nc.at("radius").get<double>();
  needle.shape = Capsule{r, nc.at("half_length").get<double>()};
  {
    const double x = s.range(nc.at("x"));
    const double y = s.range(nc.at("y"));
    const double heading = s.range(nc.at("yaw"));
    needle.pose = Pose({x, y, r}, lying(yaw(heading) * Vec3::UnitY()));
  }
  needle.graspable = true;

  const Vec3 half = vec3(ec.at("half_extents"));
  const double height = ec.at("height").get<double>();
  const double x = s.range(ec.at("x"));
  const double y = s.range(ec.at("y"));
  const double heading = s.range(ec.at("yaw"));

  // Plate with a through hole along local +y; its entry face looks toward -y,
  // away from both static cameras.
  SceneObject eyelet;
  eyelet.id = "eyelet";
  eyelet.shape = Box{half};
  eyelet.pose = Pose({x, y, height}, yaw(heading));
  Socket hole;
  hole.entry_point = Vec3(0.0, -half.y(), 0.0);
  hole.axis = Vec3::UnitY();
  hole.depth = ec.at("depth").get<double>();
  hole.radius = slack(cfg) * r;
  eyelet.socket = hole;

  SceneObject post;
  post.id = "post";
  const double post_half = 0.5 * (height - half.z());
  post.shape = Box{Vec3(0.01, 0.01, post_half)};
  post.pose = Pose({x, y, post_half}, yaw(heading));
  return {needle, eyelet, post};
}

json tolerances() {
  return {{"grasp_radius", 0.02}, {"align_tol_deg", 15.0}, {"socket_slack", 1.5}, {"v_max", 2.0}};
}

}  // namespace

std::string_view to_string(TaskId id) {
  switch (id) {
    case TaskId::peg_insertion: return "peg_insertion";
    case TaskId::slot_insertion: return "slot_insertion";
    case TaskId::thread_needle: return "thread_needle";
  }
  return "?";
}

TaskId task_id_from_string(std::string_view name) {
  for (TaskId id : kAllTasks) {
    if (to_string(id) == name) return id;
  }
  throw UserError("unknown task '" + std::string(name) +
                  "' (expected peg_insertion, slot_insertion or thread_needle)");
}

json default_task_config(TaskId id) {
  switch (id) {
    case TaskId::peg_insertion:
      return {{"horizon", 400},
              {"tolerances", tolerances()},
              {"peg",
               {{"radius", 0.01}, {"half_length", 0.07}, {"grasp_offset", -0.02},
                {"x", {0.08, 0.2}}, {"y", {-0.12, 0.12}}, {"yaw", {-0.4, 0.4}}}},
              {"socket",
               {{"half_extents", {0.04, 0.025, 0.025}}, {"depth", 0.03},
                {"x", {-0.2, -0.08}}, {"y", {-0.12, 0.12}}, {"yaw", {-0.4, 0.4}}}},
              {"meeting_point", {0.0, 0.0, 0.15}},
              {"vantage", {{"eye", {0.0, -0.3, 0.42}}, {"target", {0.0, 0.02, 0.08}}}}};
    case TaskId::slot_insertion:
      return {{"horizon", 400},
              {"tolerances", tolerances()},
              {"stick",
               {{"radius", 0.01}, {"half_length", 0.15}, {"grasp_offset", 0.1},
                {"x", {-0.04, 0.04}}, {"y", {-0.14, -0.06}}, {"yaw", {-0.25, 0.25}}}},
              {"slot",
               {{"half_extents", {0.2, 0.035, 0.04}}, {"depth", 0.03}, {"wall", 0.01},
                {"x", {-0.04, 0.04}}, {"y", {0.1, 0.16}}, {"yaw", {-0.2, 0.2}}}},
              {"vantage", {{"eye", {0.0, -0.3, 0.42}}, {"target", {0.0, 0.05, 0.06}}}}};
    case TaskId::thread_needle:
      return {{"horizon", 350},
              {"tolerances", tolerances()},
              {"needle",
               {{"radius", 0.004}, {"half_length", 0.06}, {"grasp_offset", -0.03},
                {"x", {0.08, 0.2}}, {"y", {-0.18, -0.08}}, {"yaw", {-0.4, 0.4}}}},
              {"eyelet",
               {{"half_extents", {0.03, 0.005, 0.03}}, {"height", 0.13}, {"depth", 0.03},
                {"x", {0.0, 0.1}}, {"y", {0.02, 0.1}}, {"yaw", {-0.3, 0.3}}}},
              {"vantage", {{"distance", 0.25}, {"elevation", 0.08}}}};
  }
  throw UserError("unknown task");
}

TaskSpec make_task(TaskId id, const json& overrides) {
  TaskSpec task;
  task.id = id;
  task.config = default_task_config(id);
  if (!overrides.is_null() && !overrides.empty()) task.config.merge_patch(overrides);

  try {
    const json& tol = task.config.at("tolerances");
    task.params.grasp_radius = tol.at("grasp_radius").get<double>();
    task.params.align_tol = tol.at("align_tol_deg").get<double>() * M_PI / 180.0;
    task.params.v_max = tol.at("v_max").get<double>();
    task.horizon = task.config.at("horizon").get<int>();
  } catch (const json::exception& e) {
    throw UserError(std::string("task config: ") + e.what());
  }
  if (task.horizon <= 0) throw UserError("task config: horizon must be positive");

  StageSpec grasp;
  grasp.name = "Grasp";
  grasp.kind = StageKind::grasp;
  StageSpec insert;
  insert.kind = StageKind::insert;
  insert.direction_local = Vec3::UnitZ();
  switch (id) {
    case TaskId::peg_insertion: {
      grasp.holds = {{"peg", ChainId::right, false}, {"socket", ChainId::left, false}};
      insert.name = "Insert";
      insert.object = "peg";
      insert.target = "socket";
      insert.tip_local = Vec3(0.0, 0.0, task.config["peg"]["half_length"].get<double>());
      break;
    }
    case TaskId::slot_insertion: {
      grasp.holds = {{"stick", ChainId::right, false}, {"stick", ChainId::left, true}};
      insert.name = "Insert";
      insert.object = "stick";
      insert.target = "slot";
      insert.tip_local = Vec3::Zero();
      break;
    }
    case TaskId::thread_needle: {
      grasp.holds = {{"needle", ChainId::right, false}};
      insert.name = "Thread";
      insert.object = "needle";
      insert.target = "eyelet";
      const auto& nc = task.config["needle"];
      insert.tip_local =
          Vec3(0.0, 0.0, nc["half_length"].get<double>() + nc["radius"].get<double>());
      break;
    }
  }
  task.stages = {grasp, insert};
  return task;
}

std::vector<SceneObject> TaskSpec::sample_scene(std::uint64_t seed) const {
  Sampler s(id, seed);
  try {
    switch (id) {
      case TaskId::peg_insertion: return sample_peg(config, s);
      case TaskId::slot_insertion: return sample_slot(config, s);
      case TaskId::thread_needle: return sample_needle(config, s);
    }
  } catch (const json::exception& e) {
    throw UserError(std::string("task config: ") + e.what());
  }
  throw UserError("unknown task");
}

std::vector<std::string> TaskSpec::stage_names() const {
  std::vector<std::string> names;
  for (const auto& s : stages) names.push_back(s.name);
  return names;
}

}  // namespace avsim
