#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "avsim/rig.hpp"
#include "avsim/scene.hpp"

namespace avsim {

enum class TaskId : std::uint8_t { peg_insertion = 0, slot_insertion = 1, thread_needle = 2 };

inline constexpr std::array<TaskId, 3> kAllTasks = {TaskId::peg_insertion, TaskId::slot_insertion,
                                                   TaskId::thread_needle};

std::string_view to_string(TaskId id);
TaskId task_id_from_string(std::string_view name);  // throws UserError

struct SimParams {
  double dt = 0.02;            // 50 Hz
  double v_max = 2.0;          // rad/s, every joint including grippers
  double grasp_radius = 0.02;  // m, tool point to object grasp core
  double align_tol = 15.0 * M_PI / 180.0;
};

struct Hold {
  std::string object;
  ChainId chain = ChainId::right;
  bool support = false;  // second hand on an object attached elsewhere
};

enum class StageKind : std::uint8_t { grasp, insert };

struct StageSpec {
  std::string name;
  StageKind kind = StageKind::grasp;
  std::vector<Hold> holds;  // grasp stages
  // insert stages: `object`'s tip (local point, local direction) enters `target`'s socket
  std::string object;
  std::string target;
  Vec3 tip_local = Vec3::Zero();
  Vec3 direction_local = Vec3::UnitZ();
};

// Task definition: a seeded scene sampler plus ordered, latched stage predicates.
// `config` holds every sampling range and tolerance (see docs/tasks.md).
struct TaskSpec {
  TaskId id = TaskId::peg_insertion;
  std::vector<StageSpec> stages;
  int horizon = 400;
  SimParams params;
  nlohmann::json config;

  std::vector<SceneObject> sample_scene(std::uint64_t seed) const;
  std::vector<std::string> stage_names() const;
};

// Default config of a task, with `overrides` merged in (JSON merge patch).
TaskSpec make_task(TaskId id, const nlohmann::json& overrides = nlohmann::json::object());
nlohmann::json default_task_config(TaskId id);

struct SimTelemetry {
  std::uint64_t clamped_targets = 0;
  std::uint64_t attach_events = 0;
  std::uint64_t release_events = 0;
};

struct SimState {
  std::uint64_t time_step = 0;
  RigVector q = RigVector::Zero();
  std::vector<SceneObject> objects;
  std::vector<std::int64_t> stage_latched_at;  // time step of latching, -1 while false
  SimTelemetry telemetry;

  std::vector<bool> stage_flags() const;
  const SceneObject* find(std::string_view id) const;
  SceneObject* find(std::string_view id);
  bool operator==(const SimState& other) const;
};

SimState reset(const TaskSpec& task, const Rig& rig, std::uint64_t seed);

// Advances one tick of params.dt: rate-limited joint motion, grasp/release
// rules, attachment slaving, stage latching.
SimState step(const SimState& state, const RigVector& joint_targets, const TaskSpec& task,
              const Rig& rig);

std::vector<bool> stage_status(const SimState& state, const TaskSpec& task);

struct InsertionGeometry {
  double penetration = 0.0;  // along the socket axis past the entry point, m
  double lateral = 0.0;      // distance from the socket axis (slot: across the slot), m
  double misalignment = 0.0; // rad
  double overhang = 0.0;     // slot only: how far the body sticks out of the slot ends, m
};

InsertionGeometry measure_insertion(const SceneObject& object, const SceneObject& target,
                                    const StageSpec& stage);
bool insertion_satisfied(const InsertionGeometry& g, const Socket& socket, const SimParams& params);

// Evaluates one stage's geometric condition on the current state (ignores latching).
bool stage_condition(const SimState& state, const StageSpec& stage, const SimParams& params);

}  // namespace avsim
