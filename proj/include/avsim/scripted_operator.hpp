#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "avsim/rig.hpp"
#include "avsim/sim.hpp"
#include "avsim/teleop.hpp"

namespace avsim {

struct OperatorConfig {
  double noise_std = 0.005;   // m on device translation; twice this in rad on rotation
  double speed = 0.25;        // m/s setpoint travel
  double turn_rate = 1.2;     // rad/s setpoint rotation
  double bias_gain = 0.1;     // per tick, integral correction toward the observed tool pose
  double bias_limit = 0.08;   // m (rad for the rotation part)
  double dt = 0.02;
};

// Nominal operator-frame device poses at session start (y-up, meters).
DeviceFrame nominal_device_frame();

// Closed-loop stand-in for a human demonstrator. It watches the ground-truth
// simulator state, plans tool/object waypoints for the task, and emits device
// poses through the inverse of the teleop mapping, so every command still
// passes through anchoring, filtering and IK downstream.
class ScriptedOperator {
 public:
  ScriptedOperator(const TaskSpec& task, const Rig& rig, std::uint64_t seed,
                   OperatorConfig config = {});

  // Device poses to anchor with; the pipeline must be anchored on these at the reset state.
  const DeviceFrame& start_devices() const { return start_; }

  // Device poses for the tick that starts at `state`.
  DeviceFrame next(const SimState& state);

  bool finished() const { return segment_ >= script_.size(); }
  std::size_t segment() const { return segment_; }
  // Camera pose the AV arm is steered to (the task vantage).
  const Pose& vantage() const { return vantage_; }
  int vantage_attempts() const { return vantage_attempts_; }

  struct Goal {
    std::array<std::optional<Pose>, 3> tool;  // per ChainId; empty keeps the current setpoint
    std::array<std::optional<double>, 2> trigger;  // left, right; empty keeps the last value
    bool precise = false;                     // wait until the tool reaches the goal
    bool track = false;                       // re-plan the goal every tick
    int dwell = 0;                            // ticks to hold after arriving
    int timeout = 150;
    std::function<bool(const SimState&)> until;  // optional extra completion condition
  };
  using Step = std::function<Goal(const SimState&, const ScriptedOperator&)>;

  // Current commanded (pre-compensation) tool setpoint of a chain.
  const Pose& setpoint(ChainId id) const { return setpoint_[static_cast<std::size_t>(id)]; }
  const Rig& rig() const { return *rig_; }
  const TaskSpec& task() const { return *task_; }

 private:
  void build_script(const SimState& initial);
  bool arrived(const SimState& state) const;

  const TaskSpec* task_;
  const Rig* rig_;
  OperatorConfig config_;
  std::mt19937_64 rng_;
  DeviceFrame start_;
  TeleopAnchor anchor_;
  Pose vantage_;
  int vantage_attempts_ = 0;

  std::vector<Step> script_;
  std::size_t segment_ = 0;
  std::optional<Goal> goal_;
  int segment_ticks_ = 0;
  int dwell_left_ = -1;

  std::array<Pose, 3> setpoint_{};
  std::array<Vec3, 3> bias_t_{};
  std::array<Vec3, 3> bias_r_{};
  std::array<double, 2> trigger_{};
  std::int64_t tick_ = 0;
};

}  // namespace avsim
