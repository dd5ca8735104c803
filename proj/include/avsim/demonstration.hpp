#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "avsim/camera.hpp"
#include "avsim/episode.hpp"
#include "avsim/scripted_operator.hpp"
#include "avsim/sim.hpp"
#include "avsim/teleop.hpp"

namespace avsim {

// Actions are stored as float32; the simulator consumes exactly the stored value.
RigVector quantize(const RigVector& v);

struct DemoOptions {
  OperatorConfig op;
  TeleopConfig teleop;
  CameraSet cameras = CameraSet::all();
  CameraRig camera_rig = CameraRig::nominal();
  bool include_av_arm = true;
  // Steps kept after the final stage latches; the episode ends there or at the horizon.
  int tail = 10;
};

struct DemoResult {
  SimState final_state;
  int steps = 0;
  int vantage_attempts = 0;
  // Angle between the AV optical axis and the target's socket axis when the
  // last stage latched (or at the end); thread_needle only, else NaN.
  double av_axis_angle = 0.0;
};

// Called once per step with the state the step starts from, the action
// applied, and that state's frames for every camera in DemoOptions::cameras.
using StepSink = std::function<void(const SimState&, const RigVector&, std::vector<Frame>&&)>;

// Scripted operator -> teleop pipeline -> simulator -> renderer, one 50 Hz tick at a time.
DemoResult run_demonstration(const TaskSpec& task, const Rig& rig, std::uint64_t seed,
                             const DemoOptions& options, const StepSink& sink = {});

// Manifest for an episode recorded with `options` (step count and stages filled at finalize).
EpisodeManifest make_manifest(const TaskSpec& task, const Rig& rig, std::uint64_t seed,
                              const DemoOptions& options);

// Runs one demonstration and streams it to `path`.
DemoResult record_episode(const std::filesystem::path& path, const TaskSpec& task, const Rig& rig,
                          std::uint64_t seed, const DemoOptions& options);

// In-memory variant of record_episode.
Episode record_in_memory(const TaskSpec& task, const Rig& rig, std::uint64_t seed,
                         const DemoOptions& options, DemoResult* result = nullptr);

std::vector<Frame> render_frames(const SimState& state, const Rig& rig, const CameraRig& cameras,
                                 CameraSet set, bool include_av_arm = true);

}  // namespace avsim
