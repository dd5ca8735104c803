#include "avsim/demonstration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace avsim {

RigVector quantize(const RigVector& v) {
  RigVector out;
  for (int i = 0; i < kRigDof; ++i) out[i] = static_cast<double>(static_cast<float>(v[i]));
  return out;
}

std::vector<Frame> render_frames(const SimState& state, const Rig& rig, const CameraRig& cameras,
                                 CameraSet set, bool include_av_arm) {
  std::vector<Frame> frames;
  if (set.empty()) return frames;
  const RenderScene scene = build_render_scene(state, rig, include_av_arm);
  for (CameraId id : set.ids()) {
    const CameraModel& cam = cameras.camera(id);
    frames.push_back(render(scene, cam, camera_pose(cam, rig, state.q), state.time_step));
  }
  return frames;
}

namespace {

double av_axis_angle(const TaskSpec& task, const Rig& rig, const SimState& s) {
  if (task.id != TaskId::thread_needle) return std::numeric_limits<double>::quiet_NaN();
  const SceneObject* eyelet = s.find("eyelet");
  const Vec3 hole_axis = eyelet->pose.rotate(eyelet->socket->axis).normalized();
  const Vec3 optical = rig.tool(s.q, ChainId::av).rotate(Vec3::UnitZ());
  return std::acos(std::clamp(optical.dot(hole_axis), -1.0, 1.0));
}

}  // namespace

DemoResult run_demonstration(const TaskSpec& task, const Rig& rig, std::uint64_t seed,
                             const DemoOptions& options, const StepSink& sink) {
  ScriptedOperator op(task, rig, seed, options.op);
  TeleopPipeline teleop(rig, options.teleop);
  SimState state = reset(task, rig, seed);
  teleop.anchor(op.start_devices(), state.q);

  DemoResult result;
  result.vantage_attempts = op.vantage_attempts();
  const std::size_t last = task.stages.size() - 1;
  int tail = -1;
  for (int t = 0; t < task.horizon; ++t) {
    const RigVector action = quantize(teleop.update(op.next(state)));
    if (sink) {
      sink(state, action,
           render_frames(state, rig, options.camera_rig, options.cameras, options.include_av_arm));
    }
    state = step(state, action, task, rig);
    ++result.steps;
    if (tail < 0 && state.stage_latched_at[last] >= 0) {
      result.av_axis_angle = av_axis_angle(task, rig, state);
      tail = options.tail;
    }
    if (tail >= 0 && tail-- == 0) break;
  }
  if (state.stage_latched_at[last] < 0) result.av_axis_angle = av_axis_angle(task, rig, state);
  result.final_state = std::move(state);
  return result;
}

EpisodeManifest make_manifest(const TaskSpec& task, const Rig& rig, std::uint64_t seed,
                              const DemoOptions& options) {
  EpisodeManifest m;
  m.task = task.id;
  m.seed = seed;
  m.camera_set = options.cameras;
  m.av_arm_present = options.include_av_arm;
  m.chain_checksums = rig.checksums();
  for (const auto& o : reset(task, rig, seed).objects) m.object_ids.push_back(o.id);
  const Intrinsics& in = options.camera_rig.camera(CameraId::static_top).intrinsics;
  m.width = in.width;
  m.height = in.height;
  m.baseline = options.camera_rig.baseline;
  m.task_config = task.config;
  m.meta = {{"operator", "scripted"},
            {"noise_std", options.op.noise_std},
            {"filter_alpha", options.teleop.filter_enabled ? options.teleop.filter_alpha : 0.0}};
  return m;
}

DemoResult record_episode(const std::filesystem::path& path, const TaskSpec& task, const Rig& rig,
                          std::uint64_t seed, const DemoOptions& options) {
  EpisodeWriter writer(path, make_manifest(task, rig, seed, options));
  DemoResult result = run_demonstration(
      task, rig, seed, options, [&](const SimState& s, const RigVector& a, std::vector<Frame>&& frames) {
        writer.append(make_record(s, a, frames));
      });
  writer.finalize(result.final_state.stage_flags());
  return result;
}

Episode record_in_memory(const TaskSpec& task, const Rig& rig, std::uint64_t seed,
                         const DemoOptions& options, DemoResult* result) {
  Episode ep;
  ep.manifest = make_manifest(task, rig, seed, options);
  DemoResult r = run_demonstration(
      task, rig, seed, options, [&](const SimState& s, const RigVector& a, std::vector<Frame>&& frames) {
        ep.steps.push_back(make_record(s, a, frames));
      });
  ep.manifest.step_count = ep.steps.size();
  ep.manifest.final_stages = r.final_state.stage_flags();
  if (result != nullptr) *result = std::move(r);
  return ep;
}

}  // namespace avsim
