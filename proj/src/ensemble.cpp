#include <cmath>
#include <exception>

#include "avsim/demonstration.hpp"
#include "avsim/error.hpp"
#include "avsim/policy.hpp"

namespace avsim {

std::vector<double> ensemble_weights(std::size_t live, double m) {
  std::vector<double> w(live);
  double sum = 0.0;
  for (std::size_t i = 0; i < live; ++i) {
    w[i] = std::exp(-m * static_cast<double>(i));
    sum += w[i];
  }
  for (double& x : w) x /= sum;
  return w;
}

void TemporalEnsemble::add(std::uint64_t start_step, ActionChunk chunk) {
  if (chunk.empty()) throw ContractViolation("empty action chunk");
  if (!chunks_.empty() && start_step < chunks_.back().start) {
    throw ContractViolation("chunks must be added in step order");
  }
  chunks_.push_back({start_step, std::move(chunk)});
}

RigVector TemporalEnsemble::action(std::uint64_t t) {
  std::erase_if(chunks_, [t](const Entry& e) { return e.start + e.actions.size() <= t; });
  std::vector<const RigVector*> preds;
  for (const auto& e : chunks_) {
    if (e.start <= t) preds.push_back(&e.actions[t - e.start]);
  }
  if (preds.empty()) throw ContractViolation("no live chunk covers step " + std::to_string(t));
  if (preds.size() == 1) return *preds.front();
  const auto w = ensemble_weights(preds.size(), m_);
  RigVector a = RigVector::Zero();
  for (std::size_t i = 0; i < preds.size(); ++i) a += w[i] * *preds[i];
  return a;
}

Rollout execute_with_ensemble(const Policy& policy, const TaskSpec& task, const Rig& rig,
                              std::uint64_t seed, const ExecuteOptions& options) {
  if (options.query_period < 1) throw UserError("query period must be at least 1");
  const int horizon = options.horizon > 0 ? options.horizon : task.horizon;
  Rollout out;
  out.seed = seed;
  SimState state = reset(task, rig, seed);
  const std::size_t last = task.stages.size() - 1;
  const CameraSet cams = policy.cameras();
  TemporalEnsemble ensemble(options.m);
  ActionChunk current;
  std::uint64_t current_start = 0;

  try {
    auto session = policy.start(task, rig, seed);
    for (int t = 0; t < horizon; ++t) {
      const auto ts = static_cast<std::uint64_t>(t);
      if (t % options.query_period == 0) {
        Observation obs;
        obs.time_step = state.time_step;
        obs.qpos = state.q;
        obs.cameras = cams;
        obs.frames = render_frames(state, rig, options.camera_rig, cams, options.include_av_arm);
        if (policy.privileged()) obs.privileged = &state;
        ActionChunk chunk = session->act(obs);
        if (chunk.empty()) throw ContractViolation("policy returned an empty chunk");
        for (auto& a : chunk) a = rig.clamp(a);
        ++out.queries;
        if (options.ensemble) {
          ensemble.add(ts, std::move(chunk));
        } else {
          current = std::move(chunk);
          current_start = ts;
        }
      }
      RigVector action;
      if (options.ensemble) {
        action = ensemble.action(ts);
      } else {
        if (ts - current_start >= current.size()) {
          throw ContractViolation("chunk shorter than the query period");
        }
        action = current[ts - current_start];
      }
      action = quantize(action);
      if (options.keep_trajectory) {
        out.qpos.push_back(state.q);
        out.actions.push_back(action);
      }
      state = step(state, action, task, rig);
      ++out.steps;
      if (options.stop_on_success && state.stage_latched_at[last] >= 0) break;
    }
  } catch (const std::exception& e) {
    out.aborted = true;
    out.error = e.what();
  }
  out.final_state = std::move(state);
  return out;
}

}  // namespace avsim
