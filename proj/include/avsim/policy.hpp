#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "avsim/camera.hpp"
#include "avsim/rig.hpp"
#include "avsim/scripted_operator.hpp"
#include "avsim/sim.hpp"
#include "avsim/teleop.hpp"

namespace avsim {

inline constexpr int kDefaultChunkSize = 50;

struct Observation {
  std::uint64_t time_step = 0;
  RigVector qpos = RigVector::Zero();
  CameraSet cameras;
  std::vector<Frame> frames;  // one per camera, canonical order
  // Ground truth, only filled for policies that ask for it (the scripted oracle).
  const SimState* privileged = nullptr;
};

// Rows are consecutive future joint targets starting at the query step.
using ActionChunk = std::vector<RigVector>;

class PolicySession {
 public:
  virtual ~PolicySession() = default;
  virtual ActionChunk act(const Observation& obs) = 0;
};

// Immutable after construction; one session per rollout.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::string name() const = 0;
  virtual CameraSet cameras() const = 0;
  virtual bool privileged() const { return false; }
  virtual std::unique_ptr<PolicySession> start(const TaskSpec& task, const Rig& rig,
                                               std::uint64_t seed) const = 0;
};

// ---- temporal ensembling ----

// Normalized weights exp(-m * i) for `live` chunks, i = 0 the oldest.
std::vector<double> ensemble_weights(std::size_t live, double m);

class TemporalEnsemble {
 public:
  explicit TemporalEnsemble(double m = 0.1) : m_(m) {}

  void add(std::uint64_t start_step, ActionChunk chunk);
  // Weighted average of every live chunk's prediction for step t (drops expired chunks).
  // Throws ContractViolation when no chunk covers t.
  RigVector action(std::uint64_t t);
  std::size_t live() const { return chunks_.size(); }

 private:
  struct Entry {
    std::uint64_t start;
    ActionChunk actions;
  };
  double m_;
  std::vector<Entry> chunks_;  // oldest first
};

struct ExecuteOptions {
  int horizon = 0;  // 0: the task's horizon
  int query_period = 25;
  bool ensemble = true;
  double m = 0.1;
  bool stop_on_success = true;
  bool keep_trajectory = false;
  CameraRig camera_rig = CameraRig::nominal();
  bool include_av_arm = true;
};

struct Rollout {
  std::uint64_t seed = 0;
  SimState final_state;
  int steps = 0;
  int queries = 0;
  bool aborted = false;  // the policy threw; counted as failure
  std::string error;
  std::vector<RigVector> actions;  // applied actions when keep_trajectory
  std::vector<RigVector> qpos;     // state before each action when keep_trajectory
};

Rollout execute_with_ensemble(const Policy& policy, const TaskSpec& task, const Rig& rig,
                              std::uint64_t seed, const ExecuteOptions& options = {});

// ---- reference policies ----

// Scripted operator on ground truth through the teleop pipeline; one-row chunks.
class OraclePolicy final : public Policy {
 public:
  explicit OraclePolicy(OperatorConfig op = zero_noise(), TeleopConfig teleop = {})
      : op_(op), teleop_(teleop) {}
  std::string name() const override { return "oracle"; }
  CameraSet cameras() const override { return {}; }
  bool privileged() const override { return true; }
  std::unique_ptr<PolicySession> start(const TaskSpec& task, const Rig& rig,
                                       std::uint64_t seed) const override;

  static OperatorConfig zero_noise() {
    OperatorConfig c;
    c.noise_std = 0.0;
    return c;
  }

 private:
  OperatorConfig op_;
  TeleopConfig teleop_;
};

// Uniform joint targets within limits.
class RandomPolicy final : public Policy {
 public:
  explicit RandomPolicy(int chunk_size = kDefaultChunkSize) : chunk_size_(chunk_size) {}
  std::string name() const override { return "random"; }
  CameraSet cameras() const override { return {}; }
  std::unique_ptr<PolicySession> start(const TaskSpec& task, const Rig& rig,
                                       std::uint64_t seed) const override;

 private:
  int chunk_size_;
};

}  // namespace avsim
