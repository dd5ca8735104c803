#include <random>

#include "avsim/demonstration.hpp"
#include "avsim/error.hpp"
#include "avsim/policy.hpp"

namespace avsim {

namespace {

class OracleSession final : public PolicySession {
 public:
  OracleSession(const TaskSpec& task, const Rig& rig, std::uint64_t seed, OperatorConfig op,
                TeleopConfig teleop)
      : op_(task, rig, seed, op), teleop_(rig, teleop) {
    teleop_.anchor(op_.start_devices(), reset(task, rig, seed).q);
  }

  ActionChunk act(const Observation& obs) override {
    if (obs.privileged == nullptr) throw ContractViolation("oracle needs the simulator state");
    return {quantize(teleop_.update(op_.next(*obs.privileged)))};
  }

 private:
  ScriptedOperator op_;
  TeleopPipeline teleop_;
};

class RandomSession final : public PolicySession {
 public:
  RandomSession(const Rig& rig, std::uint64_t seed, int chunk_size)
      : lo_(rig.lower_limits()), hi_(rig.upper_limits()), rng_(seed ^ 0xA5A5A5A5ULL), chunk_(chunk_size) {}

  ActionChunk act(const Observation&) override {
    ActionChunk chunk(static_cast<std::size_t>(chunk_));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& a : chunk) {
      for (int i = 0; i < kRigDof; ++i) a[i] = lo_[i] + u(rng_) * (hi_[i] - lo_[i]);
    }
    return chunk;
  }

 private:
  RigVector lo_;
  RigVector hi_;
  std::mt19937_64 rng_;
  int chunk_;
};

}  // namespace

std::unique_ptr<PolicySession> OraclePolicy::start(const TaskSpec& task, const Rig& rig,
                                                   std::uint64_t seed) const {
  return std::make_unique<OracleSession>(task, rig, seed, op_, teleop_);
}

std::unique_ptr<PolicySession> RandomPolicy::start(const TaskSpec&, const Rig& rig,
                                                   std::uint64_t seed) const {
  if (chunk_size_ < 1) throw UserError("chunk size must be at least 1");
  return std::make_unique<RandomSession>(rig, seed, chunk_size_);
}

}  // namespace avsim
