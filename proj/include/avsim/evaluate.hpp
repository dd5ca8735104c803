#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avsim/nn_policy.hpp"
#include "avsim/policy.hpp"

namespace avsim {

inline constexpr std::uint64_t kEvalSeedBase = 1000;

// Evaluation scenes: seeds base, base + 1, ...
std::vector<std::uint64_t> evaluation_seeds(int n, std::uint64_t base = kEvalSeedBase);

struct StageCounts {
  std::vector<std::string> stage_names;
  int rollouts = 0;
  int aborted = 0;
  std::vector<int> successes;  // latched count per stage

  double percent(std::size_t stage) const;
  // Lexicographic from the last stage backwards; used to pick the best variant.
  bool better_than(const StageCounts& other) const;
};

// Rollouts run on `threads` workers (0: hardware concurrency) and are reduced in seed order.
StageCounts evaluate(const Policy& policy, const TaskSpec& task, const Rig& rig,
                     const std::vector<std::uint64_t>& seeds, const ExecuteOptions& options = {},
                     int threads = 0, std::vector<Rollout>* rollouts = nullptr);

struct SuccessRow {
  std::string label;
  CameraSet cameras;
  std::string policy;
  int variants = 1;
  int best_variant = 0;
  StageCounts counts;
};

struct SuccessTable {
  std::string task;
  std::vector<std::string> stage_names;
  std::vector<SuccessRow> rows;
  std::optional<AblationProbe> probe;  // neighbor changes when AV frames leave the key

  nlohmann::json to_json() const;
  // One aligned line per row: "AV + Static | Grasp 98 | Thread 52".
  std::string to_text() const;
};

struct AblationOptions {
  std::vector<CameraSet> configurations = camera_configurations();
  int rollouts = 50;
  int variants = 1;  // K leave-one-fold-out training variants; the best is reported
  int chunk_size = kDefaultChunkSize;
  ExecuteOptions execute;
  int threads = 0;
  int probe_queries = 100;  // 0 disables the neighbor ablation probe
};

// Trains the NN baseline once on every camera the configurations need, then
// evaluates each configuration (and each fold variant) on fresh seeds.
SuccessTable camera_ablation(const std::vector<std::filesystem::path>& episodes, const TaskSpec& task,
                             const Rig& rig, const AblationOptions& options);

// Episodes kept by fold variant k of K (all when K = 1).
std::vector<bool> fold_mask(std::size_t episodes, int k, int variants);

}  // namespace avsim
