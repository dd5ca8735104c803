#pragma once

#include <filesystem>
#include <memory>
#include <vector>

#include "avsim/episode.hpp"
#include "avsim/policy.hpp"

namespace avsim {

inline constexpr int kKeyThumb = 8;  // frames enter the key as 8x8 block averages

struct NnOptions {
  CameraSet cameras;
  int chunk_size = kDefaultChunkSize;
};

// Observation key: qpos followed by each camera's 8x8 thumbnail, canonical camera order.
std::vector<float> observation_key(const RigVector& qpos, CameraSet cameras,
                                   const std::vector<Frame>& frames);

struct Neighbor {
  std::size_t episode = 0;
  std::size_t step = 0;
  double distance = 0.0;
};

// Nearest-neighbor baseline. Keys are z-normalized per dimension over the
// training set; ties go to the lowest (episode, step).
class NnPolicy final : public Policy {
 public:
  // Streams each episode once. Throws UserError when an episode lacks a requested camera
  // or the episodes were recorded on different tasks.
  static std::shared_ptr<const NnPolicy> train(const std::vector<std::filesystem::path>& episodes,
                                               const NnOptions& options);
  static std::shared_ptr<const NnPolicy> train(const std::vector<Episode>& episodes,
                                               const NnOptions& options);

  // Same training data restricted to `subset` cameras and to episodes with keep[e] true
  // (empty `keep` keeps all). Normalization is recomputed over what is kept.
  std::shared_ptr<const NnPolicy> derive(CameraSet subset, const std::vector<bool>& keep = {}) const;

  std::string name() const override { return "nn"; }
  CameraSet cameras() const override { return options_.cameras; }
  std::unique_ptr<PolicySession> start(const TaskSpec& task, const Rig& rig,
                                       std::uint64_t seed) const override;

  // `exclude_episode` removes one training episode from the search (leave-one-out probes).
  Neighbor nearest(const std::vector<float>& raw_key,
                   std::optional<std::size_t> exclude_episode = std::nullopt) const;
  ActionChunk chunk_at(std::size_t episode, std::size_t step) const;
  ActionChunk query(const Observation& obs) const;

  std::size_t episodes() const { return actions_.size(); }
  std::size_t size() const { return owners_.size(); }
  std::size_t key_dim() const { return dim_; }
  TaskId task() const { return task_; }
  const std::vector<float>& raw_key(std::size_t index) const { return raw_keys_[index]; }
  std::pair<std::size_t, std::size_t> owner(std::size_t index) const { return owners_[index]; }

 private:
  class Builder;
  void normalize();
  NnOptions options_;
  TaskId task_ = TaskId::peg_insertion;
  std::size_t dim_ = 0;
  std::vector<std::vector<float>> raw_keys_;
  std::vector<float> keys_;  // normalized, row-major size() x dim_
  std::vector<double> mean_;
  std::vector<double> inv_std_;
  std::vector<std::pair<std::size_t, std::size_t>> owners_;  // (episode, step)
  std::vector<std::vector<RigVector>> actions_;
};

// Leave-one-episode-out probe: for `queries` records spread evenly over the
// training set, compares the neighbor chosen by `with` and `without` (both
// trained on the same episodes) and counts disagreements.
struct AblationProbe {
  int queries = 0;
  int differing = 0;
};

AblationProbe neighbor_ablation_probe(const NnPolicy& with, const NnPolicy& without, int queries);

}  // namespace avsim
