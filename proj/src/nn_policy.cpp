#include "avsim/nn_policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "avsim/error.hpp"

namespace avsim {

namespace {

void append_thumb(std::vector<float>& key, const Frame& frame) {
  for (std::uint8_t v : downsample(frame, kKeyThumb, kKeyThumb)) key.push_back(static_cast<float>(v));
}

Frame as_frame(const EpisodeManifest& m, const std::vector<std::uint8_t>& pixels) {
  Frame f;
  f.width = m.width;
  f.height = m.height;
  f.pixels = pixels;
  return f;
}

}  // namespace

std::vector<float> observation_key(const RigVector& qpos, CameraSet cameras,
                                   const std::vector<Frame>& frames) {
  if (frames.size() != static_cast<std::size_t>(cameras.size())) {
    throw ContractViolation("observation frames do not match its camera set");
  }
  std::vector<float> key;
  key.reserve(kRigDof + frames.size() * kKeyThumb * kKeyThumb);
  for (int i = 0; i < kRigDof; ++i) key.push_back(static_cast<float>(qpos[i]));
  for (const auto& f : frames) append_thumb(key, f);
  return key;
}

class NnPolicy::Builder {
 public:
  explicit Builder(const NnOptions& options) : policy_(std::make_shared<NnPolicy>()) {
    if (options.chunk_size < 1) throw UserError("chunk size must be at least 1");
    policy_->options_ = options;
  }

  void begin(const EpisodeManifest& m, const std::string& where) {
    if (!m.camera_set.contains(policy_->options_.cameras)) {
      throw UserError(where + " lacks cameras: " + (policy_->options_.cameras - m.camera_set).to_string());
    }
    if (policy_->actions_.empty()) {
      policy_->task_ = m.task;
    } else if (m.task != policy_->task_) {
      throw UserError(where + " was recorded on a different task");
    }
    manifest_ = m;
    policy_->actions_.emplace_back();
  }

  void add(const StepRecord& r) {
    const std::size_t ep = policy_->actions_.size() - 1;
    auto& acts = policy_->actions_.back();
    std::vector<float> key;
    for (float q : r.qpos) key.push_back(q);
    for (CameraId id : policy_->options_.cameras.ids()) {
      const auto& pixels = r.frames[static_cast<std::size_t>(manifest_.camera_set.index_of(id))];
      append_thumb(key, as_frame(manifest_, pixels));
    }
    policy_->owners_.emplace_back(ep, acts.size());
    policy_->raw_keys_.push_back(std::move(key));
    acts.push_back(to_rig_vector(r.action));
  }

  std::shared_ptr<const NnPolicy> finish() {
    policy_->normalize();
    return policy_;
  }

 private:
  std::shared_ptr<NnPolicy> policy_;
  EpisodeManifest manifest_;
};

void NnPolicy::normalize() {
  if (actions_.empty()) throw UserError("NN training needs at least one episode");
  if (raw_keys_.empty()) throw UserError("NN training needs at least one step");
  const std::size_t n = raw_keys_.size();
  dim_ = raw_keys_.front().size();
  mean_.assign(dim_, 0.0);
  inv_std_.assign(dim_, 0.0);
  for (const auto& k : raw_keys_) {
    for (std::size_t d = 0; d < dim_; ++d) mean_[d] += k[d];
  }
  for (double& m : mean_) m /= static_cast<double>(n);
  for (const auto& k : raw_keys_) {
    for (std::size_t d = 0; d < dim_; ++d) {
      const double c = k[d] - mean_[d];
      inv_std_[d] += c * c;
    }
  }
  for (double& s : inv_std_) {
    const double sd = std::sqrt(s / static_cast<double>(n));
    s = sd > 1e-9 ? 1.0 / sd : 1.0;
  }
  keys_.resize(n * dim_);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < dim_; ++d) {
      keys_[i * dim_ + d] = static_cast<float>((raw_keys_[i][d] - mean_[d]) * inv_std_[d]);
    }
  }
}

std::shared_ptr<const NnPolicy> NnPolicy::derive(CameraSet subset, const std::vector<bool>& keep) const {
  if (!options_.cameras.contains(subset)) {
    throw UserError("NN index lacks cameras: " + (subset - options_.cameras).to_string());
  }
  if (!keep.empty() && keep.size() != actions_.size()) throw ContractViolation("keep mask has the wrong size");
  auto out = std::make_shared<NnPolicy>();
  out->options_ = options_;
  out->options_.cameras = subset;
  out->task_ = task_;
  std::vector<std::size_t> dims;
  for (std::size_t d = 0; d < kRigDof; ++d) dims.push_back(d);
  constexpr std::size_t thumb = kKeyThumb * kKeyThumb;
  for (CameraId id : subset.ids()) {
    const std::size_t base = kRigDof + static_cast<std::size_t>(options_.cameras.index_of(id)) * thumb;
    for (std::size_t d = 0; d < thumb; ++d) dims.push_back(base + d);
  }
  std::vector<std::size_t> renumber(actions_.size(), 0);
  for (std::size_t e = 0; e < actions_.size(); ++e) {
    if (!keep.empty() && !keep[e]) continue;
    renumber[e] = out->actions_.size();
    out->actions_.push_back(actions_[e]);
  }
  for (std::size_t i = 0; i < raw_keys_.size(); ++i) {
    const auto [ep, st] = owners_[i];
    if (!keep.empty() && !keep[ep]) continue;
    std::vector<float> k;
    k.reserve(dims.size());
    for (std::size_t d : dims) k.push_back(raw_keys_[i][d]);
    out->raw_keys_.push_back(std::move(k));
    out->owners_.emplace_back(renumber[ep], st);
  }
  out->normalize();
  return out;
}

std::shared_ptr<const NnPolicy> NnPolicy::train(const std::vector<std::filesystem::path>& episodes,
                                                const NnOptions& options) {
  Builder b(options);
  for (const auto& path : episodes) {
    b.begin(read_manifest(path), path.string());
    for_each_record(path, [&](const EpisodeManifest&, const StepRecord& r) { b.add(r); });
  }
  return b.finish();
}

std::shared_ptr<const NnPolicy> NnPolicy::train(const std::vector<Episode>& episodes,
                                                const NnOptions& options) {
  Builder b(options);
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    b.begin(episodes[i].manifest, "episode " + std::to_string(i));
    for (const auto& r : episodes[i].steps) b.add(r);
  }
  return b.finish();
}

Neighbor NnPolicy::nearest(const std::vector<float>& raw_key, std::optional<std::size_t> exclude_episode) const {
  if (raw_key.size() != dim_) throw ContractViolation("query key has the wrong dimension");
  std::vector<float> q(dim_);
  for (std::size_t d = 0; d < dim_; ++d) q[d] = static_cast<float>((raw_key[d] - mean_[d]) * inv_std_[d]);
  Neighbor best;
  best.distance = std::numeric_limits<double>::infinity();
  bool found = false;
  for (std::size_t i = 0; i < owners_.size(); ++i) {
    if (exclude_episode && owners_[i].first == *exclude_episode) continue;
    const float* k = &keys_[i * dim_];
    double dist = 0.0;
    for (std::size_t d = 0; d < dim_; ++d) {
      const double diff = static_cast<double>(k[d]) - static_cast<double>(q[d]);
      dist += diff * diff;
    }
    if (dist < best.distance) {
      best = {owners_[i].first, owners_[i].second, dist};
      found = true;
    }
  }
  if (!found) throw UserError("no training steps left to search");
  best.distance = std::sqrt(best.distance);
  return best;
}

ActionChunk NnPolicy::chunk_at(std::size_t episode, std::size_t step) const {
  const auto& acts = actions_.at(episode);
  ActionChunk chunk;
  chunk.reserve(static_cast<std::size_t>(options_.chunk_size));
  for (int i = 0; i < options_.chunk_size; ++i) {
    chunk.push_back(acts[std::min(step + static_cast<std::size_t>(i), acts.size() - 1)]);
  }
  return chunk;
}

ActionChunk NnPolicy::query(const Observation& obs) const {
  if (obs.cameras != options_.cameras) throw ContractViolation("observation camera set differs from the policy's");
  const Neighbor n = nearest(observation_key(obs.qpos, obs.cameras, obs.frames));
  return chunk_at(n.episode, n.step);
}

namespace {

class NnSession final : public PolicySession {
 public:
  explicit NnSession(const NnPolicy& p) : policy_(p) {}
  ActionChunk act(const Observation& obs) override { return policy_.query(obs); }

 private:
  const NnPolicy& policy_;
};

}  // namespace

std::unique_ptr<PolicySession> NnPolicy::start(const TaskSpec& task, const Rig&, std::uint64_t) const {
  if (task.id != task_) throw UserError("NN policy was trained on " + std::string(to_string(task_)));
  return std::make_unique<NnSession>(*this);
}

AblationProbe neighbor_ablation_probe(const NnPolicy& with, const NnPolicy& without, int queries) {
  if (with.size() != without.size() || with.episodes() != without.episodes()) {
    throw ContractViolation("ablation probe needs two indices over the same episodes");
  }
  if (with.episodes() < 2) throw UserError("ablation probe needs at least two episodes");
  AblationProbe probe;
  const std::size_t n = with.size();
  for (int q = 0; q < queries; ++q) {
    const std::size_t i = static_cast<std::size_t>(q) * n / static_cast<std::size_t>(queries);
    const std::size_t ep = with.owner(i).first;
    const Neighbor a = with.nearest(with.raw_key(i), ep);
    const Neighbor b = without.nearest(without.raw_key(i), ep);
    ++probe.queries;
    if (a.episode != b.episode || a.step != b.step) ++probe.differing;
  }
  return probe;
}

}  // namespace avsim
