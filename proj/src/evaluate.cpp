#include "avsim/evaluate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

#include "avsim/error.hpp"

namespace avsim {

std::vector<std::uint64_t> evaluation_seeds(int n, std::uint64_t base) {
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < n; ++i) seeds.push_back(base + static_cast<std::uint64_t>(i));
  return seeds;
}

double StageCounts::percent(std::size_t stage) const {
  if (rollouts == 0) return 0.0;
  return 100.0 * successes.at(stage) / rollouts;
}

bool StageCounts::better_than(const StageCounts& other) const {
  for (std::size_t i = successes.size(); i-- > 0;) {
    const double a = percent(i);
    const double b = other.percent(i);
    if (a != b) return a > b;
  }
  return false;
}

StageCounts evaluate(const Policy& policy, const TaskSpec& task, const Rig& rig,
                     const std::vector<std::uint64_t>& seeds, const ExecuteOptions& options,
                     int threads, std::vector<Rollout>* rollouts) {
  std::vector<Rollout> results(seeds.size());
  std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads)
                                    : std::max(1U, std::thread::hardware_concurrency());
  workers = std::min(workers, std::max<std::size_t>(seeds.size(), 1));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      results[i] = execute_with_ensemble(policy, task, rig, seeds[i], options);
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }

  StageCounts c;
  c.stage_names = task.stage_names();
  c.successes.assign(task.stages.size(), 0);
  for (const auto& r : results) {
    ++c.rollouts;
    if (r.aborted) ++c.aborted;
    for (std::size_t s = 0; s < task.stages.size(); ++s) {
      if (r.final_state.stage_latched_at[s] >= 0) ++c.successes[s];
    }
  }
  if (rollouts != nullptr) *rollouts = std::move(results);
  return c;
}

namespace {

std::string format_percent(double p) {
  char buf[32];
  if (std::abs(p - std::round(p)) < 1e-9) {
    std::snprintf(buf, sizeof buf, "%.0f", p);
  } else {
    std::snprintf(buf, sizeof buf, "%.1f", p);
  }
  return buf;
}

}  // namespace

nlohmann::json SuccessTable::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json stages = nlohmann::json::object();
    nlohmann::json counts = nlohmann::json::object();
    for (std::size_t s = 0; s < stage_names.size(); ++s) {
      stages[stage_names[s]] = r.counts.percent(s);
      counts[stage_names[s]] = r.counts.successes[s];
    }
    rows_json.push_back({{"configuration", r.label},
                         {"cameras", r.cameras.to_string()},
                         {"policy", r.policy},
                         {"rollouts", r.counts.rollouts},
                         {"aborted", r.counts.aborted},
                         {"variants", r.variants},
                         {"best_variant", r.best_variant},
                         {"success_percent", stages},
                         {"success_count", counts}});
  }
  nlohmann::json j{{"task", task}, {"stages", stage_names}, {"rows", rows_json}};
  if (probe) j["ablation_probe"] = {{"queries", probe->queries}, {"differing_neighbors", probe->differing}};
  return j;
}

std::string SuccessTable::to_text() const {
  std::size_t label_w = 0;
  for (const auto& r : rows) label_w = std::max(label_w, r.label.size());
  std::vector<std::size_t> cell_w(stage_names.size(), 0);
  for (const auto& r : rows) {
    for (std::size_t s = 0; s < stage_names.size(); ++s) {
      cell_w[s] = std::max(cell_w[s], format_percent(r.counts.percent(s)).size());
    }
  }
  std::ostringstream os;
  for (const auto& r : rows) {
    std::string line = r.label;
    line.resize(label_w, ' ');
    for (std::size_t s = 0; s < stage_names.size(); ++s) {
      std::string cell = format_percent(r.counts.percent(s));
      cell.insert(0, cell_w[s] - cell.size(), ' ');
      line += " | " + stage_names[s] + " " + cell;
    }
    os << line << "\n";
  }
  return os.str();
}

std::vector<bool> fold_mask(std::size_t episodes, int k, int variants) {
  if (variants < 1) throw UserError("variant count must be at least 1");
  std::vector<bool> keep(episodes, true);
  if (variants == 1) return keep;
  if (episodes < static_cast<std::size_t>(variants)) {
    throw UserError("need at least as many episodes as variants");
  }
  for (std::size_t e = 0; e < episodes; ++e) {
    keep[e] = static_cast<int>(e % static_cast<std::size_t>(variants)) != k;
  }
  return keep;
}

SuccessTable camera_ablation(const std::vector<std::filesystem::path>& episodes, const TaskSpec& task,
                             const Rig& rig, const AblationOptions& options) {
  if (episodes.empty()) throw UserError("dataset has no episodes");
  if (options.rollouts < 1) throw UserError("rollouts must be at least 1");
  if (options.configurations.empty()) throw UserError("no camera configurations requested");
  CameraSet needed;
  for (CameraSet c : options.configurations) needed = needed | c;
  const EpisodeManifest first = read_manifest(episodes.front());
  if (first.task != task.id) {
    throw UserError("dataset was recorded on " + std::string(to_string(first.task)));
  }
  for (const auto& p : episodes) {
    const EpisodeManifest m = read_manifest(p);
    if (!m.camera_set.contains(needed)) {
      throw UserError(p.filename().string() + " lacks cameras: " + (needed - m.camera_set).to_string());
    }
    if (m.width != first.width || m.height != first.height || m.baseline != first.baseline ||
        m.av_arm_present != first.av_arm_present) {
      throw UserError("dataset episodes use different camera settings");
    }
  }
  fold_mask(episodes.size(), 0, options.variants);

  ExecuteOptions exec = options.execute;
  exec.camera_rig = CameraRig::nominal(first.width, first.baseline);
  exec.include_av_arm = first.av_arm_present;

  const auto full = NnPolicy::train(episodes, {needed, options.chunk_size});
  const auto seeds = evaluation_seeds(options.rollouts);
  const CameraSet without_av = needed - CameraSet::av();
  std::optional<AblationProbe> probe;
  if (options.probe_queries > 0 && needed.contains(CameraSet::av()) && !without_av.empty() &&
      full->episodes() >= 2) {
    probe = neighbor_ablation_probe(*full, *full->derive(without_av), options.probe_queries);
  }

  SuccessTable table;
  table.task = std::string(to_string(task.id));
  table.stage_names = task.stage_names();
  table.probe = probe;
  for (CameraSet config : options.configurations) {
    SuccessRow row;
    row.label = config.label();
    row.cameras = config;
    row.policy = "nn";
    row.variants = options.variants;
    for (int k = 0; k < options.variants; ++k) {
      const auto policy = full->derive(config, fold_mask(episodes.size(), k, options.variants));
      StageCounts c = evaluate(*policy, task, rig, seeds, exec, options.threads);
      if (k == 0 || c.better_than(row.counts)) {
        row.counts = std::move(c);
        row.best_variant = k;
      }
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace avsim
