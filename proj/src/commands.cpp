#include "avsim/commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <csignal>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "avsim/demonstration.hpp"
#include "avsim/episode.hpp"
#include "avsim/error.hpp"
#include "avsim/evaluate.hpp"
#include "avsim/image_io.hpp"
#include "avsim/nn_policy.hpp"
#include "avsim/policy.hpp"
#include "avsim/server.hpp"

namespace avsim::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// --config FILE: a flat JSON object whose keys are long option names of the
// chosen subcommand ('_' and '-' are interchangeable).
class JsonConfig : public CLI::Config {
 public:
  std::string section;

  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return {}; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    const json j = json::parse(input, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw CLI::ConfigError("config file is not a JSON object");
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      CLI::ConfigItem item;
      if (!section.empty()) item.parents = {section};
      item.name = key;
      std::replace(item.name.begin(), item.name.end(), '_', '-');
      auto scalar = [](const json& v) -> std::string {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
        if (v.is_number() || v.is_null()) return v.dump();
        throw CLI::ConfigError("config values must be scalars or arrays of scalars");
      };
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(value));
      }
      items.push_back(std::move(item));
    }
    return items;
  }
};

void add_config(CLI::App* app) { app->fallthrough(); }

Rig load_rig(const std::string& chains) {
  if (chains.empty()) return Rig::nominal();
  if (!fs::is_directory(chains)) throw UserError("chain directory not found: " + chains);
  return Rig::load(chains);
}

std::string episode_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "episode_%04zu.avep", i);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw UserError("cannot write " + path.string());
  f << text;
  if (!f) throw UserError("cannot write " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw UserError("cannot create directory " + dir.string());
}

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads)
                                    : std::max(1U, std::thread::hardware_concurrency());
  workers = std::min(workers, std::max<std::size_t>(n, 1));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex m;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(m);
        if (!failure) failure = std::current_exception();
        next = n;
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);
}

// ---- record ----

struct RecordArgs {
  std::string task = "peg_insertion";
  int episodes = -1;
  std::string seeds;
  double noise_std = 0.005;
  std::string out;
  std::string cameras = "all";
  int resolution = 96;
  double baseline = 0.063;
  bool no_av_arm = false;
  bool overwrite = false;
  int threads = 0;
  std::string chains;
  std::string task_config;
};

int cmd_record(const RecordArgs& a, std::ostream& out) {
  const TaskId id = task_id_from_string(a.task);
  std::vector<std::uint64_t> seeds;
  if (!a.seeds.empty() && a.episodes >= 0) throw UserError("use either --episodes or --seeds");
  if (!a.seeds.empty()) {
    seeds = parse_seeds(a.seeds);
  } else {
    if (a.episodes < 0) throw UserError("give --episodes N or --seeds");
    for (int i = 0; i < a.episodes; ++i) seeds.push_back(static_cast<std::uint64_t>(i));
  }
  if (a.noise_std < 0.0 || !std::isfinite(a.noise_std)) throw UserError("--noise-std must be >= 0");
  if (a.resolution < 8 || a.resolution > 1024) throw UserError("--resolution must be within 8..1024");
  if (!(a.baseline > 0.0)) throw UserError("--baseline must be positive");
  json overrides = json::object();
  if (!a.task_config.empty()) {
    overrides = json::parse(a.task_config, nullptr, false);
    if (overrides.is_discarded() || !overrides.is_object()) throw UserError("--task-config must be a JSON object");
  }
  const TaskSpec task = make_task(id, overrides);
  const Rig rig = load_rig(a.chains);

  DemoOptions opts;
  opts.op.noise_std = a.noise_std;
  opts.cameras = CameraSet::parse(a.cameras);
  if (opts.cameras.empty()) throw UserError("--cameras selects no camera");
  opts.camera_rig = CameraRig::nominal(a.resolution, a.baseline);
  opts.include_av_arm = !a.no_av_arm;

  const fs::path dir(a.out);
  if (fs::exists(dir) && !fs::is_directory(dir)) throw UserError(a.out + " is not a directory");
  if (fs::is_directory(dir)) {
    const auto existing = dataset_episodes(dir);
    if (!existing.empty() && !a.overwrite) {
      throw UserError(a.out + " already holds episodes; pass --overwrite to replace them");
    }
    for (const auto& p : existing) fs::remove(p);
  }
  ensure_dir(dir);

  std::vector<DemoResult> results(seeds.size());
  parallel_for(seeds.size(), a.threads, [&](std::size_t i) {
    results[i] = record_episode(dir / episode_name(i), task, rig, seeds[i], opts);
  });

  const auto names = task.stage_names();
  std::vector<int> counts(names.size(), 0);
  json eps = json::array();
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const DemoResult& r = results[i];
    json stages = json::object();
    for (std::size_t s = 0; s < names.size(); ++s) {
      const bool ok = r.final_state.stage_latched_at[s] >= 0;
      stages[names[s]] = ok;
      counts[s] += ok ? 1 : 0;
    }
    json e{{"file", episode_name(i)}, {"seed", seeds[i]}, {"steps", r.steps}, {"stages", stages},
           {"vantage_attempts", r.vantage_attempts}};
    if (std::isfinite(r.av_axis_angle)) e["av_axis_angle_deg"] = r.av_axis_angle * 180.0 / M_PI;
    eps.push_back(std::move(e));
  }
  json success = json::object();
  for (std::size_t s = 0; s < names.size(); ++s) success[names[s]] = counts[s];
  const json summary{{"task", a.task},
                     {"episodes", seeds.size()},
                     {"noise_std", a.noise_std},
                     {"cameras", opts.cameras.to_string()},
                     {"resolution", a.resolution},
                     {"baseline", a.baseline},
                     {"av_arm_present", opts.include_av_arm},
                     {"stage_success", success},
                     {"records", eps}};
  write_text(dir / "summary.json", summary.dump(2) + "\n");

  out << "recorded " << seeds.size() << " " << a.task << " episodes to " << dir.string() << "\n";
  for (std::size_t s = 0; s < names.size(); ++s) {
    out << "  " << names[s] << ": " << counts[s] << "/" << seeds.size() << "\n";
  }
  return kExitOk;
}

// ---- eval ----

struct EvalArgs {
  std::string dataset;
  std::string task;
  std::vector<std::string> cameras;
  int rollouts = 50;
  int variants = 1;
  int chunk_size = kDefaultChunkSize;
  int query_period = 25;
  double ensemble_m = 0.1;
  bool no_ensemble = false;
  std::string policy = "nn";
  std::string out;
  int probe_queries = 100;
  int threads = 0;
  std::string chains;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (a.rollouts < 1) throw UserError("--rollouts must be at least 1");
  if (a.chunk_size < 1) throw UserError("--chunk-size must be at least 1");
  if (a.query_period < 1) throw UserError("--query-period must be at least 1");
  if (a.query_period > a.chunk_size) throw UserError("--query-period must not exceed --chunk-size");
  if (!(a.ensemble_m >= 0.0)) throw UserError("--ensemble-m must be >= 0");
  if (a.probe_queries < 0) throw UserError("--probe-queries must be >= 0");
  const Rig rig = load_rig(a.chains);

  ExecuteOptions exec;
  exec.query_period = a.query_period;
  exec.ensemble = !a.no_ensemble;
  exec.m = a.ensemble_m;

  SuccessTable table;
  if (a.policy == "nn") {
    if (a.dataset.empty()) throw UserError("--dataset is required for the nn policy");
    const auto episodes = dataset_episodes(a.dataset);
    if (episodes.empty()) throw UserError("no episode_*.avep files in " + a.dataset);
    const EpisodeManifest first = read_manifest(episodes.front());
    if (!a.task.empty() && task_id_from_string(a.task) != first.task) {
      throw UserError("dataset was recorded on " + std::string(to_string(first.task)) + ", not " + a.task);
    }
    AblationOptions opts;
    if (!a.cameras.empty()) {
      opts.configurations.clear();
      for (const auto& c : a.cameras) opts.configurations.push_back(CameraSet::parse(c));
    }
    opts.rollouts = a.rollouts;
    opts.variants = a.variants;
    opts.chunk_size = a.chunk_size;
    opts.execute = exec;
    opts.threads = a.threads;
    opts.probe_queries = a.probe_queries;
    table = camera_ablation(episodes, task_for(first), rig, opts);
  } else if (a.policy == "oracle" || a.policy == "random") {
    if (a.task.empty()) throw UserError("--task is required for the " + a.policy + " policy");
    const TaskSpec task = make_task(task_id_from_string(a.task));
    std::unique_ptr<Policy> policy;
    if (a.policy == "oracle") {
      exec.query_period = 1;
      exec.ensemble = false;
      policy = std::make_unique<OraclePolicy>();
    } else {
      policy = std::make_unique<RandomPolicy>(a.chunk_size);
    }
    table.task = a.task;
    table.stage_names = task.stage_names();
    SuccessRow row;
    row.label = a.policy == "oracle" ? "Oracle" : "Random";
    row.policy = a.policy;
    row.counts = evaluate(*policy, task, rig, evaluation_seeds(a.rollouts), exec, a.threads);
    table.rows.push_back(std::move(row));
  } else {
    throw UserError("unknown policy: " + a.policy + " (nn, oracle, random)");
  }

  const std::string text = table.to_text();
  out << text;
  if (table.probe) {
    out << "ablation probe: " << table.probe->differing << "/" << table.probe->queries
        << " nearest neighbors change without AV frames\n";
  }
  if (!a.out.empty()) {
    ensure_dir(a.out);
    write_text(fs::path(a.out) / "success_table.json", table.to_json().dump(2) + "\n");
    write_text(fs::path(a.out) / "success_table.txt", text);
  }
  return kExitOk;
}

// ---- serve ----

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

json stats_json(const net::SessionStats& s) {
  return {{"session", s.id},
          {"binding", s.binding},
          {"realtime", s.realtime},
          {"ticks", s.ticks},
          {"jitter_p99_ms", s.jitter_p99_ms()},
          {"interval_jitter_p99_ms", s.interval_jitter_p99_ms()},
          {"poses_received", s.poses_received},
          {"poses_consumed", s.poses_consumed},
          {"poses_overwritten", s.poses_overwritten},
          {"state_updates", s.state_updates},
          {"frames_queued", s.frames_queued},
          {"frames_dropped", s.frames_dropped},
          {"park_events", s.park_events},
          {"episodes_recorded", s.episodes_recorded},
          {"close_reason", s.close_reason}};
}

struct ServeArgs {
  std::string host;
  int port = -1;
  std::string server_config;
  std::string task;
  long long seed = -1;
  std::string out;
  double duration = 0.0;
  int resolution = 0;
  bool no_realtime = false;
  std::string chains;
};

int cmd_serve(const ServeArgs& a, std::ostream& out) {
  net::ServerConfig cfg;
  if (!a.server_config.empty()) {
    std::ifstream f(a.server_config);
    if (!f) throw UserError("cannot read " + a.server_config);
    const json j = json::parse(f, nullptr, false);
    if (j.is_discarded()) throw UserError(a.server_config + " is not valid JSON");
    cfg = net::merge_server_config(j, cfg);
  }
  cfg.port = net::port_from_env(cfg.port);
  if (a.port >= 0) {
    if (a.port > 65535) throw UserError("--port must be within 0..65535");
    cfg.port = static_cast<std::uint16_t>(a.port);
  }
  if (!a.host.empty()) cfg.host = a.host;
  if (!a.task.empty()) cfg.task = task_id_from_string(a.task);
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  if (!a.out.empty()) cfg.dataset_dir = a.out;
  if (a.resolution != 0) {
    if (a.resolution < 8 || a.resolution > 1024) throw UserError("--resolution must be within 8..1024");
    cfg.resolution = a.resolution;
  }
  if (a.no_realtime) cfg.realtime = false;
  if (!a.chains.empty()) cfg.rig = load_rig(a.chains);
  if (a.duration < 0.0) throw UserError("--duration must be >= 0");
  if (!cfg.dataset_dir.empty()) ensure_dir(cfg.dataset_dir);

  net::Server server(cfg);
  server.start();
  out << "listening on " << cfg.host << ":" << server.port() << std::endl;

  g_stop = false;
  auto prev_int = std::signal(SIGINT, on_signal);
  auto prev_term = std::signal(SIGTERM, on_signal);
  const auto start = std::chrono::steady_clock::now();
  while (!g_stop) {
    if (a.duration > 0.0 &&
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() >= a.duration) {
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  std::signal(SIGINT, prev_int);
  std::signal(SIGTERM, prev_term);
  server.stop();
  for (const auto& s : server.finished_sessions()) out << stats_json(s).dump() << "\n";
  return kExitOk;
}

// ---- replay ----

int cmd_replay(const std::vector<std::string>& inputs, const std::string& chains, std::ostream& out,
               std::ostream& err) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      const auto eps = dataset_episodes(in);
      if (eps.empty()) throw UserError("no episode_*.avep files in " + in);
      files.insert(files.end(), eps.begin(), eps.end());
    } else if (fs::exists(in)) {
      files.emplace_back(in);
    } else {
      throw UserError("no such file: " + in);
    }
  }
  const Rig rig = load_rig(chains);
  int bad = 0;
  for (const auto& path : files) {
    const std::string name = path.string();
    LoadReport load;
    Episode ep;
    try {
      ep = load_episode(path, LoadMode::lenient, &load);
    } catch (const UserError& e) {
      err << name << ": " << e.what() << "\n";
      ++bad;
      continue;
    }
    if (!load.problem.empty()) err << name << ": " << load.problem << "\n";
    ReplayReport rep;
    try {
      rep = replay(ep, rig, false, &load);
    } catch (const UserError& e) {
      err << name << ": " << e.what() << "\n";
      ++bad;
      continue;
    }
    if (rep.first_divergence) {
      err << name << ": " << rep.first_divergence->describe() << "\n";
      ++bad;
    } else if (!load.finalized) {
      err << name << ": episode is not finalized\n";
      ++bad;
    } else {
      out << name << ": ok, " << rep.steps_checked << " steps reproduce exactly\n";
    }
  }
  return bad == 0 ? kExitOk : kExitUser;
}

// ---- render-export ----

struct RenderArgs {
  std::string episode;
  std::string task;
  long long seed = 0;
  std::string camera;
  long long step = 0;
  std::string out;
  int resolution = 96;
  bool hide_av_arm = false;
  std::string chains;
};

int cmd_render(const RenderArgs& a, std::ostream& out) {
  const auto cam = camera_id_from_string(a.camera);
  if (!cam) throw UserError("unknown camera: " + a.camera);
  if (a.step < 0) throw UserError("--step must be >= 0");
  if (a.episode.empty() == a.task.empty()) throw UserError("give either --episode or --task");
  const fs::path path = a.out.empty() ? fs::path(a.camera + "_" + std::to_string(a.step) + ".png") : fs::path(a.out);
  const auto ext = path.extension().string();
  if (ext != ".png" && ext != ".pgm") throw UserError("--out must end in .png or .pgm");

  Frame frame;
  if (!a.episode.empty()) {
    const Episode ep = load_episode(a.episode);
    const int idx = ep.manifest.camera_set.index_of(*cam);
    if (idx < 0) throw UserError("episode does not contain camera " + a.camera);
    if (static_cast<std::size_t>(a.step) >= ep.steps.size()) {
      throw UserError("--step beyond the episode's " + std::to_string(ep.steps.size()) + " steps");
    }
    frame.camera = *cam;
    frame.time_step = static_cast<std::uint64_t>(a.step);
    frame.width = ep.manifest.width;
    frame.height = ep.manifest.height;
    frame.pixels = ep.steps[static_cast<std::size_t>(a.step)].frames[static_cast<std::size_t>(idx)];
  } else {
    if (a.seed < 0) throw UserError("--seed must be >= 0");
    if (a.resolution < 8 || a.resolution > 1024) throw UserError("--resolution must be within 8..1024");
    const TaskSpec task = make_task(task_id_from_string(a.task));
    const Rig rig = load_rig(a.chains);
    SimState s = reset(task, rig, static_cast<std::uint64_t>(a.seed));
    for (long long k = 0; k < a.step; ++k) s = step(s, s.q, task, rig);
    frame = render_camera(s, rig, CameraRig::nominal(a.resolution), *cam, !a.hide_av_arm);
  }
  write_image(frame, path);
  out << "wrote " << path.string() << " (" << frame.width << "x" << frame.height << ")\n";
  return kExitOk;
}

// ---- slice / rerender / export-chains ----

int cmd_slice(const std::string& in, const std::string& cameras, const std::string& outp, std::ostream& out) {
  const CameraSet subset = CameraSet::parse(cameras);
  if (subset.empty()) throw UserError("--cameras selects no camera");
  if (fs::is_directory(in)) {
    const auto eps = dataset_episodes(in);
    if (eps.empty()) throw UserError("no episode_*.avep files in " + in);
    for (const auto& p : eps) {
      const auto m = read_manifest(p);
      if (!m.camera_set.contains(subset)) {
        throw UserError(p.filename().string() + " does not contain cameras: " + (subset - m.camera_set).to_string());
      }
    }
    ensure_dir(outp);
    for (const auto& p : eps) save_episode(slice_cameras(load_episode(p), subset), fs::path(outp) / p.filename());
    out << "sliced " << eps.size() << " episodes to " << subset.to_string() << "\n";
  } else {
    save_episode(slice_cameras(load_episode(in), subset), outp);
    out << "wrote " << outp << " with cameras " << subset.to_string() << "\n";
  }
  return kExitOk;
}

int cmd_rerender(const std::string& in, const std::string& cameras, bool hide_av_arm, const std::string& outp,
                 const std::string& chains, std::ostream& out) {
  const Episode ep = load_episode(in);
  const CameraSet set = cameras.empty() ? ep.manifest.camera_set : CameraSet::parse(cameras);
  if (set.empty()) throw UserError("--cameras selects no camera");
  const Episode re = rerender(ep, load_rig(chains), set, hide_av_arm ? false : ep.manifest.av_arm_present);
  save_episode(re, outp);
  out << "wrote " << outp << " (" << re.steps.size() << " steps, cameras " << set.to_string()
      << (re.manifest.av_arm_present ? "" : ", AV arm hidden") << ")\n";
  return kExitOk;
}

int cmd_export_chains(const std::string& dir, std::ostream& out) {
  ensure_dir(dir);
  Rig::nominal().save(dir);
  out << "wrote left.json, right.json, av.json to " << dir << "\n";
  return kExitOk;
}

}  // namespace

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string part;
  auto number = [&](const std::string& s) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos || s.size() > 18) {
      throw UserError("bad seed list: " + text);
    }
    return static_cast<std::uint64_t>(std::stoull(s));
  };
  while (std::getline(ss, part, ',')) {
    part.erase(std::remove_if(part.begin(), part.end(), ::isspace), part.end());
    const auto dash = part.find('-');
    if (dash == std::string::npos) {
      seeds.push_back(number(part));
      continue;
    }
    const std::uint64_t lo = number(part.substr(0, dash));
    const std::uint64_t hi = number(part.substr(dash + 1));
    if (hi < lo || hi - lo >= 100000) throw UserError("bad seed range: " + part);
    for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
  }
  if (seeds.empty()) throw UserError("empty seed list");
  auto sorted = seeds;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw UserError("duplicate seed in " + text);
  return seeds;
}

std::vector<fs::path> dataset_episodes(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) throw UserError("dataset directory not found: " + dir.string());
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && name.starts_with("episode_") && e.path().extension() == ".avep") {
      out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Simulated bimanual teleoperation rig with an active-vision arm"};
  app.name("avsim");
  app.require_subcommand(1);
  auto config = std::make_shared<JsonConfig>();
  app.set_config("--config", "", "JSON file with option values of the subcommand (flags win)");
  app.config_formatter(config);
  app.allow_config_extras(CLI::config_extras_mode::error);
  for (int i = 1; i < argc; ++i) {
    if (argv[i][0] != '-') {
      config->section = argv[i];
      break;
    }
  }

  RecordArgs rec;
  auto* record = app.add_subcommand("record", "Record scripted demonstrations into a dataset directory");
  record->add_option("--task", rec.task, "peg_insertion, slot_insertion or thread_needle")->capture_default_str();
  record->add_option("--episodes", rec.episodes, "Number of episodes (seeds 0..N-1)");
  record->add_option("--seeds", rec.seeds, "Seed list, e.g. 0,4,10-19");
  record->add_option("--noise-std", rec.noise_std, "Operator noise in meters")->capture_default_str();
  record->add_option("--out", rec.out, "Dataset directory")->required();
  record->add_option("--cameras", rec.cameras, "Cameras to record (ids or av, static, wrist)")->capture_default_str();
  record->add_option("--resolution", rec.resolution, "Square frame size in pixels")->capture_default_str();
  record->add_option("--baseline", rec.baseline, "AV stereo baseline in meters")->capture_default_str();
  record->add_flag("--no-av-arm", rec.no_av_arm, "Hide the AV arm in rendered frames");
  record->add_flag("--overwrite", rec.overwrite, "Replace episodes already in --out");
  record->add_option("--threads", rec.threads, "Worker threads (0: all cores)");
  record->add_option("--chains", rec.chains, "Directory with left.json, right.json, av.json");
  record->add_option("--task-config", rec.task_config, "JSON object merged into the task config");
  add_config(record);

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Train the NN baseline and report a camera ablation table");
  eval->add_option("--dataset", ev.dataset, "Dataset directory");
  eval->add_option("--task", ev.task, "Task (must match the dataset)");
  eval->add_option("--cameras", ev.cameras, "Camera configuration; repeat for several rows")->take_all();
  eval->add_option("--rollouts", ev.rollouts, "Rollouts per configuration")->capture_default_str();
  eval->add_option("--variants", ev.variants, "Leave-one-fold-out training variants")->capture_default_str();
  eval->add_option("--chunk-size", ev.chunk_size, "Action chunk length")->capture_default_str();
  eval->add_option("--query-period", ev.query_period, "Steps between policy queries")->capture_default_str();
  eval->add_option("--ensemble-m", ev.ensemble_m, "Temporal ensemble decay")->capture_default_str();
  eval->add_flag("--no-ensemble", ev.no_ensemble, "Execute chunks open loop");
  eval->add_option("--policy", ev.policy, "nn, oracle or random")->capture_default_str();
  eval->add_option("--out", ev.out, "Directory for success_table.json and .txt");
  eval->add_option("--probe-queries", ev.probe_queries, "Neighbor ablation probe size (0: off)")->capture_default_str();
  eval->add_option("--threads", ev.threads, "Worker threads (0: all cores)");
  eval->add_option("--chains", ev.chains, "Directory with left.json, right.json, av.json");
  add_config(eval);

  ServeArgs sv;
  auto* serve = app.add_subcommand("serve", "Run the teleoperation server");
  serve->add_option("--host", sv.host, "Bind address (default 127.0.0.1)");
  serve->add_option("--port", sv.port, "TCP port (default AVSIM_PORT or 7878; 0: ephemeral)");
  serve->add_option("--server-config", sv.server_config, "JSON server configuration");
  serve->add_option("--task", sv.task, "Task of new sessions");
  serve->add_option("--seed", sv.seed, "Scene seed of new sessions");
  serve->add_option("--out", sv.out, "Dataset directory for recorded episodes");
  serve->add_option("--duration", sv.duration, "Stop after this many seconds (0: until signalled)");
  serve->add_option("--resolution", sv.resolution, "Square frame size in pixels");
  serve->add_flag("--no-realtime", sv.no_realtime, "Do not request SCHED_FIFO for control loops");
  serve->add_option("--chains", sv.chains, "Directory with left.json, right.json, av.json");
  add_config(serve);

  std::vector<std::string> replay_inputs;
  std::string replay_chains;
  auto* rp = app.add_subcommand("replay", "Re-simulate episodes and check they reproduce exactly");
  rp->add_option("episodes", replay_inputs, "Episode files or dataset directories")->required();
  rp->add_option("--chains", replay_chains, "Directory with left.json, right.json, av.json");

  RenderArgs rn;
  auto* render_cmd = app.add_subcommand("render-export", "Write one camera frame as PNG or PGM");
  render_cmd->add_option("--episode", rn.episode, "Episode file to read the frame from");
  render_cmd->add_option("--task", rn.task, "Render a live scene of this task instead");
  render_cmd->add_option("--seed", rn.seed, "Scene seed for --task")->capture_default_str();
  render_cmd->add_option("--camera", rn.camera, "Camera id")->required();
  render_cmd->add_option("--step", rn.step, "Time step")->capture_default_str();
  render_cmd->add_option("--out", rn.out, "Output .png or .pgm");
  render_cmd->add_option("--resolution", rn.resolution, "Square frame size for --task")->capture_default_str();
  render_cmd->add_flag("--no-av-arm", rn.hide_av_arm, "Hide the AV arm (--task only)");
  render_cmd->add_option("--chains", rn.chains, "Directory with left.json, right.json, av.json");

  std::string slice_in, slice_cams, slice_out;
  auto* slice = app.add_subcommand("slice", "Keep a subset of an episode's cameras");
  slice->add_option("--episode", slice_in, "Episode file or dataset directory")->required();
  slice->add_option("--cameras", slice_cams, "Cameras to keep")->required();
  slice->add_option("--out", slice_out, "Output file (or directory for a dataset)")->required();

  std::string rr_in, rr_cams, rr_out, rr_chains;
  bool rr_hide = false;
  auto* rr = app.add_subcommand("rerender", "Replay an episode and render its frames again");
  rr->add_option("--episode", rr_in, "Episode file")->required();
  rr->add_option("--cameras", rr_cams, "Cameras to render (default: the episode's)");
  rr->add_flag("--no-av-arm", rr_hide, "Hide the AV arm in the new frames");
  rr->add_option("--out", rr_out, "Output episode file")->required();
  rr->add_option("--chains", rr_chains, "Directory with left.json, right.json, av.json");

  std::string chains_out;
  auto* ex = app.add_subcommand("export-chains", "Write the nominal chain descriptions as JSON");
  ex->add_option("--out", chains_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << e.what() << "\n";
      return kExitOk;
    }
    std::string what = e.what();
    const std::string extras = "INI was not able to parse ";
    if (what.starts_with(extras)) what = "unknown config key: " + what.substr(extras.size());
    err << "error: " << what << "\n";
    for (const auto* sub : app.get_subcommands()) {
      err << "run 'avsim " << sub->get_name() << " --help' for usage\n";
      return kExitUser;
    }
    err << "run 'avsim --help' for usage\n";
    return kExitUser;
  }

  try {
    if (record->parsed()) return cmd_record(rec, out);
    if (eval->parsed()) return cmd_eval(ev, out);
    if (serve->parsed()) return cmd_serve(sv, out);
    if (rp->parsed()) return cmd_replay(replay_inputs, replay_chains, out, err);
    if (render_cmd->parsed()) return cmd_render(rn, out);
    if (slice->parsed()) return cmd_slice(slice_in, slice_cams, slice_out, out);
    if (rr->parsed()) return cmd_rerender(rr_in, rr_cams, rr_hide, rr_out, rr_chains, out);
    if (ex->parsed()) return cmd_export_chains(chains_out, out);
  } catch (const UserError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUser;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUser;
}

}  // namespace avsim::cli
