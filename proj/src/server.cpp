#include "avsim/server.hpp"

#include <pthread.h>
#include <sched.h>

#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <deque>

#include "avsim/demonstration.hpp"
#include "avsim/episode.hpp"
#include "avsim/error.hpp"
#include "avsim/stats.hpp"

namespace avsim::net {

using Clock = std::chrono::steady_clock;
using std::chrono::milliseconds;

std::uint16_t port_from_env(std::uint16_t fallback) {
  const char* v = std::getenv("AVSIM_PORT");
  if (v == nullptr || *v == '\0') return fallback;
  char* end = nullptr;
  const long p = std::strtol(v, &end, 10);
  if (*end != '\0' || p < 0 || p > 65535) throw UserError(std::string("AVSIM_PORT is not a port: ") + v);
  return static_cast<std::uint16_t>(p);
}

ServerConfig merge_server_config(const nlohmann::json& j, ServerConfig c) {
  if (!j.is_object()) throw UserError("server config must be a JSON object");
  try {
    if (j.contains("host")) c.host = j.at("host").get<std::string>();
    if (j.contains("port")) c.port = j.at("port").get<std::uint16_t>();
    if (j.contains("task")) c.task = task_id_from_string(j.at("task").get<std::string>());
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("task_overrides")) c.task_overrides = j.at("task_overrides");
    if (j.contains("resolution")) c.resolution = j.at("resolution").get<int>();
    if (j.contains("baseline")) c.baseline = j.at("baseline").get<double>();
    if (j.contains("include_av_arm")) c.include_av_arm = j.at("include_av_arm").get<bool>();
    if (j.contains("tick_hz")) c.tick_hz = j.at("tick_hz").get<double>();
    if (j.contains("frame_every")) c.frame_every = j.at("frame_every").get<int>();
    if (j.contains("park_after_ms")) c.park_after = milliseconds(j.at("park_after_ms").get<int>());
    if (j.contains("data_queue")) c.data_queue = j.at("data_queue").get<std::size_t>();
    if (j.contains("dataset_dir")) c.dataset_dir = j.at("dataset_dir").get<std::string>();
    if (j.contains("record_cameras")) c.record_cameras = CameraSet::parse(j.at("record_cameras").get<std::string>());
    if (j.contains("max_sessions")) c.max_sessions = j.at("max_sessions").get<int>();
    if (j.contains("realtime")) c.realtime = j.at("realtime").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw UserError(std::string("server config: ") + e.what());
  }
  if (c.resolution < 8 || c.resolution > 1024) throw UserError("resolution must be in [8, 1024]");
  if (c.tick_hz <= 0.0) throw UserError("tick rate must be positive");
  if (c.frame_every < 1) throw UserError("frame_every must be at least 1");
  if (c.data_queue < 1) throw UserError("data_queue must be at least 1");
  return c;
}

double SessionStats::jitter_p99_ms() const {
  std::vector<double> dev;
  dev.reserve(tick_lateness_ms.size());
  for (double v : tick_lateness_ms) dev.push_back(std::abs(v));
  return percentile(std::move(dev), 99.0);
}

double SessionStats::interval_jitter_p99_ms() const {
  if (tick_intervals_ms.empty()) return 0.0;
  std::vector<double> dev;
  dev.reserve(tick_intervals_ms.size());
  for (double v : tick_intervals_ms) dev.push_back(std::abs(v - period_ms));
  return percentile(std::move(dev), 99.0);
}

namespace {

std::mutex g_dataset_mutex;

class Outbox {
 public:
  Outbox(std::size_t control_cap, std::size_t data_cap) : control_cap_(control_cap), data_cap_(data_cap) {}

  void push_control(wire::Message m) {
    {
      std::lock_guard lock(mutex_);
      if (control_.size() >= control_cap_) control_.pop_front();
      control_.push_back(std::move(m));
    }
    cv_.notify_one();
  }

  // Returns the kind of message dropped to make room, if any.
  std::optional<wire::MsgType> push_data(wire::Message m, std::size_t* depth) {
    std::optional<wire::MsgType> dropped;
    {
      std::lock_guard lock(mutex_);
      if (data_.size() >= data_cap_) {
        dropped = wire::type_of(data_.front());
        data_.pop_front();
      }
      data_.push_back(std::move(m));
      *depth = data_.size();
    }
    cv_.notify_one();
    return dropped;
  }

  // Control first. Empty once closed and (when flushing) drained.
  std::optional<wire::Message> pop() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return closed_ || !control_.empty() || !data_.empty(); });
    if (!control_.empty()) {
      auto m = std::move(control_.front());
      control_.pop_front();
      return m;
    }
    if (closed_) return std::nullopt;
    auto m = std::move(data_.front());
    data_.pop_front();
    return m;
  }

  void close() {
    {
      std::lock_guard lock(mutex_);
      closed_ = true;
    }
    cv_.notify_all();
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<wire::Message> control_;
  std::deque<wire::Message> data_;
  std::size_t control_cap_;
  std::size_t data_cap_;
  bool closed_ = false;
};

double ms_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

}  // namespace

class Session {
 public:
  Session(std::uint64_t id, std::unique_ptr<Channel> channel, const ServerConfig& config)
      : id_(id), channel_(std::move(channel)), config_(config), outbox_(config.control_queue, config.data_queue) {
    stats_.id = id;
    stats_.binding = channel_->binding();
    stats_.period_ms = 1000.0 / config.tick_hz;
    last_rx_ns_ = Clock::now().time_since_epoch().count();
  }

  void run() {
    alive_ = 1;
    reader_ = std::thread([this] { reader(); });
  }

  void stop(const std::string& reason) {
    bool expected = false;
    if (stopping_.compare_exchange_strong(expected, true)) {
      std::lock_guard lock(stats_mutex_);
      stats_.close_reason = reason;
    }
    outbox_.close();
  }

  bool finished() const { return alive_.load() == 0; }

  void join() {
    if (reader_.joinable()) reader_.join();
    if (loop_.joinable()) loop_.join();
    if (writer_.joinable()) writer_.join();
  }

  SessionStats stats() {
    std::lock_guard lock(stats_mutex_);
    return stats_;
  }
  std::uint64_t id() const { return id_; }

 private:
  void fatal(const std::string& code, const std::string& text) {
    outbox_.push_control(wire::Error{code, text});
    stop(code + ": " + text);
  }

  void reader();
  bool handshake();
  void loop();
  void writer();
  void handle_record(const wire::RecordControl& rc, TaskSpec& task, SimState& state, bool& anchored,
                     bool& anchor_pending, std::unique_ptr<EpisodeWriter>& recorder, std::uint64_t& seed,
                     const CameraRig& cams);

  std::uint64_t id_;
  std::unique_ptr<Channel> channel_;
  const ServerConfig& config_;
  Outbox outbox_;
  std::thread reader_;
  std::thread loop_;
  std::thread writer_;
  std::atomic<int> alive_{0};
  std::atomic<bool> stopping_{false};
  std::atomic<std::int64_t> last_rx_ns_{0};

  wire::Hello hello_;
  TaskId task_id_ = TaskId::peg_insertion;
  std::uint64_t seed_ = 0;

  std::mutex inbox_mutex_;
  std::optional<wire::PoseUpdate> pose_slot_;
  std::deque<wire::Message> controls_;

  std::mutex stats_mutex_;
  SessionStats stats_;
};

bool Session::handshake() {
  const Received r = channel_->receive(config_.hello_timeout);
  if (r.status != Received::Status::message) {
    if (r.status == Received::Status::error) {
      channel_->send(wire::Error{"protocol", r.error});
    }
    stop("no hello");
    return false;
  }
  const auto* hello = std::get_if<wire::Hello>(&*r.message);
  if (hello == nullptr) {
    channel_->send(wire::Error{"protocol", "first message must be Hello"});
    stop("no hello");
    return false;
  }
  if (hello->protocol_version != wire::kProtocolVersion) {
    channel_->send(wire::Error{"version", "server speaks protocol version " + std::to_string(wire::kProtocolVersion) +
                                              ", client sent " + std::to_string(hello->protocol_version)});
    stop("version mismatch");
    return false;
  }
  if (hello->role != "operator" && hello->role != "observer") {
    channel_->send(wire::Error{"protocol", "role must be operator or observer"});
    stop("bad role");
    return false;
  }
  task_id_ = config_.task;
  if (hello->task) {
    try {
      task_id_ = task_id_from_string(*hello->task);
    } catch (const UserError& e) {
      channel_->send(wire::Error{"protocol", e.what()});
      stop("bad task");
      return false;
    }
  }
  seed_ = hello->seed.value_or(config_.seed);
  hello_ = *hello;
  wire::Hello reply;
  reply.cameras = hello->cameras;
  reply.role = "server";
  reply.task = std::string(to_string(task_id_));
  reply.seed = seed_;
  channel_->send(reply);
  return true;
}

void Session::reader() {
  if (!handshake()) {
    channel_->close();
    alive_ = 0;
    return;
  }
  alive_ = 3;
  writer_ = std::thread([this] { writer(); });
  loop_ = std::thread([this] { loop(); });

  std::array<std::int64_t, 3> last_ts{std::numeric_limits<std::int64_t>::min(), std::numeric_limits<std::int64_t>::min(),
                                      std::numeric_limits<std::int64_t>::min()};
  const bool observer = hello_.role == "observer";
  while (!stopping_) {
    Received r = channel_->receive(milliseconds(100));
    if (r.status == Received::Status::timeout) continue;
    if (r.status == Received::Status::closed) {
      stop("client closed");
      break;
    }
    if (r.status == Received::Status::error) {
      fatal("protocol", r.error);
      break;
    }
    last_rx_ns_ = Clock::now().time_since_epoch().count();
    wire::Message& m = *r.message;
    if (const auto* ping = std::get_if<wire::Ping>(&m)) {
      outbox_.push_control(wire::Pong{ping->seq, ping->sent_us});
    } else if (auto* pose = std::get_if<wire::PoseUpdate>(&m)) {
      if (observer) {
        outbox_.push_control(wire::Error{"state", "observers cannot send poses"});
        continue;
      }
      bool ok = true;
      for (std::size_t d = 0; d < 3 && ok; ++d) {
        const auto& s = pose->devices[d];
        if (s.timestamp_us <= last_ts[d]) {
          fatal("protocol", "pose timestamps must strictly increase per device");
          ok = false;
          break;
        }
        const double n = std::sqrt(double(s.pose[3]) * s.pose[3] + double(s.pose[4]) * s.pose[4] +
                                   double(s.pose[5]) * s.pose[5] + double(s.pose[6]) * s.pose[6]);
        if (std::abs(n - 1.0) > 1e-3) {
          fatal("protocol", "pose quaternion is not unit length");
          ok = false;
        }
      }
      if (!ok) break;
      for (std::size_t d = 0; d < 3; ++d) last_ts[d] = pose->devices[d].timestamp_us;
      std::lock_guard lock(inbox_mutex_);
      {
        std::lock_guard s(stats_mutex_);
        ++stats_.poses_received;
        if (pose_slot_) ++stats_.poses_overwritten;
      }
      pose_slot_ = std::move(*pose);
    } else if (std::holds_alternative<wire::AnchorRequest>(m) || std::holds_alternative<wire::ReAnchor>(m) ||
               std::holds_alternative<wire::RecordControl>(m)) {
      if (observer) {
        outbox_.push_control(wire::Error{"state", "observers cannot control the session"});
        continue;
      }
      std::lock_guard lock(inbox_mutex_);
      if (controls_.size() >= 32) {
        fatal("protocol", "too many pending control messages");
        break;
      }
      controls_.push_back(std::move(m));
    } else if (std::holds_alternative<wire::Error>(m)) {
      stop("client error: " + std::get<wire::Error>(m).text);
      break;
    } else if (std::holds_alternative<wire::Pong>(m)) {
      // unsolicited pong: ignored
    } else {
      fatal("protocol", std::string(wire::to_string(wire::type_of(m))) + " is not accepted from clients");
      break;
    }
  }
  --alive_;
}

void Session::writer() {
  while (auto m = outbox_.pop()) {
    if (!channel_->send(*m)) {
      stop("send failed");
      break;
    }
  }
  channel_->close();
  --alive_;
}

void Session::handle_record(const wire::RecordControl& rc, TaskSpec& task, SimState& state, bool& anchored,
                            bool& anchor_pending, std::unique_ptr<EpisodeWriter>& recorder, std::uint64_t& seed,
                            const CameraRig& cams) {
  if (rc.action == "start") {
    if (recorder) {
      outbox_.push_control(wire::Error{"record", "already recording; stop the current episode first"});
      return;
    }
    if (config_.dataset_dir.empty()) {
      outbox_.push_control(wire::Error{"record", "server has no dataset directory"});
      return;
    }
    TaskId id = task.id;
    try {
      if (rc.task) id = task_id_from_string(*rc.task);
    } catch (const UserError& e) {
      outbox_.push_control(wire::Error{"record", e.what()});
      return;
    }
    seed = rc.seed.value_or(seed);
    task = make_task(id, config_.task_overrides);
    state = reset(task, config_.rig, seed);
    anchored = false;
    anchor_pending = true;
    DemoOptions opts;
    opts.cameras = config_.record_cameras;
    opts.camera_rig = cams;
    opts.include_av_arm = config_.include_av_arm;
    EpisodeManifest m = make_manifest(task, config_.rig, seed, opts);
    m.meta = {{"operator", "remote"}, {"session", id_}};
    try {
      std::lock_guard lock(g_dataset_mutex);
      std::filesystem::create_directories(config_.dataset_dir);
      std::filesystem::path path;
      for (int n = 0;; ++n) {
        char name[32];
        std::snprintf(name, sizeof name, "episode_%04d.avep", n);
        path = config_.dataset_dir / name;
        if (!std::filesystem::exists(path)) break;
      }
      recorder = std::make_unique<EpisodeWriter>(path, m);
    } catch (const std::exception& e) {
      outbox_.push_control(wire::Error{"record", e.what()});
      return;
    }
    outbox_.push_control(wire::RecordControl{"started", std::string(to_string(task.id)), seed, std::nullopt});
  } else if (rc.action == "stop") {
    if (!recorder) {
      outbox_.push_control(wire::Error{"record", "not recording"});
      return;
    }
    const std::string name = recorder->path().filename().string();
    try {
      recorder->finalize(state.stage_flags());
    } catch (const std::exception& e) {
      recorder.reset();
      outbox_.push_control(wire::Error{"record", e.what()});
      return;
    }
    recorder.reset();
    {
      std::lock_guard lock(stats_mutex_);
      ++stats_.episodes_recorded;
    }
    outbox_.push_control(wire::RecordControl{"stopped", std::string(to_string(task.id)), seed, name});
  } else {
    outbox_.push_control(wire::Error{"record", "record action must be start or stop"});
  }
}

void Session::loop() {
  if (config_.realtime) {
    sched_param sp{};
    sp.sched_priority = 10;
    const bool granted = pthread_setschedparam(pthread_self(), SCHED_FIFO, &sp) == 0;
    std::lock_guard lock(stats_mutex_);
    stats_.realtime = granted;
  }
  const Rig& rig = config_.rig;
  TaskSpec task = make_task(task_id_, config_.task_overrides);
  std::uint64_t seed = seed_;
  SimState state = reset(task, rig, seed);
  TeleopPipeline teleop(rig, config_.teleop);
  const CameraRig cams = CameraRig::nominal(config_.resolution, config_.baseline);
  const CameraSet subscribed = hello_.cameras;
  std::unique_ptr<EpisodeWriter> recorder;
  std::optional<DeviceFrame> latest;
  RigVector command = state.q;
  bool anchored = false;
  bool anchor_pending = false;
  bool parked = false;

  const auto period = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(1.0 / config_.tick_hz));
  auto next = Clock::now() + period;
  std::optional<Clock::time_point> prev_wake;
  for (std::uint64_t k = 0; !stopping_; ++k) {
    std::this_thread::sleep_until(next);
    const auto wake = Clock::now();

    std::deque<wire::Message> controls;
    std::optional<wire::PoseUpdate> pose;
    {
      std::lock_guard lock(inbox_mutex_);
      controls.swap(controls_);
      pose.swap(pose_slot_);
    }
    for (const auto& m : controls) {
      if (std::holds_alternative<wire::AnchorRequest>(m)) {
        if (recorder) {
          outbox_.push_control(wire::Error{"state", "cannot re-home while recording"});
          continue;
        }
        state = reset(task, rig, seed);
        anchored = false;
        anchor_pending = true;
      } else if (std::holds_alternative<wire::ReAnchor>(m)) {
        anchor_pending = true;
      } else if (const auto* rc = std::get_if<wire::RecordControl>(&m)) {
        handle_record(*rc, task, state, anchored, anchor_pending, recorder, seed, cams);
      }
    }
    const bool consumed = pose.has_value();
    if (pose) latest = pose->to_device_frame();
    if (anchor_pending && latest) {
      teleop.anchor(*latest, state.q);
      anchored = true;
      anchor_pending = false;
      command = state.q;
      pose.reset();
    }
    const bool now_parked = Clock::now().time_since_epoch().count() - last_rx_ns_.load() >
                            std::chrono::duration_cast<std::chrono::nanoseconds>(config_.park_after).count();
    if (now_parked && !parked) {
      std::lock_guard lock(stats_mutex_);
      ++stats_.park_events;
    }
    parked = now_parked;

    RigVector action;
    if (!anchored || parked) {
      action = quantize(state.q);
      command = action;
    } else {
      if (pose) {
        try {
          command = quantize(teleop.update(*latest));
        } catch (const std::exception& e) {
          outbox_.push_control(wire::Error{"internal", e.what()});
        }
      }
      action = command;
    }

    const bool frame_tick = !subscribed.empty() && k % static_cast<std::uint64_t>(config_.frame_every) == 0;
    const CameraSet render_set = (frame_tick ? subscribed : CameraSet()) | (recorder ? config_.record_cameras : CameraSet());
    std::vector<Frame> frames = render_frames(state, rig, cams, render_set, config_.include_av_arm);
    if (recorder) {
      std::vector<Frame> rec;
      for (CameraId id : config_.record_cameras.ids()) rec.push_back(frames[static_cast<std::size_t>(render_set.index_of(id))]);
      try {
        recorder->append(make_record(state, action, rec));
      } catch (const std::exception& e) {
        recorder.reset();
        outbox_.push_control(wire::Error{"record", e.what()});
      }
    }
    state = step(state, action, task, rig);

    wire::StateUpdate su;
    su.time_step = state.time_step;
    su.status = static_cast<std::uint8_t>((anchored ? wire::kStatusAnchored : 0) | (parked ? wire::kStatusParked : 0) |
                                          (recorder ? wire::kStatusRecording : 0));
    su.qpos = to_float(state.q);
    su.stage_flags = state.stage_flags();
    std::size_t depth = 0;
    std::uint64_t frames_dropped = 0;
    std::size_t max_depth = 0;
    outbox_.push_data(std::move(su), &depth);
    max_depth = depth;
    std::uint64_t queued = 0;
    if (frame_tick) {
      for (CameraId id : subscribed.ids()) {
        Frame& f = frames[static_cast<std::size_t>(render_set.index_of(id))];
        wire::FrameMsg fm{id, f.time_step, static_cast<std::uint16_t>(f.width), static_cast<std::uint16_t>(f.height),
                          std::move(f.pixels)};
        if (auto dropped = outbox_.push_data(std::move(fm), &depth); dropped && *dropped == wire::MsgType::frame) {
          ++frames_dropped;
        }
        max_depth = std::max(max_depth, depth);
        ++queued;
      }
    }
    const auto done = Clock::now();
    {
      std::lock_guard lock(stats_mutex_);
      ++stats_.ticks;
      ++stats_.state_updates;
      if (consumed) ++stats_.poses_consumed;
      stats_.frames_queued += queued;
      stats_.renders += frames.size();
      if (frame_tick) ++stats_.frame_ticks;
      stats_.frames_dropped += frames_dropped;
      stats_.max_data_queue = std::max(stats_.max_data_queue, max_depth);
      stats_.tick_lateness_ms.push_back(ms_between(next, wake));
      if (prev_wake) stats_.tick_intervals_ms.push_back(ms_between(*prev_wake, wake));
      stats_.tick_work_ms.push_back(ms_between(wake, done));
    }
    prev_wake = wake;
    next += period;
    if (Clock::now() > next + period) next = Clock::now() + period;
  }
  if (recorder) {
    try {
      recorder->finalize(state.stage_flags());
      std::lock_guard lock(stats_mutex_);
      ++stats_.episodes_recorded;
    } catch (const std::exception&) {
    }
  }
  --alive_;
}

Server::Server(ServerConfig config) : config_(std::move(config)) {}

Server::~Server() { stop(); }

void Server::start() {
  if (running_) return;
  listener_.emplace(config_.host, config_.port);
  port_ = listener_->port();
  running_ = true;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void Server::stop() {
  if (!running_.exchange(false)) return;
  if (acceptor_.joinable()) acceptor_.join();
  listener_.reset();
  {
    std::lock_guard lock(mutex_);
    for (auto& s : sessions_) s->stop("server stopping");
  }
  reap(true);
}

void Server::accept_loop() {
  while (running_) {
    reap(false);
    auto sock = listener_->accept(milliseconds(100));
    if (!sock) continue;
    {
      std::lock_guard lock(mutex_);
      if (sessions_.size() >= static_cast<std::size_t>(config_.max_sessions)) continue;
    }
    auto channel = accept_channel(std::move(*sock), milliseconds(2000));
    if (!channel) continue;
    std::lock_guard lock(mutex_);
    auto session = std::make_shared<Session>(next_id_++, std::move(channel), config_);
    sessions_.push_back(session);
    session->run();
  }
}

void Server::reap(bool all) {
  std::vector<std::shared_ptr<Session>> done;
  {
    std::lock_guard lock(mutex_);
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      if (all || (*it)->finished()) {
        done.push_back(*it);
        it = sessions_.erase(it);
      } else {
        ++it;
      }
    }
  }
  for (auto& s : done) {
    s->join();
    std::lock_guard lock(mutex_);
    finished_.push_back(s->stats());
  }
}

std::size_t Server::active_sessions() {
  std::lock_guard lock(mutex_);
  std::size_t n = 0;
  for (auto& s : sessions_) n += s->finished() ? 0 : 1;
  return n;
}

std::vector<SessionStats> Server::finished_sessions() {
  reap(false);
  std::lock_guard lock(mutex_);
  return finished_;
}

std::vector<SessionStats> Server::live_sessions() {
  std::lock_guard lock(mutex_);
  std::vector<SessionStats> out;
  for (auto& s : sessions_) out.push_back(s->stats());
  return out;
}

}  // namespace avsim::net
