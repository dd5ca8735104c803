#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "avsim/camera.hpp"
#include "avsim/rig.hpp"
#include "avsim/sim.hpp"
#include "avsim/teleop.hpp"
#include "avsim/transport.hpp"

namespace avsim::net {

inline constexpr std::uint16_t kDefaultPort = 7878;

// AVSIM_PORT when set to a valid port, else `fallback`. Throws UserError on garbage.
std::uint16_t port_from_env(std::uint16_t fallback);

struct ServerConfig {
  std::string host = "127.0.0.1";
  std::uint16_t port = kDefaultPort;  // 0: ephemeral
  TaskId task = TaskId::peg_insertion;
  std::uint64_t seed = 0;
  nlohmann::json task_overrides = nlohmann::json::object();
  int resolution = 96;
  double baseline = 0.063;
  bool include_av_arm = true;
  double tick_hz = 50.0;
  int frame_every = 2;  // FrameMsg for subscribed cameras every n-th tick
  std::chrono::milliseconds park_after{2000};
  std::chrono::milliseconds hello_timeout{5000};
  std::size_t data_queue = 16;     // StateUpdate/FrameMsg slots, drop-oldest
  std::size_t control_queue = 64;  // replies (Pong, Error, acks), drop-oldest
  std::filesystem::path dataset_dir;  // empty: recording is refused
  CameraSet record_cameras = CameraSet::all();
  int max_sessions = 8;
  // Ask for SCHED_FIFO on each session's control loop; falls back silently when not permitted.
  bool realtime = true;
  Rig rig = Rig::nominal();
  TeleopConfig teleop;
};

// Fields present in `j` replace those of `base`; throws UserError on bad values.
ServerConfig merge_server_config(const nlohmann::json& j, ServerConfig base = {});

struct SessionStats {
  std::uint64_t id = 0;
  std::string binding;
  double period_ms = 20.0;
  bool realtime = false;  // SCHED_FIFO granted to the control loop
  std::uint64_t ticks = 0;
  std::uint64_t poses_received = 0;
  std::uint64_t poses_consumed = 0;
  std::uint64_t poses_overwritten = 0;  // replaced in the slot before a tick consumed them
  std::uint64_t state_updates = 0;
  std::uint64_t frame_ticks = 0;  // ticks that rendered the subscribed cameras
  std::uint64_t renders = 0;      // camera images rendered, streaming and recording together
  std::uint64_t frames_queued = 0;
  std::uint64_t frames_dropped = 0;
  std::size_t max_data_queue = 0;
  std::uint64_t park_events = 0;
  std::uint64_t episodes_recorded = 0;
  std::vector<double> tick_lateness_ms;   // wake time minus scheduled release time
  std::vector<double> tick_intervals_ms;  // wake-to-wake
  std::vector<double> tick_work_ms;       // time spent inside a tick
  std::string close_reason;

  double jitter_p99_ms() const;           // p99 of |lateness| (release jitter)
  double interval_jitter_p99_ms() const;  // p99 of |interval - period|
};

class Session;

class Server {
 public:
  explicit Server(ServerConfig config);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Binds and starts accepting. Throws UserError when the port is unavailable.
  void start();
  void stop();
  std::uint16_t port() const { return port_; }
  const ServerConfig& config() const { return config_; }

  std::size_t active_sessions();
  // Stats of sessions that have ended, in end order.
  std::vector<SessionStats> finished_sessions();
  // Snapshots of the sessions still running, in accept order.
  std::vector<SessionStats> live_sessions();

 private:
  void accept_loop();
  void reap(bool all);

  ServerConfig config_;
  std::optional<TcpListener> listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::mutex mutex_;
  std::list<std::shared_ptr<Session>> sessions_;
  std::vector<SessionStats> finished_;
  std::uint64_t next_id_ = 1;
};

}  // namespace avsim::net
