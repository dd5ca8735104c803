#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avsim/camera.hpp"
#include "avsim/rig.hpp"
#include "avsim/sim.hpp"

namespace avsim {

// On-disk layout (little-endian, see docs/episode_format.md):
//   header   16 B   "AVEP", u32 version, u32 manifest capacity, u32 reserved
//   manifest        JSON padded with spaces to the capacity
//   records         fixed width, one per step, each ending in its CRC-32
//   footer   16 B   "AVFT", u32 step count, u32 CRC-32 of all record bytes, u32 reserved
// A file without footer was never finalized and is invalid.
inline constexpr std::uint32_t kEpisodeFormatVersion = 1;
inline constexpr std::uint32_t kManifestCapacity = 8192;
inline constexpr std::size_t kEpisodeHeaderBytes = 16;
inline constexpr std::size_t kEpisodeFooterBytes = 16;
inline constexpr int kRateHz = 50;

struct EpisodeManifest {
  std::uint32_t format_version = kEpisodeFormatVersion;
  TaskId task = TaskId::peg_insertion;
  std::uint64_t seed = 0;
  int rate_hz = kRateHz;
  CameraSet camera_set;
  bool av_arm_present = true;
  std::uint64_t step_count = 0;
  std::array<std::uint32_t, 3> chain_checksums{};
  std::vector<std::string> object_ids;
  int width = 96;
  int height = 96;
  double baseline = 0.063;
  nlohmann::json task_config = nlohmann::json::object();
  std::vector<bool> final_stages;
  nlohmann::json meta = nlohmann::json::object();  // free-form provenance (operator, noise)

  std::size_t frame_bytes() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  std::size_t record_width() const;
  nlohmann::json to_json() const;
  static EpisodeManifest from_json(const nlohmann::json& j);
  bool operator==(const EpisodeManifest&) const = default;
};

struct StepRecord {
  std::uint32_t time_step = 0;
  std::array<float, kRigDof> qpos{};
  std::array<float, kRigDof> action{};
  std::vector<float> object_poses;  // 7 per object: tx ty tz qw qx qy qz
  std::vector<std::vector<std::uint8_t>> frames;  // camera_set order

  bool operator==(const StepRecord&) const = default;
};

struct Episode {
  EpisodeManifest manifest;
  std::vector<StepRecord> steps;

  bool operator==(const Episode&) const = default;
};

std::size_t episode_file_size(const EpisodeManifest& m, std::size_t steps);

StepRecord make_record(const SimState& state, const RigVector& action, std::span<const Frame> frames);
RigVector to_rig_vector(const std::array<float, kRigDof>& v);
std::array<float, kRigDof> to_float(const RigVector& v);

// Byte-exact (de)serialization.
std::vector<std::uint8_t> serialize(const Episode& episode);

enum class LoadMode {
  strict,   // any structural or checksum problem throws
  lenient,  // keeps every intact record up to the first problem; reports instead of throwing
};

struct LoadReport {
  bool finalized = false;       // footer present and consistent
  std::int64_t first_bad_record = -1;  // record whose CRC failed, -1 if none
  std::string problem;          // empty when the file is pristine
};

Episode deserialize(std::span<const std::uint8_t> bytes, LoadMode mode = LoadMode::strict,
                    LoadReport* report = nullptr);

void save_episode(const Episode& episode, const std::filesystem::path& path);
Episode load_episode(const std::filesystem::path& path, LoadMode mode = LoadMode::strict,
                     LoadReport* report = nullptr);
EpisodeManifest read_manifest(const std::filesystem::path& path);

// Visits records one at a time without holding the whole episode (strict checks).
void for_each_record(const std::filesystem::path& path,
                     const std::function<void(const EpisodeManifest&, const StepRecord&)>& visit);

// Streaming writer. The manifest is written up front and rewritten with the
// final step count on finalize(); until then the file has no footer.
class EpisodeWriter {
 public:
  EpisodeWriter(const std::filesystem::path& path, EpisodeManifest manifest);
  ~EpisodeWriter();
  EpisodeWriter(const EpisodeWriter&) = delete;
  EpisodeWriter& operator=(const EpisodeWriter&) = delete;

  void append(const StepRecord& record);
  void finalize(const std::vector<bool>& final_stages);
  std::uint64_t steps() const { return steps_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  EpisodeManifest manifest_;
  std::FILE* file_ = nullptr;
  std::uint64_t steps_ = 0;
  std::uint32_t crc_ = 0;
  bool finalized_ = false;
};

// Same steps, frames restricted to `subset`. Throws UserError unless subset ⊆ camera_set.
Episode slice_cameras(const Episode& episode, CameraSet subset);

struct Divergence {
  std::uint64_t step = 0;
  std::string field;  // "checksum", "qpos", "object", "stages"
  int index = -1;     // joint or object-pose component
  double recorded = 0.0;
  double replayed = 0.0;
  std::string describe() const;
};

struct ReplayReport {
  std::uint64_t steps_checked = 0;
  std::optional<Divergence> first_divergence;
  std::vector<SimState> states;  // filled when requested
  bool consistent() const { return !first_divergence; }
};

// Re-simulates the recorded actions from the recorded seed and compares every
// step's qpos and object poses bitwise (as float32) with the record.
ReplayReport replay(const Episode& episode, const Rig& rig, bool keep_states = false,
                    const LoadReport* load = nullptr);

// Re-renders frames from a deterministic replay. Throws UserError on a chain
// checksum mismatch or when the replay diverges.
Episode rerender(const Episode& episode, const Rig& rig, CameraSet camera_set, bool av_arm_present);

// Simulator task matching an episode's manifest.
TaskSpec task_for(const EpisodeManifest& manifest);

}  // namespace avsim
