#include "avsim/episode.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "avsim/demonstration.hpp"
#include "avsim/error.hpp"

namespace avsim {

static_assert(std::endian::native == std::endian::little, "episode files assume a little-endian host");

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'A', 'V', 'E', 'P'};
constexpr char kFooterMagic[4] = {'A', 'V', 'F', 'T'};

std::uint32_t crc(std::uint32_t running, const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(running, data, static_cast<uInt>(n)));
}

class ByteWriter {
 public:
  explicit ByteWriter(std::vector<std::uint8_t>& out) : out_(out) {}
  template <class T>
  void put(const T& v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }

 private:
  std::vector<std::uint8_t>& out_;
};

template <class T>
T get(const std::uint8_t* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

std::vector<std::uint8_t> encode_header() {
  std::vector<std::uint8_t> out;
  ByteWriter w(out);
  w.bytes(kMagic, 4);
  w.put(kEpisodeFormatVersion);
  w.put(kManifestCapacity);
  w.put(std::uint32_t{0});
  return out;
}

std::vector<std::uint8_t> encode_manifest(const EpisodeManifest& m) {
  const std::string text = m.to_json().dump();
  if (text.size() > kManifestCapacity) {
    throw UserError("episode manifest exceeds " + std::to_string(kManifestCapacity) + " bytes");
  }
  std::vector<std::uint8_t> out(kManifestCapacity, static_cast<std::uint8_t>(' '));
  std::memcpy(out.data(), text.data(), text.size());
  return out;
}

std::vector<std::uint8_t> encode_record(const EpisodeManifest& m, const StepRecord& r) {
  if (r.object_poses.size() != 7 * m.object_ids.size()) {
    throw ContractViolation("record object count does not match the manifest");
  }
  if (r.frames.size() != static_cast<std::size_t>(m.camera_set.size())) {
    throw ContractViolation("record frame count does not match the camera set");
  }
  std::vector<std::uint8_t> out;
  out.reserve(m.record_width());
  ByteWriter w(out);
  w.put(r.time_step);
  w.bytes(r.qpos.data(), sizeof(float) * kRigDof);
  w.bytes(r.action.data(), sizeof(float) * kRigDof);
  w.bytes(r.object_poses.data(), sizeof(float) * r.object_poses.size());
  for (const auto& f : r.frames) {
    if (f.size() != m.frame_bytes()) throw ContractViolation("frame size does not match the manifest");
    w.bytes(f.data(), f.size());
  }
  w.put(crc(0, out.data(), out.size()));
  return out;
}

StepRecord decode_record(const EpisodeManifest& m, const std::uint8_t* p) {
  StepRecord r;
  r.time_step = get<std::uint32_t>(p);
  p += 4;
  std::memcpy(r.qpos.data(), p, sizeof(float) * kRigDof);
  p += sizeof(float) * kRigDof;
  std::memcpy(r.action.data(), p, sizeof(float) * kRigDof);
  p += sizeof(float) * kRigDof;
  r.object_poses.resize(7 * m.object_ids.size());
  std::memcpy(r.object_poses.data(), p, sizeof(float) * r.object_poses.size());
  p += sizeof(float) * r.object_poses.size();
  r.frames.resize(static_cast<std::size_t>(m.camera_set.size()));
  for (auto& f : r.frames) {
    f.assign(p, p + m.frame_bytes());
    p += m.frame_bytes();
  }
  return r;
}

bool record_crc_ok(const EpisodeManifest& m, const std::uint8_t* p) {
  const std::size_t body = m.record_width() - 4;
  return crc(0, p, body) == get<std::uint32_t>(p + body);
}

std::vector<std::uint8_t> encode_footer(std::uint64_t steps, std::uint32_t total_crc) {
  std::vector<std::uint8_t> out;
  ByteWriter w(out);
  w.bytes(kFooterMagic, 4);
  w.put(static_cast<std::uint32_t>(steps));
  w.put(total_crc);
  w.put(std::uint32_t{0});
  return out;
}

EpisodeManifest parse_manifest(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kEpisodeHeaderBytes) throw UserError("episode file truncated: no header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw UserError("not an episode file (bad magic)");
  const auto version = get<std::uint32_t>(bytes.data() + 4);
  if (version != kEpisodeFormatVersion) {
    throw UserError("unsupported episode format version " + std::to_string(version));
  }
  const auto capacity = get<std::uint32_t>(bytes.data() + 8);
  if (capacity != kManifestCapacity) throw UserError("unexpected manifest capacity");
  if (bytes.size() < kEpisodeHeaderBytes + capacity) throw UserError("episode file truncated: manifest");
  const char* text = reinterpret_cast<const char*>(bytes.data() + kEpisodeHeaderBytes);
  std::size_t len = capacity;
  while (len > 0 && text[len - 1] == ' ') --len;
  try {
    return EpisodeManifest::from_json(json::parse(std::string_view(text, len)));
  } catch (const json::exception& e) {
    throw UserError(std::string("episode manifest is malformed: ") + e.what());
  }
}

std::vector<float> object_floats(const std::vector<SceneObject>& objects) {
  std::vector<float> out;
  out.reserve(objects.size() * 7);
  for (const auto& o : objects) {
    const Vec3& t = o.pose.translation();
    const Quat& q = o.pose.rotation();
    for (double v : {t.x(), t.y(), t.z(), q.w(), q.x(), q.y(), q.z()}) {
      out.push_back(static_cast<float>(v));
    }
  }
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> data(size);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(size));
  if (!in) throw UserError("read failed: " + path.string());
  return data;
}

}  // namespace

std::size_t EpisodeManifest::record_width() const {
  return 4 + 2 * sizeof(float) * kRigDof + 7 * sizeof(float) * object_ids.size() +
         static_cast<std::size_t>(camera_set.size()) * frame_bytes() + 4;
}

json EpisodeManifest::to_json() const {
  json cams = json::array();
  for (CameraId id : camera_set.ids()) cams.push_back(std::string(avsim::to_string(id)));
  json stages = json::array();
  for (bool b : final_stages) stages.push_back(b);
  return json{{"format_version", format_version},
              {"task", std::string(avsim::to_string(task))},
              {"seed", seed},
              {"rate_hz", rate_hz},
              {"camera_set", cams},
              {"av_arm_present", av_arm_present},
              {"step_count", step_count},
              {"chain_checksums",
               {{"left", chain_checksums[0]}, {"right", chain_checksums[1]}, {"av", chain_checksums[2]}}},
              {"objects", object_ids},
              {"frame_size", {width, height}},
              {"baseline", baseline},
              {"task_config", task_config},
              {"final_stages", stages},
              {"meta", meta}};
}

EpisodeManifest EpisodeManifest::from_json(const json& j) {
  EpisodeManifest m;
  m.format_version = j.at("format_version").get<std::uint32_t>();
  m.task = task_id_from_string(j.at("task").get<std::string>());
  m.seed = j.at("seed").get<std::uint64_t>();
  m.rate_hz = j.at("rate_hz").get<int>();
  if (m.rate_hz != kRateHz) throw UserError("episode rate must be 50 Hz");
  std::string cams;
  for (const auto& c : j.at("camera_set")) {
    if (!cams.empty()) cams += ",";
    cams += c.get<std::string>();
  }
  m.camera_set = CameraSet::parse(cams);
  m.av_arm_present = j.at("av_arm_present").get<bool>();
  m.step_count = j.at("step_count").get<std::uint64_t>();
  const auto& cs = j.at("chain_checksums");
  m.chain_checksums = {cs.at("left").get<std::uint32_t>(), cs.at("right").get<std::uint32_t>(),
                       cs.at("av").get<std::uint32_t>()};
  m.object_ids = j.at("objects").get<std::vector<std::string>>();
  m.width = j.at("frame_size").at(0).get<int>();
  m.height = j.at("frame_size").at(1).get<int>();
  if (m.width <= 0 || m.height <= 0) throw UserError("episode frame size must be positive");
  m.baseline = j.at("baseline").get<double>();
  m.task_config = j.at("task_config");
  for (const auto& b : j.at("final_stages")) m.final_stages.push_back(b.get<bool>());
  m.meta = j.value("meta", json::object());
  return m;
}

std::size_t episode_file_size(const EpisodeManifest& m, std::size_t steps) {
  return kEpisodeHeaderBytes + kManifestCapacity + steps * m.record_width() + kEpisodeFooterBytes;
}

RigVector to_rig_vector(const std::array<float, kRigDof>& v) {
  RigVector out;
  for (int i = 0; i < kRigDof; ++i) out[i] = static_cast<double>(v[static_cast<std::size_t>(i)]);
  return out;
}

std::array<float, kRigDof> to_float(const RigVector& v) {
  std::array<float, kRigDof> out{};
  for (int i = 0; i < kRigDof; ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(v[i]);
  return out;
}

StepRecord make_record(const SimState& state, const RigVector& action, std::span<const Frame> frames) {
  StepRecord r;
  r.time_step = static_cast<std::uint32_t>(state.time_step);
  r.qpos = to_float(state.q);
  r.action = to_float(action);
  r.object_poses = object_floats(state.objects);
  for (const auto& f : frames) r.frames.push_back(f.pixels);
  return r;
}

std::vector<std::uint8_t> serialize(const Episode& episode) {
  EpisodeManifest m = episode.manifest;
  m.step_count = episode.steps.size();
  std::vector<std::uint8_t> out = encode_header();
  const auto manifest = encode_manifest(m);
  out.insert(out.end(), manifest.begin(), manifest.end());
  std::uint32_t total = 0;
  out.reserve(episode_file_size(m, episode.steps.size()));
  for (const auto& r : episode.steps) {
    const auto rec = encode_record(m, r);
    total = crc(total, rec.data(), rec.size());
    out.insert(out.end(), rec.begin(), rec.end());
  }
  const auto footer = encode_footer(episode.steps.size(), total);
  out.insert(out.end(), footer.begin(), footer.end());
  return out;
}

Episode deserialize(std::span<const std::uint8_t> bytes, LoadMode mode, LoadReport* report) {
  LoadReport local;
  LoadReport& rep = report != nullptr ? *report : local;
  rep = LoadReport{};
  auto fail = [&](const std::string& why) {
    if (mode == LoadMode::strict) throw UserError("invalid episode: " + why);
    if (rep.problem.empty()) rep.problem = why;
  };

  Episode ep;
  ep.manifest = parse_manifest(bytes);
  const EpisodeManifest& m = ep.manifest;
  const std::size_t width = m.record_width();
  const std::size_t start = kEpisodeHeaderBytes + kManifestCapacity;
  const std::size_t body = bytes.size() - start;

  std::size_t n_records = 0;
  bool footer_ok = false;
  std::uint32_t footer_crc = 0;
  if (body >= kEpisodeFooterBytes && (body - kEpisodeFooterBytes) % width == 0 &&
      std::memcmp(bytes.data() + bytes.size() - kEpisodeFooterBytes, kFooterMagic, 4) == 0) {
    n_records = (body - kEpisodeFooterBytes) / width;
    const auto count = get<std::uint32_t>(bytes.data() + bytes.size() - 12);
    footer_crc = get<std::uint32_t>(bytes.data() + bytes.size() - 8);
    if (count != n_records) {
      fail("footer step count disagrees with the file size");
    } else if (m.step_count != n_records) {
      fail("manifest step count disagrees with the footer");
    } else {
      footer_ok = true;
    }
  } else {
    fail("missing finalization footer (recording did not complete)");
    n_records = body / width;
  }

  std::uint32_t total = 0;
  ep.steps.reserve(n_records);
  for (std::size_t i = 0; i < n_records; ++i) {
    const std::uint8_t* p = bytes.data() + start + i * width;
    if (!record_crc_ok(m, p)) {
      if (rep.first_bad_record < 0) rep.first_bad_record = static_cast<std::int64_t>(i);
      fail("record " + std::to_string(i) + " fails its checksum");
      if (mode == LoadMode::lenient) {
        // keep it, so a replay can point at the damaged step
        ep.steps.push_back(decode_record(m, p));
        total = crc(total, p, width);
        continue;
      }
    }
    total = crc(total, p, width);
    ep.steps.push_back(decode_record(m, p));
  }
  if (footer_ok && total != footer_crc) {
    footer_ok = false;
    fail("episode checksum mismatch");
  }
  rep.finalized = footer_ok;
  return ep;
}

void save_episode(const Episode& episode, const std::filesystem::path& path) {
  const auto bytes = serialize(episode);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UserError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw UserError("write failed: " + path.string());
}

Episode load_episode(const std::filesystem::path& path, LoadMode mode, LoadReport* report) {
  const auto bytes = read_file(path);
  return deserialize(bytes, mode, report);
}

EpisodeManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("cannot open " + path.string());
  std::vector<std::uint8_t> head(kEpisodeHeaderBytes + kManifestCapacity);
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  return parse_manifest(head);
}

void for_each_record(const std::filesystem::path& path,
                     const std::function<void(const EpisodeManifest&, const StepRecord&)>& visit) {
  const EpisodeManifest m = read_manifest(path);
  const auto size = std::filesystem::file_size(path);
  if (size != episode_file_size(m, m.step_count)) {
    throw UserError("invalid episode: " + path.string() + " size does not match its manifest");
  }
  std::ifstream in(path, std::ios::binary);
  in.seekg(static_cast<std::streamoff>(kEpisodeHeaderBytes + kManifestCapacity));
  std::vector<std::uint8_t> buf(m.record_width());
  std::uint32_t total = 0;
  for (std::uint64_t i = 0; i < m.step_count; ++i) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw UserError("read failed: " + path.string());
    if (!record_crc_ok(m, buf.data())) {
      throw UserError("invalid episode: record " + std::to_string(i) + " fails its checksum");
    }
    total = crc(total, buf.data(), buf.size());
    visit(m, decode_record(m, buf.data()));
  }
  std::uint8_t footer[kEpisodeFooterBytes];
  in.read(reinterpret_cast<char*>(footer), kEpisodeFooterBytes);
  if (!in || std::memcmp(footer, kFooterMagic, 4) != 0 || get<std::uint32_t>(footer + 8) != total) {
    throw UserError("invalid episode: bad footer in " + path.string());
  }
}

EpisodeWriter::EpisodeWriter(const std::filesystem::path& path, EpisodeManifest manifest)
    : path_(path), manifest_(std::move(manifest)) {
  manifest_.step_count = 0;
  file_ = std::fopen(path.c_str(), "wb");
  if (file_ == nullptr) throw UserError("cannot create " + path.string());
  const auto header = encode_header();
  const auto m = encode_manifest(manifest_);
  if (std::fwrite(header.data(), 1, header.size(), file_) != header.size() ||
      std::fwrite(m.data(), 1, m.size(), file_) != m.size()) {
    throw UserError("write failed: " + path.string());
  }
}

EpisodeWriter::~EpisodeWriter() {
  if (file_ != nullptr) std::fclose(file_);
}

void EpisodeWriter::append(const StepRecord& record) {
  if (finalized_) throw ContractViolation("append after finalize");
  const auto rec = encode_record(manifest_, record);
  if (std::fwrite(rec.data(), 1, rec.size(), file_) != rec.size()) {
    throw UserError("write failed: " + path_.string());
  }
  crc_ = crc(crc_, rec.data(), rec.size());
  ++steps_;
}

void EpisodeWriter::finalize(const std::vector<bool>& final_stages) {
  if (finalized_) throw ContractViolation("episode finalized twice");
  manifest_.step_count = steps_;
  manifest_.final_stages = final_stages;
  const auto footer = encode_footer(steps_, crc_);
  const auto m = encode_manifest(manifest_);
  bool ok = std::fwrite(footer.data(), 1, footer.size(), file_) == footer.size();
  ok = ok && std::fseek(file_, static_cast<long>(kEpisodeHeaderBytes), SEEK_SET) == 0;
  ok = ok && std::fwrite(m.data(), 1, m.size(), file_) == m.size();
  ok = ok && std::fclose(file_) == 0;
  file_ = nullptr;
  if (!ok) throw UserError("could not finalize " + path_.string());
  finalized_ = true;
}

Episode slice_cameras(const Episode& episode, CameraSet subset) {
  const CameraSet have = episode.manifest.camera_set;
  if (!have.contains(subset)) {
    throw UserError("episode does not contain cameras: " + (subset - have).to_string());
  }
  Episode out;
  out.manifest = episode.manifest;
  out.manifest.camera_set = subset;
  const auto ids = subset.ids();
  out.steps.reserve(episode.steps.size());
  for (const auto& r : episode.steps) {
    StepRecord s;
    s.time_step = r.time_step;
    s.qpos = r.qpos;
    s.action = r.action;
    s.object_poses = r.object_poses;
    for (CameraId id : ids) s.frames.push_back(r.frames[static_cast<std::size_t>(have.index_of(id))]);
    out.steps.push_back(std::move(s));
  }
  return out;
}

std::string Divergence::describe() const {
  std::ostringstream os;
  os << "first divergence at step " << step << ": " << field;
  if (field == "checksum") {
    os << " (record is damaged)";
  } else if (field != "stages") {
    os.precision(9);
    os << "[" << index << "] recorded " << recorded << ", replayed " << replayed;
  }
  return os.str();
}

TaskSpec task_for(const EpisodeManifest& manifest) {
  return make_task(manifest.task, manifest.task_config);
}

namespace {

void check_chains(const EpisodeManifest& m, const Rig& rig) {
  if (rig.checksums() != m.chain_checksums) {
    throw UserError("chain descriptions differ from the ones this episode was recorded with");
  }
}

}  // namespace

ReplayReport replay(const Episode& episode, const Rig& rig, bool keep_states, const LoadReport* load) {
  const EpisodeManifest& m = episode.manifest;
  check_chains(m, rig);
  const TaskSpec task = task_for(m);
  ReplayReport rep;
  SimState state = reset(task, rig, m.seed);
  if (state.objects.size() != m.object_ids.size()) {
    rep.first_divergence = Divergence{0, "object", -1, static_cast<double>(m.object_ids.size()),
                                      static_cast<double>(state.objects.size())};
    return rep;
  }
  for (std::size_t k = 0; k < episode.steps.size(); ++k) {
    const StepRecord& r = episode.steps[k];
    if (load != nullptr && load->first_bad_record == static_cast<std::int64_t>(k)) {
      rep.first_divergence = Divergence{k, "checksum", -1, 0.0, 0.0};
      return rep;
    }
    if (r.time_step != state.time_step) {
      rep.first_divergence = Divergence{k, "time_step", -1, static_cast<double>(r.time_step),
                                        static_cast<double>(state.time_step)};
      return rep;
    }
    const auto q = to_float(state.q);
    for (std::size_t i = 0; i < q.size(); ++i) {
      if (std::bit_cast<std::uint32_t>(q[i]) != std::bit_cast<std::uint32_t>(r.qpos[i])) {
        rep.first_divergence = Divergence{k, "qpos", static_cast<int>(i), r.qpos[i], q[i]};
        return rep;
      }
    }
    const auto obj = object_floats(state.objects);
    for (std::size_t i = 0; i < obj.size(); ++i) {
      if (std::bit_cast<std::uint32_t>(obj[i]) != std::bit_cast<std::uint32_t>(r.object_poses[i])) {
        rep.first_divergence = Divergence{k, "object", static_cast<int>(i), r.object_poses[i], obj[i]};
        return rep;
      }
    }
    if (keep_states) rep.states.push_back(state);
    state = step(state, to_rig_vector(r.action), task, rig);
    ++rep.steps_checked;
  }
  if (m.step_count == episode.steps.size() && !m.final_stages.empty() &&
      state.stage_flags() != m.final_stages) {
    rep.first_divergence = Divergence{episode.steps.size(), "stages", -1, 0.0, 0.0};
  }
  return rep;
}

Episode rerender(const Episode& episode, const Rig& rig, CameraSet camera_set, bool av_arm_present) {
  const EpisodeManifest& m = episode.manifest;
  check_chains(m, rig);
  if (m.width != m.height) throw UserError("rerender supports square frames only");
  const ReplayReport rep = replay(episode, rig, true);
  if (!rep.consistent()) {
    throw UserError("cannot rerender: replay diverges, " + rep.first_divergence->describe());
  }
  const CameraRig cameras = CameraRig::nominal(m.width, m.baseline);
  Episode out;
  out.manifest = m;
  out.manifest.camera_set = camera_set;
  out.manifest.av_arm_present = av_arm_present;
  out.steps.reserve(episode.steps.size());
  for (std::size_t k = 0; k < episode.steps.size(); ++k) {
    StepRecord r = episode.steps[k];
    r.frames.clear();
    for (auto& f : render_frames(rep.states[k], rig, cameras, camera_set, av_arm_present)) {
      r.frames.push_back(std::move(f.pixels));
    }
    out.steps.push_back(std::move(r));
  }
  return out;
}

}  // namespace avsim
