#include "support.hpp"

#include <atomic>
#include <fstream>
#include <iterator>

#include <unistd.h>

#include <Eigen/Geometry>

namespace avsim::test {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          ("avsim_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

bool same_bytes(const fs::path& a, const fs::path& b) { return read_bytes(a) == read_bytes(b); }

JointState random_q(const KinematicChain& chain, std::mt19937_64& rng) {
  JointState q(static_cast<Eigen::Index>(chain.dof()));
  for (std::size_t i = 0; i < chain.dof(); ++i) {
    std::uniform_real_distribution<double> d(chain.joints[i].limit_lo, chain.joints[i].limit_hi);
    q[static_cast<Eigen::Index>(i)] = d(rng);
  }
  return q;
}

JointState random_q_near(const KinematicChain& chain, const JointState& q, double radius, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  JointState d(q.size());
  for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = n(rng);
  return chain.clamp(q + d.normalized() * radius * u(rng));
}

namespace {

Eigen::Matrix4d homogeneous(const Vec3& t, const Eigen::Matrix3d& r) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = r;
  m.topRightCorner<3, 1>() = t;
  return m;
}

Eigen::Matrix4d homogeneous(const Pose& p) { return homogeneous(p.translation(), p.rotation().toRotationMatrix()); }

}  // namespace

Eigen::Matrix4d fk_matrix(const KinematicChain& chain, const JointState& q) {
  Eigen::Matrix4d m = homogeneous(chain.base_pose);
  for (std::size_t i = 0; i < chain.dof(); ++i) {
    const Joint& j = chain.joints[i];
    const Eigen::Matrix3d r = Eigen::AngleAxisd(q[static_cast<Eigen::Index>(i)], j.axis.normalized()).toRotationMatrix();
    m = m * homogeneous(j.parent_offset) * homogeneous(Vec3::Zero(), r);
  }
  return m * homogeneous(chain.tool_offset);
}

Eigen::Matrix<double, 6, Eigen::Dynamic> numeric_jacobian(const KinematicChain& chain, const JointState& q,
                                                          double h) {
  const auto n = static_cast<Eigen::Index>(chain.dof());
  Eigen::Matrix<double, 6, Eigen::Dynamic> J(6, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    JointState qp = q, qm = q;
    qp[i] += h;
    qm[i] -= h;
    const Eigen::Matrix4d a = fk_matrix(chain, qp);
    const Eigen::Matrix4d b = fk_matrix(chain, qm);
    J.block<3, 1>(0, i) = (a.topRightCorner<3, 1>() - b.topRightCorner<3, 1>()) / (2 * h);
    const Eigen::Matrix3d dr = a.topLeftCorner<3, 3>() * b.topLeftCorner<3, 3>().transpose();
    const Eigen::AngleAxisd aa(dr);
    J.block<3, 1>(3, i) = aa.axis() * aa.angle() / (2 * h);
  }
  return J;
}

std::uint32_t crc32_bitwise(const std::uint8_t* data, std::size_t n) {
  std::uint32_t c = 0xFFFFFFFFU;
  for (std::size_t i = 0; i < n; ++i) {
    c ^= data[i];
    for (int k = 0; k < 8; ++k) c = (c >> 1) ^ (0xEDB88320U & (0U - (c & 1U)));
  }
  return ~c;
}

DisparitySample measure_disparity(const Rig& rig, const CameraRig& cameras, double z) {
  const RigVector q = rig.home();
  const CameraModel& lm = cameras.camera(CameraId::av_left);
  const CameraModel& rm = cameras.camera(CameraId::av_right);
  const Pose lp = camera_pose(lm, rig, q);
  const Pose rp = camera_pose(rm, rig, q);
  const Vec3 point = lp * Vec3(0.0, 0.0, z);
  const RenderScene scene{Primitive{PrimSphere{point, 0.04 * z}, Owner::object, -1}};

  auto centroid = [&](const CameraModel& m, const Pose& p, int* count) {
    std::vector<int> ids;
    render(scene, m, p, 0, &ids);
    double sum = 0.0;
    *count = 0;
    for (int v = 0; v < m.intrinsics.height; ++v) {
      for (int u = 0; u < m.intrinsics.width; ++u) {
        if (ids[static_cast<std::size_t>(v * m.intrinsics.width + u)] >= 0) {
          sum += u;
          ++*count;
        }
      }
    }
    return *count > 0 ? sum / *count : 0.0;
  };

  DisparitySample s;
  s.depth = z;
  s.expected = lm.intrinsics.fx * cameras.baseline / z;
  s.measured = centroid(lm, lp, &s.left_pixels) - centroid(rm, rp, &s.right_pixels);
  return s;
}

Frame render_without_av_arm(const SimState& state, const Rig& rig, const CameraRig& cameras, CameraId id) {
  RenderScene scene = build_render_scene(state, rig, true);
  std::erase_if(scene, [](const Primitive& p) { return p.owner == Owner::av_arm; });
  const CameraModel& m = cameras.camera(id);
  return render(scene, m, camera_pose(m, rig, state.q), state.time_step);
}

int av_arm_pixels(const SimState& state, const Rig& rig, const CameraRig& cameras, CameraId id) {
  const RenderScene scene = build_render_scene(state, rig, true);
  const CameraModel& m = cameras.camera(id);
  std::vector<int> ids;
  render(scene, m, camera_pose(m, rig, state.q), state.time_step, &ids);
  int n = 0;
  for (int i : ids) {
    if (i >= 0 && scene[static_cast<std::size_t>(i)].owner == Owner::av_arm) ++n;
  }
  return n;
}


wire::Message random_message(wire::MsgType type, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> f(-2.0F, 2.0F);
  std::uniform_int_distribution<int> byte(0, 255);
  std::uniform_int_distribution<std::uint64_t> u64;
  auto text = [&](int n) {
    std::string s;
    for (int i = 0; i < n; ++i) s.push_back(static_cast<char>('a' + byte(rng) % 26));
    return s;
  };
  switch (type) {
    case wire::MsgType::hello: {
      wire::Hello h;
      h.cameras = CameraSet(static_cast<std::uint8_t>(byte(rng)));
      h.role = byte(rng) % 2 ? "operator" : "observer";
      if (byte(rng) % 2) h.task = "thread_needle";
      if (byte(rng) % 2) h.seed = u64(rng) >> 12;
      return h;
    }
    case wire::MsgType::anchor_request: return wire::AnchorRequest{};
    case wire::MsgType::pose_update: {
      wire::PoseUpdate p;
      std::int64_t ts = static_cast<std::int64_t>(u64(rng) >> 20);
      for (auto& d : p.devices) {
        const Eigen::Quaternionf q = Eigen::Quaternionf(f(rng), f(rng), f(rng), f(rng)).normalized();
        d.pose = {f(rng), f(rng), f(rng), q.w(), q.x(), q.y(), q.z()};
        d.trigger = std::abs(f(rng)) / 2.0F;
        d.timestamp_us = ts++;
      }
      return p;
    }
    case wire::MsgType::re_anchor: return wire::ReAnchor{};
    case wire::MsgType::state_update: {
      wire::StateUpdate s;
      s.time_step = u64(rng) >> 8;
      s.status = static_cast<std::uint8_t>(byte(rng) & 7);
      for (auto& x : s.qpos) x = f(rng);
      s.stage_flags.resize(static_cast<std::size_t>(byte(rng) % 4));
      for (std::size_t i = 0; i < s.stage_flags.size(); ++i) s.stage_flags[i] = byte(rng) % 2;
      return s;
    }
    case wire::MsgType::frame: {
      wire::FrameMsg m;
      m.camera = static_cast<CameraId>(byte(rng) % kCameraCount);
      m.time_step = u64(rng) >> 8;
      m.width = static_cast<std::uint16_t>(1 + byte(rng) % 16);
      m.height = static_cast<std::uint16_t>(1 + byte(rng) % 16);
      m.pixels.resize(static_cast<std::size_t>(m.width) * m.height);
      for (auto& p : m.pixels) p = static_cast<std::uint8_t>(byte(rng));
      return m;
    }
    case wire::MsgType::record_control: {
      wire::RecordControl r;
      r.action = byte(rng) % 2 ? "start" : "stop";
      if (byte(rng) % 2) r.task = "peg_insertion";
      if (byte(rng) % 2) r.seed = u64(rng) >> 12;
      if (byte(rng) % 2) r.episode = "episode_0003.avep";
      return r;
    }
    case wire::MsgType::error: return wire::Error{"protocol", text(1 + byte(rng) % 40)};
    case wire::MsgType::ping: return wire::Ping{u64(rng), static_cast<std::int64_t>(u64(rng) >> 1)};
    case wire::MsgType::pong: return wire::Pong{u64(rng), static_cast<std::int64_t>(u64(rng) >> 1)};
  }
  return wire::AnchorRequest{};
}

FuzzResult fuzz_codec(std::uint64_t frames, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> type(1, 10);
  std::uniform_int_distribution<int> byte(0, 255);
  FuzzResult res;
  wire::StreamDecoder stream;
  for (std::uint64_t i = 0; i < frames; ++i) {
    std::vector<std::uint8_t> b = wire::encode(random_message(static_cast<wire::MsgType>(type(rng)), rng));
    switch (byte(rng) % 6) {
      case 0: {
        const int flips = 1 + byte(rng) % 4;
        for (int k = 0; k < flips; ++k) b[static_cast<std::size_t>(rng() % b.size())] ^= static_cast<std::uint8_t>(1 << (byte(rng) % 8));
        break;
      }
      case 1: b.resize(static_cast<std::size_t>(rng() % b.size())); break;
      case 2:
        for (int k = 0; k < 1 + byte(rng) % 8; ++k) b.push_back(static_cast<std::uint8_t>(byte(rng)));
        break;
      case 3:
        b.resize(static_cast<std::size_t>(byte(rng) % 64));
        for (auto& x : b) x = static_cast<std::uint8_t>(byte(rng));
        break;
      case 4:
        if (b.size() >= 4) {
          const std::uint32_t len = static_cast<std::uint32_t>(rng());
          for (int k = 0; k < 4; ++k) b[static_cast<std::size_t>(k)] = static_cast<std::uint8_t>(len >> (8 * k));
        }
        break;
      default:
        if (b.size() > 5) b[4] = static_cast<std::uint8_t>(byte(rng));
        break;
    }
    ++res.frames;
    const wire::Decoded d = wire::decode(b);
    if (d.ok()) {
      ++res.decoded;
      const auto t = wire::type_of(*d.message);
      const bool binary = t == wire::MsgType::pose_update || t == wire::MsgType::state_update ||
                          t == wire::MsgType::frame || t == wire::MsgType::ping || t == wire::MsgType::pong;
      if (binary && wire::encode(*d.message) != b) ++res.binary_reencode_mismatches;
    } else {
      ++res.rejected;
    }
    if (stream.failed()) stream = wire::StreamDecoder();
    stream.feed(b);
    for (int k = 0; k < 4; ++k) {
      if (!stream.next()) break;
    }
  }
  return res;
}

}  // namespace avsim::test
