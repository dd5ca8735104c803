#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "avsim/pose.hpp"
#include "avsim/rig.hpp"
#include "avsim/sim.hpp"

namespace avsim {

enum class CameraId : std::uint8_t {
  static_top = 0,
  static_low = 1,
  wrist_left = 2,
  wrist_right = 3,
  av_left = 4,
  av_right = 5,
};

inline constexpr int kCameraCount = 6;
inline constexpr std::array<CameraId, kCameraCount> kAllCameras = {
    CameraId::static_top, CameraId::static_low, CameraId::wrist_left,
    CameraId::wrist_right, CameraId::av_left,   CameraId::av_right};

std::string_view to_string(CameraId id);
std::optional<CameraId> camera_id_from_string(std::string_view name);

// Subset of the six cameras, iterated in canonical (CameraId) order.
class CameraSet {
 public:
  constexpr CameraSet() = default;
  constexpr explicit CameraSet(std::uint8_t bits) : bits_(bits & 0x3F) {}
  CameraSet(std::initializer_list<CameraId> ids);

  static CameraSet all() { return CameraSet(0x3F); }
  static CameraSet av() { return {CameraId::av_left, CameraId::av_right}; }
  static CameraSet statics() { return {CameraId::static_top, CameraId::static_low}; }
  static CameraSet wrist() { return {CameraId::wrist_left, CameraId::wrist_right}; }

  // Comma-separated camera ids and/or group names (av, static, wrist).
  // Throws UserError on unknown names.
  static CameraSet parse(std::string_view text);

  bool contains(CameraId id) const { return (bits_ >> static_cast<int>(id)) & 1U; }
  bool contains(CameraSet other) const { return (other.bits_ & ~bits_) == 0; }
  bool empty() const { return bits_ == 0; }
  int size() const;
  std::uint8_t bits() const { return bits_; }
  std::vector<CameraId> ids() const;
  // Position of `id` within this set's canonical order; -1 when absent.
  int index_of(CameraId id) const;

  CameraSet operator|(CameraSet o) const { return CameraSet(bits_ | o.bits_); }
  CameraSet operator-(CameraSet o) const { return CameraSet(bits_ & ~o.bits_); }
  bool operator==(const CameraSet&) const = default;

  std::string to_string() const;  // comma list of ids
  // "AV + Static + Wrist" style label when the set is a union of groups, else the id list.
  std::string label() const;

 private:
  std::uint8_t bits_ = 0;
};

// The seven non-empty combinations of {AV, Static, Wrist}, in report order.
std::vector<CameraSet> camera_configurations();

struct Intrinsics {
  double fx = 96.0;
  double fy = 96.0;
  double cx = 48.0;
  double cy = 48.0;
  int width = 96;
  int height = 96;

  static Intrinsics square(int resolution);
};

struct FixedMount {
  Pose pose;
};
struct ChainMount {
  ChainId chain = ChainId::av;
  Pose offset;  // relative to the chain's tool frame
};

// Camera frame convention: +z optical axis, +x image right, +y image down.
struct CameraModel {
  CameraId id = CameraId::static_top;
  Intrinsics intrinsics;
  std::variant<FixedMount, ChainMount> mount;
};

struct CameraRig {
  std::array<CameraModel, kCameraCount> cameras;
  double baseline = 0.063;

  const CameraModel& camera(CameraId id) const { return cameras[static_cast<std::size_t>(id)]; }

  // Nominal layout: top/low static views, wrist cameras above each gripper,
  // AV stereo pair on the AV tool with the given baseline.
  static CameraRig nominal(int resolution = 96, double baseline = 0.063);
};

Pose camera_pose(const CameraModel& camera, const Rig& rig, const RigVector& q);

struct Projection {
  bool valid = false;  // false when the point is not in front of the camera
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;  // camera-frame z
};

Projection project(const Vec3& world_point, const Pose& camera_pose, const Intrinsics& intrinsics);

struct Frame {
  CameraId camera = CameraId::static_top;
  std::uint64_t time_step = 0;
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, 8-bit grayscale
  Pose pose;                         // camera pose at capture

  std::uint8_t at(int u, int v) const { return pixels[static_cast<std::size_t>(v * width + u)]; }
};

// ---- ray-cast scene ----

enum class Owner : std::uint8_t { object, left_arm, right_arm, av_arm };

struct PrimSphere {
  Vec3 center;
  double radius;
};
struct PrimBox {
  Pose pose;
  Vec3 half_extents;
};
struct PrimCylinder {
  Pose pose;  // axis = local z
  double radius;
  double half_length;
};
struct PrimCapsule {
  Vec3 a;
  Vec3 b;
  double radius;
};

struct Primitive {
  std::variant<PrimSphere, PrimBox, PrimCylinder, PrimCapsule> geometry;
  Owner owner = Owner::object;
  int object_index = -1;  // index into SimState::objects for owner == object
};

using RenderScene = std::vector<Primitive>;

Primitive primitive_for(const SceneObject& object, int index);
// Scene objects plus robot links as capsules (and finger/camera-body details).
RenderScene build_render_scene(const SimState& state, const Rig& rig, bool include_av_arm = true);

// Per-pixel ray cast through integer pixel coordinates; nearest hit shaded
// 255 / (1 + distance), at least 1; misses are 0. `id_buffer` receives the
// index of the visible primitive or -1.
Frame render(const RenderScene& scene, const CameraModel& camera, const Pose& pose,
             std::uint64_t time_step = 0, std::vector<int>* id_buffer = nullptr);

Frame render_camera(const SimState& state, const Rig& rig, const CameraRig& cameras, CameraId id,
                    bool include_av_arm = true);

// 8-bit grayscale block-average downsample to out_w x out_h.
std::vector<std::uint8_t> downsample(const Frame& frame, int out_w, int out_h);

}  // namespace avsim
