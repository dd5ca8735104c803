#include "avsim/camera.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <limits>

#include "avsim/error.hpp"

namespace avsim {

namespace {

constexpr double kNear = 1e-3;
constexpr double kMiss = std::numeric_limits<double>::infinity();

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

struct GroupName {
  const char* name;
  CameraSet set;
};

// ---- intersections; rays start at the camera origin, `d` is unit length ----

double hit_sphere(const Vec3& c, double r, const Vec3& d) {
  const double b = d.dot(c);
  const double disc = b * b - c.squaredNorm() + r * r;
  if (disc < 0.0) return kMiss;
  const double s = std::sqrt(disc);
  if (b - s >= kNear) return b - s;
  if (b + s >= kNear) return b + s;
  return kMiss;
}

struct CamBox {
  Eigen::Matrix3d rt;  // camera -> box rotation
  Vec3 origin;         // camera origin in box coordinates
  Vec3 half;
};

double hit_box(const CamBox& box, const Vec3& d) {
  const Vec3 dl = box.rt * d;
  double tmin = -kMiss;
  double tmax = kMiss;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(dl[i]) < 1e-15) {
      if (std::abs(box.origin[i]) > box.half[i]) return kMiss;
      continue;
    }
    double t1 = (-box.half[i] - box.origin[i]) / dl[i];
    double t2 = (box.half[i] - box.origin[i]) / dl[i];
    if (t1 > t2) std::swap(t1, t2);
    tmin = std::max(tmin, t1);
    tmax = std::min(tmax, t2);
    if (tmin > tmax) return kMiss;
  }
  if (tmin >= kNear) return tmin;
  if (tmax >= kNear) return tmax;
  return kMiss;
}

double hit_capsule(const Vec3& pa, const Vec3& pb, double ra, const Vec3& rd) {
  const Vec3 ba = pb - pa;
  const Vec3 oa = -pa;
  const double baba = ba.dot(ba);
  const double bard = ba.dot(rd);
  const double baoa = ba.dot(oa);
  const double rdoa = rd.dot(oa);
  const double oaoa = oa.dot(oa);
  const double a = baba - bard * bard;
  if (baba > 0.0 && a > 1e-14) {
    const double b = baba * rdoa - baoa * bard;
    const double c = baba * oaoa - baoa * baoa - ra * ra * baba;
    const double h = b * b - a * c;
    if (h < 0.0) return kMiss;
    const double t = (-b - std::sqrt(h)) / a;
    const double y = baoa + t * bard;
    if (y > 0.0 && y < baba) return t >= kNear ? t : kMiss;
    const Vec3 centre = y <= 0.0 ? pa : pb;
    return hit_sphere(centre, ra, rd);
  }
  return std::min(hit_sphere(pa, ra, rd), hit_sphere(pb, ra, rd));
}

double hit_cylinder(const Vec3& a, const Vec3& b, double ra, const Vec3& rd) {
  const Vec3 ba = b - a;
  const Vec3 oc = -a;
  const double baba = ba.dot(ba);
  const double bard = ba.dot(rd);
  const double baoc = ba.dot(oc);
  const double k2 = baba - bard * bard;
  const double k1 = baba * oc.dot(rd) - baoc * bard;
  const double k0 = baba * oc.dot(oc) - baoc * baoc - ra * ra * baba;
  if (k2 < 1e-14) {
    // ray parallel to the axis: only the caps can be hit
    if (k0 > 0.0 || std::abs(bard) < 1e-15) return kMiss;
    const double t0 = -baoc / bard;
    const double t1 = (baba - baoc) / bard;
    const double t = std::min(t0, t1);
    return t >= kNear ? t : kMiss;
  }
  double h = k1 * k1 - k2 * k0;
  if (h < 0.0) return kMiss;
  h = std::sqrt(h);
  double t = (-k1 - h) / k2;
  const double y = baoc + t * bard;
  if (y > 0.0 && y < baba) return t >= kNear ? t : kMiss;
  if (std::abs(bard) < 1e-15) return kMiss;
  t = ((y < 0.0 ? 0.0 : baba) - baoc) / bard;
  if (std::abs(k1 + k2 * t) < h) return t >= kNear ? t : kMiss;
  return kMiss;
}

// Primitive transformed into the camera frame, with its bounding sphere.
struct CamPrim {
  int index;
  int kind;  // 0 sphere, 1 box, 2 cylinder, 3 capsule
  Vec3 p0 = Vec3::Zero();
  Vec3 p1 = Vec3::Zero();
  double radius = 0.0;
  CamBox box;
  Vec3 bound_center = Vec3::Zero();
  double bound_radius = 0.0;

  double hit(const Vec3& d) const {
    switch (kind) {
      case 0: return hit_sphere(p0, radius, d);
      case 1: return hit_box(box, d);
      case 2: return hit_cylinder(p0, p1, radius, d);
      default: return hit_capsule(p0, p1, radius, d);
    }
  }
};

CamPrim to_camera(const Primitive& prim, int index, const Pose& world_to_cam) {
  CamPrim cp;
  cp.index = index;
  std::visit(overloaded{
                 [&](const PrimSphere& s) {
                   cp.kind = 0;
                   cp.p0 = world_to_cam * s.center;
                   cp.radius = s.radius;
                   cp.bound_center = cp.p0;
                   cp.bound_radius = s.radius;
                 },
                 [&](const PrimBox& b) {
                   cp.kind = 1;
                   const Pose in_cam = world_to_cam * b.pose;
                   cp.box.rt = in_cam.rotation_matrix().transpose();
                   cp.box.origin = cp.box.rt * (-in_cam.translation());
                   cp.box.half = b.half_extents;
                   cp.bound_center = in_cam.translation();
                   cp.bound_radius = b.half_extents.norm();
                 },
                 [&](const PrimCylinder& c) {
                   cp.kind = 2;
                   const Pose in_cam = world_to_cam * c.pose;
                   cp.p0 = in_cam * Vec3(0.0, 0.0, -c.half_length);
                   cp.p1 = in_cam * Vec3(0.0, 0.0, c.half_length);
                   cp.radius = c.radius;
                   cp.bound_center = in_cam.translation();
                   cp.bound_radius = std::hypot(c.radius, c.half_length);
                 },
                 [&](const PrimCapsule& c) {
                   cp.kind = 3;
                   cp.p0 = world_to_cam * c.a;
                   cp.p1 = world_to_cam * c.b;
                   cp.radius = c.radius;
                   cp.bound_center = 0.5 * (cp.p0 + cp.p1);
                   cp.bound_radius = 0.5 * (cp.p1 - cp.p0).norm() + c.radius;
                 },
             },
             prim.geometry);
  return cp;
}

// Conservative pixel range [lo, hi] covered by a sphere along one image axis.
// `lateral` is the sphere center's x (or y), `z` its depth.
bool axis_bounds(double lateral, double z, double r, double f, double c, int size, int& lo,
                 int& hi) {
  const double dist = std::hypot(lateral, z);
  if (dist <= r) {
    lo = 0;
    hi = size - 1;
    return true;
  }
  const double phi = std::atan2(lateral, z);
  const double alpha = std::asin(r / dist);
  const double low = phi - alpha;
  const double high = phi + alpha;
  constexpr double kEdge = M_PI_2 - 1e-6;
  if (low >= kEdge || high <= -kEdge) return false;
  const double u_lo = low <= -kEdge ? -1e9 : f * std::tan(low) + c;
  const double u_hi = high >= kEdge ? 1e9 : f * std::tan(high) + c;
  lo = static_cast<int>(std::max(0.0, std::floor(u_lo)));
  hi = static_cast<int>(std::min(static_cast<double>(size - 1), std::ceil(u_hi)));
  return lo <= hi;
}

Primitive capsule(const Vec3& a, const Vec3& b, double r, Owner owner) {
  return Primitive{PrimCapsule{a, b, r}, owner, -1};
}

void add_arm(RenderScene& scene, const Rig& rig, const RigVector& q, ChainId id) {
  const KinematicChain& chain = rig.chain(id);
  const auto frames = forward_kinematics(chain, rig.arm_joints(q, id));
  const Pose& tool = frames.back();
  const Owner owner = id == ChainId::left    ? Owner::left_arm
                      : id == ChainId::right ? Owner::right_arm
                                             : Owner::av_arm;
  std::vector<Vec3> points;
  points.push_back(chain.base_pose.translation());
  for (std::size_t i = 0; i + 1 < frames.size(); ++i) points.push_back(frames[i].translation());
  if (id == ChainId::av) {
    points.push_back(tool * Vec3(0.0, 0.0, -0.04));
  } else {
    points.push_back(tool * Vec3(-0.05, 0.0, 0.0));
  }
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    if ((points[i + 1] - points[i]).norm() < 1e-6) continue;
    const double r = i < 3 ? 0.025 : 0.02;
    scene.push_back(capsule(points[i], points[i + 1], r, owner));
  }
  if (id == ChainId::av) {
    // stereo camera body, behind the lens plane
    scene.push_back(Primitive{PrimBox{tool * Pose::from_translation({0.0315, 0.0, -0.025}),
                                      Vec3(0.05, 0.015, 0.015)},
                              owner, -1});
    return;
  }
  const GripperModel& g = rig.gripper;
  const double closure =
      std::clamp((rig.gripper_angle(q, id) - g.open_angle) / (g.closed_angle - g.open_angle), 0.0, 1.0);
  const double half_gap = 0.012 + 0.022 * (1.0 - closure);
  for (double side : {-1.0, 1.0}) {
    scene.push_back(capsule(tool * Vec3(-0.05, side * half_gap, 0.0),
                            tool * Vec3(0.0, side * half_gap, 0.0), 0.006, owner));
  }
}

}  // namespace

std::string_view to_string(CameraId id) {
  switch (id) {
    case CameraId::static_top: return "static_top";
    case CameraId::static_low: return "static_low";
    case CameraId::wrist_left: return "wrist_left";
    case CameraId::wrist_right: return "wrist_right";
    case CameraId::av_left: return "av_left";
    case CameraId::av_right: return "av_right";
  }
  return "?";
}

std::optional<CameraId> camera_id_from_string(std::string_view name) {
  for (CameraId id : kAllCameras) {
    if (to_string(id) == name) return id;
  }
  return std::nullopt;
}

CameraSet::CameraSet(std::initializer_list<CameraId> ids) {
  for (CameraId id : ids) bits_ |= static_cast<std::uint8_t>(1U << static_cast<int>(id));
}

CameraSet CameraSet::parse(std::string_view text) {
  CameraSet out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find_first_of(",+", pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view token = text.substr(pos, end - pos);
    while (!token.empty() && token.front() == ' ') token.remove_prefix(1);
    while (!token.empty() && token.back() == ' ') token.remove_suffix(1);
    if (!token.empty()) {
      std::string lower(token);
      std::transform(lower.begin(), lower.end(), lower.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      if (lower == "all") {
        out = out | CameraSet::all();
      } else if (lower == "av") {
        out = out | CameraSet::av();
      } else if (lower == "static") {
        out = out | CameraSet::statics();
      } else if (lower == "wrist") {
        out = out | CameraSet::wrist();
      } else if (auto id = camera_id_from_string(lower)) {
        out = out | CameraSet{*id};
      } else {
        throw UserError("unknown camera '" + std::string(token) +
                        "' (expected one of static_top, static_low, wrist_left, wrist_right, "
                        "av_left, av_right, or a group: av, static, wrist)");
      }
    }
    pos = end + 1;
  }
  return out;
}

int CameraSet::size() const { return std::popcount(bits_); }

std::vector<CameraId> CameraSet::ids() const {
  std::vector<CameraId> out;
  for (CameraId id : kAllCameras) {
    if (contains(id)) out.push_back(id);
  }
  return out;
}

int CameraSet::index_of(CameraId id) const {
  if (!contains(id)) return -1;
  const std::uint8_t below = static_cast<std::uint8_t>(bits_ & ((1U << static_cast<int>(id)) - 1U));
  return std::popcount(below);
}

std::string CameraSet::to_string() const {
  std::string s;
  for (CameraId id : ids()) {
    if (!s.empty()) s += ",";
    s += avsim::to_string(id);
  }
  return s;
}

std::string CameraSet::label() const {
  const GroupName groups[] = {{"AV", av()}, {"Static", statics()}, {"Wrist", wrist()}};
  std::string s;
  CameraSet covered;
  for (const auto& g : groups) {
    if (contains(g.set)) {
      if (!s.empty()) s += " + ";
      s += g.name;
      covered = covered | g.set;
    }
  }
  if (covered != *this || s.empty()) return to_string();
  return s;
}

std::vector<CameraSet> camera_configurations() {
  const CameraSet a = CameraSet::av();
  const CameraSet s = CameraSet::statics();
  const CameraSet w = CameraSet::wrist();
  return {a, a | s, a | w, a | s | w, s, s | w, w};
}

Intrinsics Intrinsics::square(int resolution) {
  if (resolution <= 0) throw UserError("camera resolution must be positive");
  const double r = static_cast<double>(resolution);
  return Intrinsics{r, r, 0.5 * r, 0.5 * r, resolution, resolution};
}

CameraRig CameraRig::nominal(int resolution, double baseline) {
  CameraRig rig;
  rig.baseline = baseline;
  const Intrinsics intr = Intrinsics::square(resolution);

  auto fixed = [&](CameraId id, const Pose& pose) {
    rig.cameras[static_cast<std::size_t>(id)] = CameraModel{id, intr, FixedMount{pose}};
  };
  auto on_chain = [&](CameraId id, ChainId chain, const Pose& offset) {
    rig.cameras[static_cast<std::size_t>(id)] = CameraModel{id, intr, ChainMount{chain, offset}};
  };

  fixed(CameraId::static_top, Pose::look_at({0.0, 0.3, 0.85}, {0.0, 0.0, 0.0}, Vec3::UnitZ()));
  fixed(CameraId::static_low, Pose::look_at({0.0, 0.6, 0.2}, {0.0, 0.0, 0.05}, Vec3::UnitZ()));

  // tool x -> optical axis, tilted 25 degrees toward the fingers
  Eigen::Matrix3d base;
  base << 0, 0, 1,
          -1, 0, 0,
          0, -1, 0;
  const Quat wrist_rot =
      Quat(base) * Quat(Eigen::AngleAxisd(-25.0 * M_PI / 180.0, Vec3::UnitX()));
  const Pose wrist_offset({-0.08, 0.0, 0.045}, wrist_rot);
  on_chain(CameraId::wrist_left, ChainId::left, wrist_offset);
  on_chain(CameraId::wrist_right, ChainId::right, wrist_offset);

  on_chain(CameraId::av_left, ChainId::av, Pose());
  on_chain(CameraId::av_right, ChainId::av, Pose::from_translation({baseline, 0.0, 0.0}));
  return rig;
}

Pose camera_pose(const CameraModel& camera, const Rig& rig, const RigVector& q) {
  return std::visit(overloaded{
                        [](const FixedMount& m) { return m.pose; },
                        [&](const ChainMount& m) { return rig.tool(q, m.chain) * m.offset; },
                    },
                    camera.mount);
}

Projection project(const Vec3& world_point, const Pose& cam_pose, const Intrinsics& k) {
  const Vec3 p = cam_pose.inverse() * world_point;
  Projection out;
  if (p.z() <= 0.0) return out;
  out.valid = true;
  out.u = k.fx * p.x() / p.z() + k.cx;
  out.v = k.fy * p.y() / p.z() + k.cy;
  out.depth = p.z();
  return out;
}

Primitive primitive_for(const SceneObject& object, int index) {
  Primitive prim;
  prim.owner = Owner::object;
  prim.object_index = index;
  std::visit(overloaded{
                 [&](const Sphere& s) {
                   prim.geometry = PrimSphere{object.pose.translation(), s.radius};
                 },
                 [&](const Box& b) { prim.geometry = PrimBox{object.pose, b.half_extents}; },
                 [&](const Cylinder& c) {
                   prim.geometry = PrimCylinder{object.pose, c.radius, c.half_length};
                 },
                 [&](const Capsule& c) {
                   prim.geometry = PrimCapsule{object.pose * Vec3(0.0, 0.0, -c.half_length),
                                               object.pose * Vec3(0.0, 0.0, c.half_length),
                                               c.radius};
                 },
             },
             object.shape);
  return prim;
}

RenderScene build_render_scene(const SimState& state, const Rig& rig, bool include_av_arm) {
  RenderScene scene;
  scene.reserve(state.objects.size() + 32);
  for (std::size_t i = 0; i < state.objects.size(); ++i) {
    scene.push_back(primitive_for(state.objects[i], static_cast<int>(i)));
  }
  add_arm(scene, rig, state.q, ChainId::left);
  add_arm(scene, rig, state.q, ChainId::right);
  if (include_av_arm) add_arm(scene, rig, state.q, ChainId::av);
  return scene;
}

Frame render(const RenderScene& scene, const CameraModel& camera, const Pose& pose,
             std::uint64_t time_step, std::vector<int>* id_buffer) {
  const Intrinsics& k = camera.intrinsics;
  Frame frame;
  frame.camera = camera.id;
  frame.time_step = time_step;
  frame.width = k.width;
  frame.height = k.height;
  frame.pose = pose;
  const auto n = static_cast<std::size_t>(k.width) * static_cast<std::size_t>(k.height);
  frame.pixels.assign(n, 0);
  std::vector<double> depth(n, kMiss);
  std::vector<int> ids(n, -1);

  const Pose world_to_cam = pose.inverse();
  std::vector<CamPrim> prims;
  prims.reserve(scene.size());
  for (std::size_t i = 0; i < scene.size(); ++i) {
    CamPrim cp = to_camera(scene[i], static_cast<int>(i), world_to_cam);
    if (cp.bound_center.z() + cp.bound_radius < kNear) continue;
    prims.push_back(cp);
  }
  // front to back, so occluded pixels fail the cheap bound test
  std::sort(prims.begin(), prims.end(), [](const CamPrim& a, const CamPrim& b) {
    const double da = a.bound_center.norm() - a.bound_radius;
    const double db = b.bound_center.norm() - b.bound_radius;
    return da != db ? da < db : a.index < b.index;
  });

  for (const CamPrim& cp : prims) {
    int u0, u1, v0, v1;
    if (!axis_bounds(cp.bound_center.x(), cp.bound_center.z(), cp.bound_radius, k.fx, k.cx,
                     k.width, u0, u1)) {
      continue;
    }
    if (!axis_bounds(cp.bound_center.y(), cp.bound_center.z(), cp.bound_radius, k.fy, k.cy,
                     k.height, v0, v1)) {
      continue;
    }
    const double nearest = std::max(kNear, cp.bound_center.norm() - cp.bound_radius);
    for (int v = v0; v <= v1; ++v) {
      const double y = (v - k.cy) / k.fy;
      for (int u = u0; u <= u1; ++u) {
        const std::size_t pix = static_cast<std::size_t>(v) * static_cast<std::size_t>(k.width) +
                                static_cast<std::size_t>(u);
        if (nearest >= depth[pix]) continue;
        const Vec3 d = Vec3((u - k.cx) / k.fx, y, 1.0).normalized();
        const double t = cp.hit(d);
        if (t < depth[pix] || (t == depth[pix] && cp.index < ids[pix])) {
          depth[pix] = t;
          ids[pix] = cp.index;
        }
      }
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (ids[i] < 0) continue;
    const double shade = std::round(255.0 / (1.0 + depth[i]));
    frame.pixels[i] = static_cast<std::uint8_t>(std::clamp(shade, 1.0, 255.0));
  }
  if (id_buffer != nullptr) *id_buffer = std::move(ids);
  return frame;
}

Frame render_camera(const SimState& state, const Rig& rig, const CameraRig& cameras, CameraId id,
                    bool include_av_arm) {
  const CameraModel& cam = cameras.camera(id);
  const RenderScene scene = build_render_scene(state, rig, include_av_arm);
  return render(scene, cam, camera_pose(cam, rig, state.q), state.time_step);
}

std::vector<std::uint8_t> downsample(const Frame& frame, int out_w, int out_h) {
  if (out_w <= 0 || out_h <= 0 || frame.width < out_w || frame.height < out_h) {
    throw ContractViolation("downsample: bad target size");
  }
  std::vector<std::uint8_t> out(static_cast<std::size_t>(out_w * out_h));
  for (int by = 0; by < out_h; ++by) {
    const int y0 = by * frame.height / out_h;
    const int y1 = (by + 1) * frame.height / out_h;
    for (int bx = 0; bx < out_w; ++bx) {
      const int x0 = bx * frame.width / out_w;
      const int x1 = (bx + 1) * frame.width / out_w;
      unsigned sum = 0;
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) sum += frame.at(x, y);
      }
      const unsigned count = static_cast<unsigned>((y1 - y0) * (x1 - x0));
      out[static_cast<std::size_t>(by * out_w + bx)] =
          static_cast<std::uint8_t>((sum + count / 2) / count);
    }
  }
  return out;
}

}  // namespace avsim
