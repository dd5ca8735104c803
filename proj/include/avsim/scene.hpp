#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "avsim/pose.hpp"
#include "avsim/rig.hpp"

namespace avsim {

// Cylinders and capsules are aligned with their local z axis.
struct Sphere {
  double radius = 0.0;
};
struct Box {
  Vec3 half_extents = Vec3::Zero();
};
struct Cylinder {
  double radius = 0.0;
  double half_length = 0.0;
};
struct Capsule {
  double radius = 0.0;
  double half_length = 0.0;
};

using Shape = std::variant<Sphere, Box, Cylinder, Capsule>;

// Radius of the smallest origin-centered sphere enclosing the shape.
double bounding_radius(const Shape& shape);

// Distance from a point (shape-local coordinates) to the shape's grasp core:
// the center of a sphere, the solid of a box, the axis segment of a cylinder or capsule.
double core_distance(const Shape& shape, const Vec3& local_point);

// Insertion target carried by an object. `axis` points into the opening; all
// vectors are in the owning object's local frame.
struct Socket {
  Vec3 axis = -Vec3::UnitZ();
  Vec3 entry_point = Vec3::Zero();
  double depth = 0.0;
  double radius = 0.0;
  // A slot is an elongated opening: lateral tolerance applies across `slot_dir`
  // only, and the inserted body must fit within +/- half_length along it.
  bool slot = false;
  Vec3 slot_dir = Vec3::UnitX();
  double half_length = 0.0;
};

struct Attachment {
  ChainId chain = ChainId::right;
  Pose offset;  // object pose = tool pose * offset
};

struct SceneObject {
  std::string id;
  Shape shape;
  Pose pose;
  bool graspable = false;
  std::optional<Attachment> attached;  // rigidly slaved to this chain's tool
  std::optional<Attachment> support;   // second hand holding an attached object
  std::optional<Socket> socket;

  bool operator==(const SceneObject&) const;
};

nlohmann::json shape_to_json(const Shape& shape);

}  // namespace avsim
