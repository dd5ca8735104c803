#include "avsim/scene.hpp"

#include <algorithm>
#include <cmath>

namespace avsim {

namespace {

double segment_distance(double half_length, const Vec3& p) {
  const double z = std::clamp(p.z(), -half_length, half_length);
  return (p - Vec3(0.0, 0.0, z)).norm();
}

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

bool same_attachment(const std::optional<Attachment>& a, const std::optional<Attachment>& b) {
  if (a.has_value() != b.has_value()) return false;
  if (!a) return true;
  return a->chain == b->chain && a->offset == b->offset;
}

}  // namespace

double bounding_radius(const Shape& shape) {
  return std::visit(overloaded{
                        [](const Sphere& s) { return s.radius; },
                        [](const Box& b) { return b.half_extents.norm(); },
                        [](const Cylinder& c) { return std::hypot(c.radius, c.half_length); },
                        [](const Capsule& c) { return c.radius + c.half_length; },
                    },
                    shape);
}

double core_distance(const Shape& shape, const Vec3& p) {
  return std::visit(overloaded{
                        [&](const Sphere&) { return p.norm(); },
                        [&](const Box& b) {
                          const Vec3 outside = (p.cwiseAbs() - b.half_extents).cwiseMax(0.0);
                          return outside.norm();
                        },
                        [&](const Cylinder& c) { return segment_distance(c.half_length, p); },
                        [&](const Capsule& c) { return segment_distance(c.half_length, p); },
                    },
                    shape);
}

bool SceneObject::operator==(const SceneObject& o) const {
  const bool same_shape = shape.index() == o.shape.index() && shape_to_json(shape) == shape_to_json(o.shape);
  const bool same_socket =
      socket.has_value() == o.socket.has_value() &&
      (!socket || (socket->axis == o.socket->axis && socket->entry_point == o.socket->entry_point &&
                   socket->depth == o.socket->depth && socket->radius == o.socket->radius &&
                   socket->slot == o.socket->slot && socket->slot_dir == o.socket->slot_dir &&
                   socket->half_length == o.socket->half_length));
  return id == o.id && same_shape && pose == o.pose && graspable == o.graspable &&
         same_attachment(attached, o.attached) && same_attachment(support, o.support) && same_socket;
}

nlohmann::json shape_to_json(const Shape& shape) {
  return std::visit(
      overloaded{
          [](const Sphere& s) { return nlohmann::json{{"type", "sphere"}, {"radius", s.radius}}; },
          [](const Box& b) {
            return nlohmann::json{
                {"type", "box"},
                {"half_extents", {b.half_extents.x(), b.half_extents.y(), b.half_extents.z()}}};
          },
          [](const Cylinder& c) {
            return nlohmann::json{
                {"type", "cylinder"}, {"radius", c.radius}, {"half_length", c.half_length}};
          },
          [](const Capsule& c) {
            return nlohmann::json{
                {"type", "capsule"}, {"radius", c.radius}, {"half_length", c.half_length}};
          },
      },
      shape);
}

}  // namespace avsim
