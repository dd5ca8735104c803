#include "avsim/pose.hpp"

#include <cmath>
#include <stdexcept>

#include "avsim/error.hpp"

namespace avsim {

Quat canonical(const Quat& q) {
  Quat out = q;
  out.normalize();
  if (out.w() < 0.0) out.coeffs() = -out.coeffs();
  return out;
}

Pose::Pose(const Vec3& translation, const Quat& rotation)
    : translation_(translation), rotation_(canonical(rotation)) {}

Pose Pose::from_axis_angle(const Vec3& axis, double angle) {
  return from_rotation(Quat(Eigen::AngleAxisd(angle, axis.normalized())));
}

Pose Pose::look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(up);
  if (x.norm() < 1e-9) {
    throw ContractViolation("look_at: view direction parallel to up vector");
  }
  x.normalize();
  const Vec3 y = z.cross(x);
  Eigen::Matrix3d r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return Pose(eye, Quat(r));
}

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_matrix();
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

Pose Pose::inverse() const {
  const Quat inv = rotation_.conjugate();
  return Pose(-(inv * translation_), inv);
}

Pose Pose::operator*(const Pose& rhs) const {
  return Pose(rotation_ * rhs.translation_ + translation_, rotation_ * rhs.rotation_);
}

bool Pose::operator==(const Pose& other) const {
  return translation_ == other.translation_ && rotation_.coeffs() == other.rotation_.coeffs();
}

Vec3 rotation_vector(const Quat& q_in) {
  const Quat q = canonical(q_in);
  const Vec3 v = q.vec();
  const double s = v.norm();
  if (s < 1e-12) {
    // small-angle: angle ~ 2 s, axis = v / s
    return 2.0 * v;
  }
  const double angle = 2.0 * std::atan2(s, q.w());
  return v * (angle / s);
}

Quat quat_from_rotation_vector(const Vec3& rv) {
  const double angle = rv.norm();
  if (angle < 1e-12) {
    return canonical(Quat(1.0, 0.5 * rv.x(), 0.5 * rv.y(), 0.5 * rv.z()));
  }
  return canonical(Quat(Eigen::AngleAxisd(angle, rv / angle)));
}

Pose interpolate(const Pose& a, const Pose& b, double s) {
  return Pose(a.translation() + s * (b.translation() - a.translation()),
              a.rotation().slerp(s, b.rotation()));
}

double translation_distance(const Pose& a, const Pose& b) {
  return (a.translation() - b.translation()).norm();
}

double rotation_distance(const Pose& a, const Pose& b) {
  return rotation_vector(b.rotation() * a.rotation().conjugate()).norm();
}

nlohmann::json to_json(const Pose& p) {
  const auto& t = p.translation();
  const auto& q = p.rotation();
  return {{"translation", {t.x(), t.y(), t.z()}}, {"rotation", {q.w(), q.x(), q.y(), q.z()}}};
}

Pose pose_from_json(const nlohmann::json& j) {
  Vec3 t = Vec3::Zero();
  Quat q = Quat::Identity();
  if (j.contains("translation")) {
    const auto& a = j.at("translation");
    if (a.size() != 3) throw std::invalid_argument("pose translation must have 3 entries");
    t = Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
  }
  if (j.contains("rotation")) {
    const auto& a = j.at("rotation");
    if (a.size() != 4) throw std::invalid_argument("pose rotation must be (w,x,y,z)");
    q = Quat(a[0].get<double>(), a[1].get<double>(), a[2].get<double>(), a[3].get<double>());
    if (std::abs(q.norm() - 1.0) > 1e-6) {
      throw std::invalid_argument("pose rotation must be a unit quaternion");
    }
  }
  return Pose(t, q);
}

}  // namespace avsim
