#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <nlohmann/json.hpp>

namespace avsim {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Quat = Eigen::Quaterniond;

// Rigid transform. The rotation is kept unit-norm with w >= 0 so that every
// pose has a single serialized form.
class Pose {
 public:
  Pose() = default;
  Pose(const Vec3& translation, const Quat& rotation);

  static Pose identity() { return Pose(); }
  static Pose from_translation(const Vec3& t) { return Pose(t, Quat::Identity()); }
  static Pose from_rotation(const Quat& q) { return Pose(Vec3::Zero(), q); }
  static Pose from_axis_angle(const Vec3& axis, double angle);
  // Camera-style look-at: +z toward `target`, +x = z cross `up`, +y = z cross x.
  static Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up);

  const Vec3& translation() const { return translation_; }
  const Quat& rotation() const { return rotation_; }
  Eigen::Matrix3d rotation_matrix() const { return rotation_.toRotationMatrix(); }
  Eigen::Matrix4d matrix() const;

  Pose inverse() const;
  Pose operator*(const Pose& rhs) const;
  Vec3 operator*(const Vec3& point) const { return rotation_ * point + translation_; }
  Vec3 rotate(const Vec3& v) const { return rotation_ * v; }

  bool operator==(const Pose& other) const;

 private:
  Vec3 translation_ = Vec3::Zero();
  Quat rotation_ = Quat::Identity();
};

// Unit quaternion with w >= 0.
Quat canonical(const Quat& q);

// Rotation vector (axis * angle, angle in [0, pi]) of a rotation.
Vec3 rotation_vector(const Quat& q);
Quat quat_from_rotation_vector(const Vec3& rv);

// Translation lerp + rotation slerp; s in [0, 1].
Pose interpolate(const Pose& a, const Pose& b, double s);

// Largest translation / rotation-angle difference between two poses.
double translation_distance(const Pose& a, const Pose& b);
double rotation_distance(const Pose& a, const Pose& b);

nlohmann::json to_json(const Pose& p);
Pose pose_from_json(const nlohmann::json& j);

}  // namespace avsim
