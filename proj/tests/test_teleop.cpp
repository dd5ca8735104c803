#include <random>

#include <gtest/gtest.h>

#include "avsim/error.hpp"
#include "avsim/scripted_operator.hpp"
#include "avsim/teleop.hpp"

namespace avsim {
namespace {

Pose random_pose(std::mt19937_64& rng, double spread = 1.0) {
  std::normal_distribution<double> n;
  const Quat q = Quat(n(rng), n(rng), n(rng), n(rng)).normalized();
  return Pose(spread * Vec3(n(rng), n(rng), n(rng)), q);
}

Eigen::Matrix4d adapter_matrix(const Quat& a) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = a.toRotationMatrix();
  return m;
}

TeleopAnchor random_anchor(std::mt19937_64& rng) {
  TeleopAnchor a;
  for (auto& e : a.entries) {
    e.device_init = random_pose(rng);
    e.robot_init = random_pose(rng);
  }
  return a;
}

TEST(Teleop, AnchoredIdentity) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 1000; ++i) {
    const TeleopAnchor a = random_anchor(rng);
    for (DeviceId d : kAllDevices) {
      const Pose out = map_pose(a, {d, a.entry(d).device_init, 0.0, 0});
      EXPECT_LT((out.matrix() - a.entry(d).robot_init.matrix()).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Teleop, MotionMapsThroughConjugation) {
  std::mt19937_64 rng(22);
  const Eigen::Matrix4d A = adapter_matrix(default_frame_adapter());
  for (int i = 0; i < 1000; ++i) {
    const TeleopAnchor a = random_anchor(rng);
    const Pose now = random_pose(rng);
    const auto& e = a.entry(DeviceId::left_hand);
    const Eigen::Matrix4d oracle =
        e.robot_init.matrix() * A * e.device_init.matrix().inverse() * now.matrix() * A.inverse();
    const Pose out = map_pose(a, {DeviceId::left_hand, now, 0.0, 0});
    EXPECT_LT((out.matrix() - oracle).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Teleop, Equivariance) {
  std::mt19937_64 rng(23);
  for (int i = 0; i < 1000; ++i) {
    const TeleopAnchor a = random_anchor(rng);
    const Pose m1 = random_pose(rng, 0.3);
    const Pose m2 = random_pose(rng, 0.3);
    const Pose w = random_pose(rng);
    const Pose g = random_pose(rng);
    const auto& e = a.entry(DeviceId::head);
    const Pose now = e.device_init * m1;

    // successive motions compose on the robot side
    const Pose lhs = map_pose(a, {DeviceId::head, now * m2, 0.0, 0});
    const Pose rhs = map_pose(a, {DeviceId::head, now, 0.0, 0}) * adapt_motion(a.frame_adapter, m2);
    EXPECT_LT((lhs.matrix() - rhs.matrix()).cwiseAbs().maxCoeff(), 1e-12);

    // moving the whole operator frame changes nothing
    TeleopAnchor moved = a;
    moved.entries[0].device_init = w * e.device_init;
    const Pose shifted = map_pose(moved, {DeviceId::head, w * now, 0.0, 0});
    EXPECT_LT((shifted.matrix() - map_pose(a, {DeviceId::head, now, 0.0, 0}).matrix()).cwiseAbs().maxCoeff(), 1e-12);

    // moving the robot anchor moves the output with it
    TeleopAnchor rebased = a;
    rebased.entries[0].robot_init = g * e.robot_init;
    const Pose rebased_out = map_pose(rebased, {DeviceId::head, now, 0.0, 0});
    EXPECT_LT((rebased_out.matrix() - (g * map_pose(a, {DeviceId::head, now, 0.0, 0})).matrix()).cwiseAbs().maxCoeff(),
              1e-12);
  }
}

TEST(Teleop, UnmapInvertsMap) {
  std::mt19937_64 rng(24);
  for (int i = 0; i < 200; ++i) {
    const TeleopAnchor a = random_anchor(rng);
    const Pose target = random_pose(rng);
    const Pose dev = unmap_pose(a, DeviceId::right_hand, target);
    const Pose back = map_pose(a, {DeviceId::right_hand, dev, 0.0, 0});
    EXPECT_LT((back.matrix() - target.matrix()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Teleop, AdapterTakesOperatorUpToRobotUp) {
  const Quat a = default_frame_adapter();
  EXPECT_LT((a * Vec3::UnitY() - Vec3::UnitZ()).norm(), 1e-15);
  EXPECT_LT((a * Vec3(0, 0, -1) - Vec3::UnitY()).norm(), 1e-15);
}

TEST(Teleop, TriggerMapping) {
  GripperModel g;
  g.open_angle = 0.2;
  g.closed_angle = 1.0;
  bool clamped = true;
  EXPECT_DOUBLE_EQ(trigger_to_gripper(0.0, g, &clamped), 0.2);
  EXPECT_FALSE(clamped);
  EXPECT_DOUBLE_EQ(trigger_to_gripper(0.5, g), 0.6);
  EXPECT_DOUBLE_EQ(trigger_to_gripper(1.7, g, &clamped), 1.0);
  EXPECT_TRUE(clamped);
  EXPECT_DOUBLE_EQ(trigger_to_gripper(-1.0, g), 0.2);
}

TEST(Teleop, AnchorRejectsMissingDevice) {
  const Rig rig = Rig::nominal();
  DeviceFrame f = nominal_device_frame();
  f[2].device = DeviceId::left_hand;
  EXPECT_THROW(anchor_session(f, rig, rig.home()), UserError);
}

TEST(Teleop, PipelineHoldsAtAnchor) {
  const Rig rig = Rig::nominal();
  TeleopPipeline tp(rig);
  EXPECT_THROW(tp.update(nominal_device_frame()), ContractViolation);
  const RigVector q = rig.home();
  tp.anchor(nominal_device_frame(), q);
  const RigVector out = tp.update(nominal_device_frame());
  for (ChainId c : kAllChains) {
    EXPECT_LT(translation_distance(rig.tool(out, c), rig.tool(q, c)), 1e-4);
    EXPECT_LT(rotation_distance(rig.tool(out, c), rig.tool(q, c)), 1e-3);
  }
}

TEST(Teleop, FilterIsExponential) {
  const Rig rig = Rig::nominal();
  TeleopConfig cfg;
  cfg.filter_alpha = 0.8;
  TeleopPipeline tp(rig, cfg);
  const DeviceFrame start = nominal_device_frame();
  tp.anchor(start, rig.home());
  tp.update(start);
  const Vec3 before = tp.filtered_targets()[1].translation();
  DeviceFrame moved = start;
  moved[1].pose = Pose::from_translation(Vec3(0.05, 0, 0)) * start[1].pose;
  tp.update(moved);
  const Vec3 goal = map_pose(tp.current_anchor(), moved[1]).translation();
  const Vec3 after = tp.filtered_targets()[1].translation();
  // one message moves 1 - alpha of the way
  EXPECT_NEAR((goal - before).norm(), 0.05, 1e-12);
  EXPECT_LT((after - (before + 0.2 * (goal - before))).norm(), 1e-12);
  for (int i = 0; i < 200; ++i) tp.update(moved);
  EXPECT_LT((tp.filtered_targets()[1].translation() - goal).norm(), 1e-12);
}

}  // namespace
}  // namespace avsim
