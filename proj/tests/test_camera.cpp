#include <gtest/gtest.h>

#include "avsim/camera.hpp"
#include "avsim/demonstration.hpp"
#include "avsim/error.hpp"
#include "avsim/image_io.hpp"
#include "support.hpp"

namespace avsim {
namespace {

TEST(CameraSet, ParseAndOrder) {
  EXPECT_EQ(CameraSet::parse("all"), CameraSet::all());
  EXPECT_EQ(CameraSet::parse("av_right,static_top"), (CameraSet{CameraId::static_top, CameraId::av_right}));
  EXPECT_EQ(CameraSet::parse("av+wrist"), CameraSet::av() | CameraSet::wrist());
  EXPECT_THROW(CameraSet::parse("fisheye"), UserError);
  const CameraSet s = CameraSet::parse("av_left,static_low");
  EXPECT_EQ(s.index_of(CameraId::static_low), 0);
  EXPECT_EQ(s.index_of(CameraId::av_left), 1);
  EXPECT_EQ(s.index_of(CameraId::wrist_left), -1);
  EXPECT_EQ((CameraSet::all() - CameraSet::av()).size(), 4);
}

TEST(CameraSet, SevenConfigurations) {
  const auto configs = camera_configurations();
  ASSERT_EQ(configs.size(), 7U);
  std::set<std::uint8_t> bits;
  for (CameraSet c : configs) bits.insert(c.bits());
  EXPECT_EQ(bits.size(), 7U);
  const std::vector<std::string> labels = {"AV",     "AV + Static",    "AV + Wrist", "AV + Static + Wrist",
                                            "Static", "Static + Wrist", "Wrist"};
  for (std::size_t i = 0; i < configs.size(); ++i) EXPECT_EQ(configs[i].label(), labels[i]);
}

TEST(Camera, PinholeProjection) {
  const Intrinsics k = Intrinsics::square(96);
  const Pose cam = Pose::look_at(Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3::UnitZ());
  const Vec3 local(0.1, -0.05, 0.8);
  const Projection p = project(cam * local, cam, k);
  ASSERT_TRUE(p.valid);
  EXPECT_NEAR(p.u, k.cx + k.fx * local.x() / local.z(), 1e-12);
  EXPECT_NEAR(p.v, k.cy + k.fy * local.y() / local.z(), 1e-12);
  EXPECT_NEAR(p.depth, 0.8, 1e-12);
  EXPECT_FALSE(project(cam * Vec3(0, 0, -1), cam, k).valid);
}

TEST(Camera, StereoDisparityLaw) {
  const Rig rig = Rig::nominal();
  const CameraRig cams = CameraRig::nominal();
  for (double z : {0.2, 0.35, 0.5, 0.8, 1.2}) {
    const auto s = test::measure_disparity(rig, cams, z);
    EXPECT_GT(s.left_pixels, 20);
    EXPECT_GT(s.right_pixels, 20);
    EXPECT_NEAR(s.measured, s.expected, 0.5) << "z=" << z;
  }
}

TEST(Camera, ShadingFallsWithDistance) {
  CameraModel m;
  m.intrinsics = Intrinsics::square(32);
  const Pose pose = Pose::look_at(Vec3::Zero(), Vec3(0, 0, 1), Vec3::UnitY());
  auto center_value = [&](double d) {
    const RenderScene scene{Primitive{PrimSphere{Vec3(0, 0, d + 0.05), 0.05}, Owner::object, -1}};
    return render(scene, m, pose).at(16, 16);
  };
  EXPECT_NEAR(center_value(1.0), 255.0 / 2.0, 1.0);
  EXPECT_NEAR(center_value(3.0), 255.0 / 4.0, 1.0);
  const Frame empty = render({}, m, pose);
  EXPECT_EQ(std::count(empty.pixels.begin(), empty.pixels.end(), 0), 32 * 32);
}

TEST(Camera, HidingAvArmMatchesSceneWithoutIt) {
  const Rig rig = Rig::nominal();
  const CameraRig cams = CameraRig::nominal();
  const TaskSpec task = make_task(TaskId::thread_needle);
  const SimState s = reset(task, rig, 0);
  for (CameraId id : CameraSet::statics().ids()) {
    const Frame hidden = render_camera(s, rig, cams, id, false);
    EXPECT_EQ(hidden.pixels, test::render_without_av_arm(s, rig, cams, id).pixels);
  }
}

TEST(Camera, DownsampleAverages) {
  Frame f;
  f.width = 4;
  f.height = 4;
  f.pixels = {0, 0, 100, 100, 0, 0, 100, 100, 50, 50, 200, 200, 50, 50, 200, 200};
  EXPECT_EQ(downsample(f, 2, 2), (std::vector<std::uint8_t>{0, 100, 50, 200}));
}

TEST(ImageIo, WritesPngAndPgm) {
  test::TempDir dir("img");
  Frame f;
  f.width = 3;
  f.height = 2;
  f.pixels = {0, 1, 2, 3, 4, 5};
  write_image(f, dir / "a.png");
  write_image(f, dir / "a.pgm");
  const auto png = test::read_bytes(dir / "a.png");
  ASSERT_GE(png.size(), 8U);
  EXPECT_EQ(png[1], 'P');
  EXPECT_EQ(png[2], 'N');
  const auto pgm = test::read_bytes(dir / "a.pgm");
  const std::string head(pgm.begin(), pgm.begin() + 11);
  EXPECT_EQ(head, "P5\n3 2\n255\n");
  EXPECT_EQ(std::vector<std::uint8_t>(pgm.end() - 6, pgm.end()), f.pixels);
  EXPECT_THROW(write_image(f, dir / "a.bmp"), UserError);
}

}  // namespace
}  // namespace avsim
