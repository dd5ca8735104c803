#include <cstring>

#include <gtest/gtest.h>

#include "avsim/demonstration.hpp"
#include "avsim/episode.hpp"
#include "avsim/error.hpp"
#include "support.hpp"

namespace avsim {
namespace {

std::uint32_t u32_at(const std::vector<std::uint8_t>& b, std::size_t off) {
  return static_cast<std::uint32_t>(b[off]) | static_cast<std::uint32_t>(b[off + 1]) << 8 |
         static_cast<std::uint32_t>(b[off + 2]) << 16 | static_cast<std::uint32_t>(b[off + 3]) << 24;
}

DemoOptions small_options() {
  DemoOptions o;
  o.op.noise_std = 0.0;
  o.cameras = CameraSet::parse("static_top,av_left");
  o.camera_rig = CameraRig::nominal(24);
  return o;
}

class EpisodeStore : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    rig_ = new Rig(Rig::nominal());
    task_ = new TaskSpec(make_task(TaskId::peg_insertion));
    episode_ = new Episode(record_in_memory(*task_, *rig_, 4, small_options()));
  }
  static void TearDownTestSuite() {
    delete episode_;
    delete task_;
    delete rig_;
  }
  static Rig* rig_;
  static TaskSpec* task_;
  static Episode* episode_;
};

Rig* EpisodeStore::rig_ = nullptr;
TaskSpec* EpisodeStore::task_ = nullptr;
Episode* EpisodeStore::episode_ = nullptr;

TEST_F(EpisodeStore, LayoutMatchesFormat) {
  const Episode& ep = *episode_;
  const auto bytes = serialize(ep);
  const std::size_t objects = ep.manifest.object_ids.size();
  const std::size_t frames = 2 * 24 * 24;
  const std::size_t width = 4 + 21 * 4 + 21 * 4 + objects * 7 * 4 + frames + 4;
  ASSERT_EQ(bytes.size(), 16 + 8192 + ep.steps.size() * width + 16);
  EXPECT_EQ(episode_file_size(ep.manifest, ep.steps.size()), bytes.size());
  EXPECT_EQ(std::memcmp(bytes.data(), "AVEP", 4), 0);
  EXPECT_EQ(u32_at(bytes, 4), 1U);
  EXPECT_EQ(u32_at(bytes, 8), 8192U);

  const std::string manifest(bytes.begin() + 16, bytes.begin() + 16 + 8192);
  const auto end = manifest.find_last_not_of(' ');
  const auto j = nlohmann::json::parse(manifest.substr(0, end + 1));
  EXPECT_EQ(j.at("task"), "peg_insertion");
  EXPECT_EQ(j.at("step_count"), ep.steps.size());
  EXPECT_EQ(j.at("rate_hz"), 50);

  const std::size_t records = 16 + 8192;
  for (std::size_t k = 0; k < ep.steps.size(); ++k) {
    const std::size_t off = records + k * width;
    EXPECT_EQ(u32_at(bytes, off), k);
    EXPECT_EQ(u32_at(bytes, off + width - 4), test::crc32_bitwise(bytes.data() + off, width - 4));
  }
  const std::size_t footer = bytes.size() - 16;
  EXPECT_EQ(std::memcmp(bytes.data() + footer, "AVFT", 4), 0);
  EXPECT_EQ(u32_at(bytes, footer + 4), ep.steps.size());
  EXPECT_EQ(u32_at(bytes, footer + 8), test::crc32_bitwise(bytes.data() + records, footer - records));
}

TEST_F(EpisodeStore, RoundTripsInMemoryAndOnDisk) {
  const Episode& ep = *episode_;
  EXPECT_EQ(deserialize(serialize(ep)), ep);
  test::TempDir dir("ep");
  record_episode(dir / "streamed.avep", *task_, *rig_, 4, small_options());
  save_episode(ep, dir / "saved.avep");
  EXPECT_TRUE(test::same_bytes(dir / "streamed.avep", dir / "saved.avep"));
  EXPECT_EQ(load_episode(dir / "streamed.avep"), ep);
  EXPECT_EQ(read_manifest(dir / "streamed.avep"), ep.manifest);
  std::size_t visited = 0;
  for_each_record(dir / "saved.avep", [&](const EpisodeManifest&, const StepRecord& r) {
    EXPECT_EQ(r, ep.steps[visited]);
    ++visited;
  });
  EXPECT_EQ(visited, ep.steps.size());
}

TEST_F(EpisodeStore, ReplayIsExact) {
  const ReplayReport r = replay(*episode_, *rig_);
  EXPECT_TRUE(r.consistent());
  EXPECT_EQ(r.steps_checked, episode_->steps.size());
}

TEST_F(EpisodeStore, BitFlipIsLocated) {
  auto bytes = serialize(*episode_);
  const std::size_t width = episode_->manifest.record_width();
  const std::size_t k = 17;
  bytes[16 + 8192 + k * width + 30] ^= 0x04;
  EXPECT_THROW(deserialize(bytes), UserError);
  LoadReport rep;
  const Episode damaged = deserialize(bytes, LoadMode::lenient, &rep);
  EXPECT_EQ(rep.first_bad_record, static_cast<std::int64_t>(k));
  EXPECT_FALSE(rep.problem.empty());
  const ReplayReport r = replay(damaged, *rig_, false, &rep);
  ASSERT_TRUE(r.first_divergence);
  EXPECT_EQ(r.first_divergence->step, k);
  EXPECT_EQ(r.first_divergence->field, "checksum");
}

TEST_F(EpisodeStore, AlteredStateDiverges) {
  Episode ep = *episode_;
  ep.steps[40].qpos[3] += 1e-3F;
  const ReplayReport r = replay(ep, *rig_);
  ASSERT_TRUE(r.first_divergence);
  EXPECT_EQ(r.first_divergence->step, 40U);
  EXPECT_EQ(r.first_divergence->field, "qpos");
  EXPECT_EQ(r.first_divergence->index, 3);
}

TEST_F(EpisodeStore, MissingFooterIsNotFinalized) {
  auto bytes = serialize(*episode_);
  bytes.resize(bytes.size() - 16);
  EXPECT_THROW(deserialize(bytes), UserError);
  LoadReport rep;
  const Episode partial = deserialize(bytes, LoadMode::lenient, &rep);
  EXPECT_FALSE(rep.finalized);
  EXPECT_EQ(partial.steps.size(), episode_->steps.size());
}

TEST_F(EpisodeStore, ReplayRefusesOtherChains) {
  Rig other = *rig_;
  other.av.joints[0].limit_hi -= 0.1;
  EXPECT_THROW(replay(*episode_, other), UserError);
}

TEST_F(EpisodeStore, SlicePreservesNonFrameBytes) {
  const Episode sliced = slice_cameras(*episode_, CameraSet{CameraId::av_left});
  const auto a = serialize(*episode_);
  const auto b = serialize(sliced);
  const std::size_t wa = episode_->manifest.record_width();
  const std::size_t wb = sliced.manifest.record_width();
  const std::size_t prefix = 4 + 21 * 4 * 2 + episode_->manifest.object_ids.size() * 28;
  const std::size_t frame = 24 * 24;
  for (std::size_t k = 0; k < episode_->steps.size(); ++k) {
    const auto* ra = a.data() + 16 + 8192 + k * wa;
    const auto* rb = b.data() + 16 + 8192 + k * wb;
    EXPECT_EQ(std::memcmp(ra, rb, prefix), 0);
    EXPECT_EQ(std::memcmp(ra + prefix + frame, rb + prefix, frame), 0);
  }
  EXPECT_THROW(slice_cameras(sliced, CameraSet::all()), UserError);
  EXPECT_TRUE(replay(sliced, *rig_).consistent());
}

TEST_F(EpisodeStore, RerenderReproducesFrames) {
  EXPECT_EQ(rerender(*episode_, *rig_, episode_->manifest.camera_set, true), *episode_);
  const Episode hidden = rerender(*episode_, *rig_, CameraSet::statics(), false);
  EXPECT_FALSE(hidden.manifest.av_arm_present);
  EXPECT_EQ(hidden.manifest.camera_set, CameraSet::statics());
  EXPECT_EQ(hidden.steps.size(), episode_->steps.size());
}

TEST(EpisodeManifest, RejectsForeignFiles) {
  std::vector<std::uint8_t> junk(10000, 'x');
  EXPECT_THROW(deserialize(junk), UserError);
  LoadReport rep;
  EXPECT_THROW(deserialize(junk, LoadMode::lenient, &rep), UserError);
}

}  // namespace
}  // namespace avsim
