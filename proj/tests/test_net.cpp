#include <thread>

#include <gtest/gtest.h>

#include "avsim/client.hpp"
#include "avsim/episode.hpp"
#include "avsim/error.hpp"
#include "avsim/scripted_operator.hpp"
#include "avsim/server.hpp"
#include "support.hpp"

namespace avsim::net {
namespace {

using std::chrono::milliseconds;

ServerConfig test_config() {
  ServerConfig c;
  c.port = 0;
  c.resolution = 32;
  c.realtime = false;
  return c;
}

// Sends PoseUpdates with strictly increasing timestamps.
struct Operator {
  DeviceFrame frame = nominal_device_frame();
  std::int64_t ts = 1;
  void send(Client& c, const Vec3& right_offset = Vec3::Zero(), double right_trigger = 0.0) {
    DeviceFrame f = frame;
    f[2].pose = Pose::from_translation(right_offset) * f[2].pose;
    f[2].trigger = right_trigger;
    for (auto& d : f) d.timestamp_us = ts;
    ++ts;
    ASSERT_TRUE(c.send(wire::PoseUpdate::from(f)));
  }
};

// Receives until `pred` accepts a message or the timeout passes.
template <typename Pred>
bool wait_for(Client& c, Pred pred, milliseconds timeout = milliseconds(3000)) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    Received r = c.receive(milliseconds(50));
    if (r.status == Received::Status::closed || r.status == Received::Status::error) return false;
    if (r.status == Received::Status::message && pred(*r.message)) return true;
  }
  return false;
}

std::optional<wire::StateUpdate> last_state(Client& c, milliseconds window) {
  std::optional<wire::StateUpdate> last;
  wait_for(
      c,
      [&](const wire::Message& m) {
        if (const auto* s = std::get_if<wire::StateUpdate>(&m)) last = *s;
        return false;
      },
      window);
  return last;
}

TEST(WebSocket, AcceptKeyExample) {
  EXPECT_EQ(websocket_accept_key("dGhlIHNhbXBsZSBub25jZQ=="), "s3pPLMBiTxaQ9kYGzzhZRbK+xOo=");
}

class Serve : public ::testing::TestWithParam<Binding> {};

TEST_P(Serve, HandshakeAnchorAndStream) {
  Server server(test_config());
  server.start();
  wire::Hello hello;
  hello.cameras = CameraSet{CameraId::av_left};
  Client c = Client::connect("127.0.0.1", server.port(), hello, GetParam());
  EXPECT_EQ(c.server_hello().role, "server");
  EXPECT_EQ(c.server_hello().task, "peg_insertion");
  EXPECT_EQ(c.server_hello().seed, 0U);

  Operator op;
  op.send(c);
  ASSERT_TRUE(c.send(wire::AnchorRequest{}));
  std::uint64_t last_step = 0;
  int states = 0;
  int frames = 0;
  bool anchored = false;
  ASSERT_TRUE(wait_for(c, [&](const wire::Message& m) {
    if (const auto* s = std::get_if<wire::StateUpdate>(&m)) {
      EXPECT_GT(s->time_step, last_step);
      last_step = s->time_step;
      anchored = anchored || (s->status & wire::kStatusAnchored);
      EXPECT_EQ(s->stage_flags.size(), 2U);
      ++states;
    } else if (const auto* f = std::get_if<wire::FrameMsg>(&m)) {
      EXPECT_EQ(f->camera, CameraId::av_left);
      EXPECT_EQ(f->width, 32);
      EXPECT_EQ(f->pixels.size(), 32U * 32U);
      ++frames;
    }
    if (states % 5 == 0) op.send(c);
    return states >= 50 && frames >= 10 && anchored;
  }));
  c.close();
}

INSTANTIATE_TEST_SUITE_P(Bindings, Serve, ::testing::Values(Binding::tcp, Binding::websocket),
                         [](const auto& info) { return info.param == Binding::tcp ? "Tcp" : "WebSocket"; });

TEST(Server, RefusesOtherProtocolVersion) {
  Server server(test_config());
  server.start();
  wire::Hello hello;
  hello.protocol_version = 99;
  try {
    Client::connect("127.0.0.1", server.port(), hello);
    FAIL() << "connect succeeded";
  } catch (const UserError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(Server, SessionsAreIsolated) {
  Server server(test_config());
  server.start();
  Client a = Client::connect("127.0.0.1", server.port());
  Client b = Client::connect("127.0.0.1", server.port());
  Operator oa, ob;
  oa.send(a);
  ob.send(b);
  a.send(wire::AnchorRequest{});
  b.send(wire::AnchorRequest{});
  auto is_anchored = [](const wire::Message& m) {
    const auto* s = std::get_if<wire::StateUpdate>(&m);
    return s != nullptr && (s->status & wire::kStatusAnchored) != 0;
  };
  ASSERT_TRUE(wait_for(a, is_anchored));
  ASSERT_TRUE(wait_for(b, is_anchored));
  for (int i = 0; i < 60; ++i) {
    oa.send(a, Vec3(0.0, 0.1, 0.0), 1.0);
    ob.send(b);
    std::this_thread::sleep_for(milliseconds(20));
  }
  const auto sa = last_state(a, milliseconds(300));
  const auto sb = last_state(b, milliseconds(300));
  ASSERT_TRUE(sa && sb);
  const Rig rig = Rig::nominal();
  const RigVector qa = to_rig_vector(sa->qpos);
  const RigVector qb = to_rig_vector(sb->qpos);
  // motion is relative to the anchored device frame, so only its size is predictable here
  EXPECT_GT((rig.tool(qa, ChainId::right).translation() - rig.tool(rig.home(), ChainId::right).translation()).norm(), 0.05);
  EXPECT_GT(qa[13], 0.9 * rig.gripper.closed_angle);
  EXPECT_LT((qb - rig.home()).cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_EQ(server.active_sessions(), 2U);
}

TEST(Server, LatestPoseWins) {
  Server server(test_config());
  server.start();
  Client c = Client::connect("127.0.0.1", server.port());
  Operator op;
  op.send(c);
  c.send(wire::AnchorRequest{});
  std::atomic<bool> run{true};
  std::thread drain([&] {
    while (run) c.receive(milliseconds(20));
  });
  auto t = std::chrono::steady_clock::now();
  for (int i = 0; i < 200; ++i) {
    op.send(c, Vec3(0.0005 * i, 0, 0));
    t += milliseconds(5);
    std::this_thread::sleep_until(t);
  }
  run = false;
  drain.join();
  const auto live = server.live_sessions();
  ASSERT_EQ(live.size(), 1U);
  const SessionStats& s = live[0];
  EXPECT_EQ(s.poses_received, 201U);
  EXPECT_GT(s.poses_overwritten, 100U);
  EXPECT_LE(s.poses_consumed, s.ticks);
  EXPECT_LE(s.poses_consumed + s.poses_overwritten, s.poses_received);
  EXPECT_GE(s.poses_consumed + s.poses_overwritten + 1, s.poses_received);
  EXPECT_LE(s.max_data_queue, test_config().data_queue);
}

TEST(Server, ParkedSessionAnswersProbes) {
  ServerConfig cfg = test_config();
  cfg.park_after = milliseconds(150);
  Server server(cfg);
  server.start();
  Client c = Client::connect("127.0.0.1", server.port());
  Operator op;
  op.send(c);
  c.send(wire::AnchorRequest{});
  ASSERT_TRUE(wait_for(c, [](const wire::Message& m) {
    const auto* s = std::get_if<wire::StateUpdate>(&m);
    return s != nullptr && (s->status & wire::kStatusParked);
  }));
  const ProbeStats p = latency_probe(c, 20, milliseconds(10));
  EXPECT_EQ(p.received, 20);
  EXPECT_TRUE(p.sequence_increasing);
  op.send(c);
  ASSERT_TRUE(wait_for(c, [](const wire::Message& m) {
    const auto* s = std::get_if<wire::StateUpdate>(&m);
    return s != nullptr && !(s->status & wire::kStatusParked);
  }));
}

TEST(Server, RejectsStaleTimestamps) {
  Server server(test_config());
  server.start();
  Client c = Client::connect("127.0.0.1", server.port());
  Operator op;
  op.send(c);
  op.ts = 1;
  op.send(c);
  bool got_error = false;
  wait_for(c, [&](const wire::Message& m) {
    if (const auto* e = std::get_if<wire::Error>(&m)) got_error = e->code == "protocol";
    return got_error;
  });
  EXPECT_TRUE(got_error);
}

TEST(Server, ObserversCannotControl) {
  Server server(test_config());
  server.start();
  wire::Hello hello;
  hello.role = "observer";
  Client c = Client::connect("127.0.0.1", server.port(), hello);
  c.send(wire::AnchorRequest{});
  EXPECT_TRUE(wait_for(c, [](const wire::Message& m) {
    const auto* e = std::get_if<wire::Error>(&m);
    return e != nullptr && e->code == "state";
  }));
}

TEST(Server, RecordsReplayableEpisodes) {
  test::TempDir dir("serve");
  ServerConfig cfg = test_config();
  cfg.dataset_dir = dir.path();
  cfg.record_cameras = CameraSet{CameraId::static_top};
  Server server(cfg);
  server.start();
  Client c = Client::connect("127.0.0.1", server.port());
  Operator op;
  c.send(wire::RecordControl{"stop", {}, {}, {}});
  EXPECT_TRUE(wait_for(c, [](const wire::Message& m) {
    const auto* e = std::get_if<wire::Error>(&m);
    return e != nullptr && e->code == "record";
  }));
  op.send(c);
  c.send(wire::RecordControl{"start", std::string("slot_insertion"), 3, {}});
  ASSERT_TRUE(wait_for(c, [](const wire::Message& m) {
    const auto* r = std::get_if<wire::RecordControl>(&m);
    return r != nullptr && r->action == "started";
  }));
  for (int i = 0; i < 40; ++i) {
    op.send(c, Vec3(0.002 * i, 0, 0.001 * i), i > 20 ? 1.0 : 0.0);
    std::this_thread::sleep_for(milliseconds(20));
  }
  c.send(wire::RecordControl{"stop", {}, {}, {}});
  std::string name;
  ASSERT_TRUE(wait_for(c, [&](const wire::Message& m) {
    const auto* r = std::get_if<wire::RecordControl>(&m);
    if (r != nullptr && r->action == "stopped") name = r->episode.value_or("");
    return !name.empty();
  }));
  const Episode ep = load_episode(dir / name);
  EXPECT_EQ(ep.manifest.task, TaskId::slot_insertion);
  EXPECT_EQ(ep.manifest.seed, 3U);
  EXPECT_GT(ep.steps.size(), 30U);
  EXPECT_TRUE(replay(ep, Rig::nominal()).consistent());
}

TEST(Server, ConfigMergeAndPortEnv) {
  const ServerConfig c = merge_server_config({{"port", 9000}, {"task", "thread_needle"}, {"frame_every", 3}});
  EXPECT_EQ(c.port, 9000);
  EXPECT_EQ(c.task, TaskId::thread_needle);
  EXPECT_EQ(c.frame_every, 3);
  EXPECT_THROW(merge_server_config({{"frame_every", 0}}), UserError);
  ::setenv("AVSIM_PORT", "4321", 1);
  EXPECT_EQ(port_from_env(7878), 4321);
  ::setenv("AVSIM_PORT", "nope", 1);
  EXPECT_THROW(port_from_env(7878), UserError);
  ::unsetenv("AVSIM_PORT");
  EXPECT_EQ(port_from_env(7878), 7878);
}

}  // namespace
}  // namespace avsim::net
