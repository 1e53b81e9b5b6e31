#include "support.hpp"

#include "cathtrack/server.hpp"
#include "cathtrack/ws_client.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <fstream>
#include <map>

using namespace cathtrack;
namespace ct = cathtrack::testing;
using namespace std::chrono_literals;
using steady = std::chrono::steady_clock;

namespace {

TwinConfig quick_config(bool vision = false) {
  TwinConfig cfg;
  cfg.vision = vision;
  return cfg;
}

ControlMessage roll_control(double rate, std::int64_t duration_ms, std::int64_t id = 0) {
  ControlMessage c;
  c.kind = ControlKind::Control;
  c.rates.roll_deg_s = rate;
  c.duration_ms = duration_ms;
  c.id = id;
  return c;
}

ControlMessage session(const std::string& action) {
  ControlMessage c;
  c.kind = ControlKind::Session;
  c.action = action;
  return c;
}

FrameMessage next_frame(WsClient& c, std::chrono::milliseconds timeout = 3s) {
  auto text = c.read(timeout);
  if (!text) throw std::runtime_error("no frame within timeout");
  return decode_frame(*text);
}

// Frames received during `window`. Reads never time out here, since a
// timed-out client is unusable; the frame straddling the end is not counted.
int count_frames(WsClient& c, std::chrono::milliseconds window) {
  const auto end = steady::now() + window;
  int n = 0;
  while (c.read(3s)) {
    if (steady::now() >= end) break;
    ++n;
  }
  return n;
}

class ServerTest : public ::testing::Test {
 protected:
  void start(TwinConfig cfg = quick_config(), ServerOptions opt = {}) {
    opt.port = 0;
    server_ = std::make_unique<StreamServer>(std::move(cfg), std::move(opt));
    server_->start();
  }
  unsigned short port() const { return server_->port(); }
  std::unique_ptr<StreamServer> server_;
};

}  // namespace

// --- the twin on its own -------------------------------------------------------

TEST(Twin, DeterministicFramesWithVision) {
  auto run = [] {
    Twin t(quick_config(true));
    t.apply(roll_control(20, 1000));
    std::vector<std::string> out;
    for (int i = 0; i < 5; ++i) out.push_back(encode_frame(t.tick()));
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Twin, VisionTrackFollowsTruth) {
  auto cfg = quick_config(true);
  cfg.initial = {80.0, 40.0, 30.0, 0.0};
  Twin t(cfg);
  ControlMessage c;
  c.rates = {5.0, 20.0, -10.0, 15.0};
  t.apply(c);
  for (int i = 0; i < 15; ++i) {
    const auto m = t.tick();
    ASSERT_EQ(m.status, TrackStatus::Ok);
    const auto curve = forward_kinematics(t.state(), cfg.catheter);
    EXPECT_LT((m.points.front() - curve.tip()).norm(), 1.5) << "tick " << i;
  }
}

TEST(Twin, ClosedLoopRollReturnsToZero) {
  Twin t(quick_config());
  t.apply(roll_control(36.0, 10'000));
  FrameMessage last;
  for (int i = 0; i < 330; ++i) last = t.tick();
  EXPECT_EQ(t.rates(), ControlRates{});
  EXPECT_LE(std::abs(wrap_deg(last.roll_deg)), RollCalibration{}.quantum_deg());
  EXPECT_NEAR(std::abs(wrap_deg(t.state().roll_deg)), 0.0, 1e-6);
}

TEST(Twin, MeasuredRollTracksStateWithinOneQuantum) {
  Twin t(quick_config());
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> rate(-200.0, 200.0);
  for (int seg = 0; seg < 20; ++seg) {
    t.apply(roll_control(rate(rng), 300));
    for (int i = 0; i < 10; ++i) {
      const auto m = t.tick();
      ASSERT_LE(std::abs(wrap_deg(m.roll_deg - t.state().roll_deg)), RollCalibration{}.quantum_deg() + 1e-9);
    }
  }
}

TEST(Twin, DurationRevertsRates) {
  Twin t(quick_config());
  ControlMessage c;
  c.rates.insertion_mm_s = 15.0;
  c.duration_ms = 1000;
  t.apply(c);
  for (int i = 0; i < 60; ++i) t.tick();
  EXPECT_NEAR(t.state().insertion_mm, 60.0 + 15.0, 1e-9);
  EXPECT_EQ(t.rates(), ControlRates{});
}

TEST(Twin, AckIsNewestAppliedId) {
  Twin t(quick_config());
  EXPECT_EQ(t.tick().ack, 0);
  t.apply(roll_control(1, 10, 5));
  t.apply(roll_control(1, 10, 3));
  EXPECT_EQ(t.tick().ack, 5);
}

TEST(Twin, SeqAndTimestampsAdvanceByOnePeriod) {
  Twin t(quick_config());
  for (std::uint64_t i = 1; i <= 90; ++i) {
    const auto m = t.tick();
    ASSERT_EQ(m.seq, i);
    ASSERT_EQ(m.timestamp_ms, std::llround(i * 1000.0 / 30.0));
    ASSERT_EQ(m.points.size(), 20u);
  }
}

TEST(Twin, RegistrationCarriesTrackAndBeam) {
  auto cfg = quick_config();
  cfg.initial = {70.0, 50.0, 20.0, 30.0};
  const Vec3 shift(10, -5, 2);
  cfg.registration = AffineTransform::translate(shift);
  Twin moved(cfg);
  cfg.registration = AffineTransform::identity();
  Twin plain(cfg);
  const auto a = moved.tick(), b = plain.tick();
  ASSERT_EQ(a.points.size(), b.points.size());
  for (std::size_t i = 0; i < a.points.size(); ++i) EXPECT_LT((a.points[i] - (b.points[i] + shift)).norm(), 1e-9);
  ASSERT_TRUE(a.beam && b.beam);
  for (int v = 0; v < 4; ++v) EXPECT_LT((a.beam->vertices[v] - (b.beam->vertices[v] + shift)).norm(), 1e-9);
}

TEST(Twin, SessionReachesTargetsAtBeamEnds) {
  // Targets placed where the beam ends for a scripted sequence of poses.
  auto cfg = quick_config();
  cfg.scene.session = {100.0, 0.0};
  std::vector<CatheterState> poses = {{60, 0, 0, 0}, {75, 30, 0, 0}, {90, 30, 40, 90}};
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const auto tr = truth_track(forward_kinematics(poses[i], cfg.catheter), 20, poses[i].roll_deg, 0);
    cfg.scene.targets.push_back({"P" + std::to_string(i), beam_geometry(tr, cfg.scene.beam).beam_end, 2.0});
  }
  Twin t(cfg);
  t.apply(session("start"));
  for (const auto& pose : poses) {
    // One second at constant rates lands exactly on the pose, then hold.
    const auto& from = t.state();
    ControlMessage c;
    c.rates = {pose.insertion_mm - from.insertion_mm, pose.knob1_deg - from.knob1_deg,
               pose.knob2_deg - from.knob2_deg, wrap_deg(pose.roll_deg - from.roll_deg)};
    c.duration_ms = 1000;
    t.apply(c);
    for (int i = 0; i < 30 + 6; ++i) t.tick();
  }
  const auto& m = t.session().metrics();
  EXPECT_EQ(m.nT, 3);
  EXPECT_TRUE(m.finished);
  ASSERT_TRUE(m.tT_s);
  EXPECT_EQ(*m.tT_s, m.t_s / 3);
  const auto events = t.drain_events();
  ASSERT_FALSE(events.empty());
  EXPECT_EQ(events.back()["event"], "final");
}

TEST(Twin, ModeSwitchIsLoggedAndEchoed) {
  Twin t(quick_config());
  ControlMessage c;
  c.kind = ControlKind::Mode;
  c.view = ViewMode::TwoD;
  t.apply(c);
  EXPECT_EQ(t.tick().mode, "2D");
  const auto ev = t.drain_events();
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0]["view"], "2D");
}

TEST(Twin, RejectsBadConfig) {
  auto cfg = quick_config();
  cfg.rate_hz = 0;
  EXPECT_THROW(Twin{cfg}, ConfigError);
  cfg = quick_config();
  cfg.initial.insertion_mm = -1;
  EXPECT_THROW(Twin{cfg}, InvalidStateError);
}

// --- the live server -------------------------------------------------------------

TEST_F(ServerTest, ClientReceivesGapFreeFrames) {
  start();
  WsClient c("127.0.0.1", port());
  c.send(encode_control(session("start")));
  auto prev = next_frame(c);
  for (int i = 0; i < 60; ++i) {
    const auto m = next_frame(c);
    ASSERT_EQ(m.seq, prev.seq + 1);
    ASSERT_GT(m.timestamp_ms, prev.timestamp_ms);
    ASSERT_EQ(m.points.size(), prev.points.size());
    prev = m;
  }
}

TEST_F(ServerTest, TwoClientsSeeIdenticalStreams) {
  start();
  WsClient a("127.0.0.1", port()), b("127.0.0.1", port());
  std::map<std::uint64_t, std::string> fa, fb;
  for (int i = 0; i < 45; ++i) {
    auto x = a.read(3s), y = b.read(3s);
    ASSERT_TRUE(x && y);
    fa[decode_frame(*x).seq] = *x;
    fb[decode_frame(*y).seq] = *y;
  }
  int common = 0;
  for (const auto& [seq, text] : fa)
    if (auto it = fb.find(seq); it != fb.end()) {
      EXPECT_EQ(it->second, text) << "seq " << seq;
      ++common;
    }
  EXPECT_GE(common, 40);
}

TEST_F(ServerTest, StalledClientDoesNotSlowOthers) {
  ServerOptions opt;
  opt.send_buffer_bytes = 4096;
  start(quick_config(), opt);
  WsClient fast("127.0.0.1", port());
  next_frame(fast);
  const int baseline = count_frames(fast, 3s);

  WsClient stalled("127.0.0.1", port(), 4096);  // never read
  const int loaded = count_frames(fast, 3s);
  const double change = std::abs(loaded - baseline) / static_cast<double>(baseline);
  EXPECT_LE(change, 0.10) << "baseline " << baseline << " with stall " << loaded;
  EXPECT_GE(baseline, 80);

  const auto deadline = steady::now() + 5s;
  while (server_->stats().clients_dropped == 0 && steady::now() < deadline) std::this_thread::sleep_for(50ms);
  EXPECT_EQ(server_->stats().clients_dropped, 1u);
  EXPECT_TRUE(next_frame(fast).seq > 0);
}

TEST_F(ServerTest, ClosedLoopRollOverTheWire) {
  start();
  WsClient c("127.0.0.1", port());
  c.send(encode_control(roll_control(36.0, 10'000, 1)));
  FrameMessage m = next_frame(c);
  while (m.ack < 1) m = next_frame(c);
  bool moved = false;
  // 10 s of rotation plus a margin once the rates have reverted.
  const auto end = steady::now() + 11s;
  while (steady::now() < end) {
    m = next_frame(c);
    moved = moved || std::abs(m.roll_deg) > 90.0;
  }
  EXPECT_TRUE(moved);
  EXPECT_LE(std::abs(wrap_deg(m.roll_deg)), RollCalibration{}.quantum_deg());
}

TEST_F(ServerTest, ControlReflectedWithinTwoFramePeriods) {
  start();
  WsClient c("127.0.0.1", port());
  next_frame(c);
  const auto period = std::chrono::duration<double, std::milli>(1000.0 / server_->rate_hz());
  double worst_ms = 0.0;
  for (int i = 1; i <= 20; ++i) {
    const auto before = next_frame(c);
    const auto sent = steady::now();
    c.send(encode_control(roll_control(i % 2 ? 90.0 : -90.0, 100, i)));
    FrameMessage m;
    do m = next_frame(c);
    while (m.ack < i);
    worst_ms = std::max(worst_ms, std::chrono::duration<double, std::milli>(steady::now() - sent).count());
    EXPECT_NE(m.roll_deg, before.roll_deg);
  }
  EXPECT_LE(worst_ms, 2.0 * period.count());
}

TEST_F(ServerTest, ProtocolErrorClosesOnlyThatClient) {
  start();
  WsClient bad("127.0.0.1", port()), good("127.0.0.1", port());
  next_frame(good);
  bad.send(R"({"type": "zoom"})");
  std::optional<std::string> got;
  do got = bad.read(3s);
  while (got);
  EXPECT_EQ(bad.close_reason().code, boost::beast::websocket::close_code::policy_error);
  EXPECT_NE(std::string(bad.close_reason().reason.data(), bad.close_reason().reason.size()).find("zoom"), std::string::npos);
  for (int i = 0; i < 10; ++i) next_frame(good);
  EXPECT_EQ(server_->stats().protocol_errors, 1u);
  EXPECT_EQ(server_->stats().clients_connected, 1u);
}

TEST_F(ServerTest, HttpEndpoints) {
  ServerOptions opt;
  opt.scene_json = R"({"targets": []})";
  opt.mesh_text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n";
  start(quick_config(), opt);
  auto r = http_get("127.0.0.1", port(), "/scene.json");
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(r.content_type, "application/json");
  EXPECT_EQ(r.body, opt.scene_json);
  r = http_get("127.0.0.1", port(), "/mesh");
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(r.body, opt.mesh_text);
  std::this_thread::sleep_for(200ms);
  r = http_get("127.0.0.1", port(), "/stats");
  EXPECT_EQ(r.status, 200);
  EXPECT_GT(nlohmann::json::parse(r.body)["frames"].get<int>(), 0);
  EXPECT_EQ(http_get("127.0.0.1", port(), "/nope").status, 404);
}

TEST_F(ServerTest, SessionEventsReachTheLog) {
  ct::TempDir dir;
  ServerOptions opt;
  opt.log_path = (dir / "session.jsonl").string();
  auto cfg = quick_config();
  cfg.scene.targets = {{"far", Vec3(500, 500, 500), 1.0}};
  start(cfg, opt);
  WsClient c("127.0.0.1", port());
  c.send(encode_control(session("start")));
  ControlMessage mode;
  mode.kind = ControlKind::Mode;
  mode.view = ViewMode::TwoD;
  c.send(encode_control(mode));
  FrameMessage m = next_frame(c);
  while (m.mode != "2D" || !m.metrics.running) m = next_frame(c);
  server_->stop();
  std::ifstream in(opt.log_path);
  const auto replay = replay_session_log(in);
  EXPECT_TRUE(replay.metrics.running);
  EXPECT_EQ(replay.metrics.total, 1);
  ASSERT_EQ(replay.modes.size(), 1u);
  EXPECT_EQ(replay.modes[0].second, ViewMode::TwoD);
}

TEST(Server, BindFailureIsReported) {
  ServerOptions any;
  any.port = 0;
  StreamServer first(quick_config(), any);
  first.start();
  ServerOptions clash;
  clash.port = first.port();
  clash.bind_address = "127.0.0.1";
  StreamServer second(quick_config(), clash);
  // reuse_address does not allow two listeners on one port.
  EXPECT_THROW(second.start(), IoError);
  ServerOptions bad;
  bad.bind_address = "not-an-ip";
  StreamServer third(quick_config(), bad);
  EXPECT_THROW(third.start(), IoError);
}
