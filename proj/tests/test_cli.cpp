#include "support.hpp"

#include "cathtrack/ws_client.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <regex>
#include <sstream>

using namespace cathtrack;
namespace ct = cathtrack::testing;
namespace fs = std::filesystem;

namespace {

struct Run {
  int rc = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string asset(const std::string& name) { return ct::source_dir() + "/assets/" + name; }

Run cli(const std::string& args) {
  static int counter = 0;
  const auto base = fs::temp_directory_path() / ("cathtrack-cli-" + std::to_string(::getpid()) + "-" + std::to_string(++counter));
  const std::string cmd = std::string(CATHTRACK_CLI) + " " + args + " >" + base.string() + ".out 2>" + base.string() + ".err";
  const int status = std::system(cmd.c_str());
  Run r;
  r.rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(base.string() + ".out");
  r.err = slurp(base.string() + ".err");
  fs::remove(base.string() + ".out");
  fs::remove(base.string() + ".err");
  return r;
}

int lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

void expect_one_line_failure(const Run& r) {
  EXPECT_NE(r.rc, 0);
  EXPECT_EQ(lines(r.err), 1) << r.err;
  EXPECT_EQ(r.err.rfind("cathtrack: error: ", 0), 0u) << r.err;
}

std::map<std::string, std::string> dir_bytes(const fs::path& dir) {
  std::map<std::string, std::string> m;
  for (const auto& e : fs::directory_iterator(dir)) m[e.path().filename().string()] = slurp(e.path());
  return m;
}

}  // namespace

TEST(Cli, NoSubcommandIsUsageError) { expect_one_line_failure(cli("")); }

TEST(Cli, UnknownFlagIsUsageError) {
  const auto r = cli("bench --speed 11");
  expect_one_line_failure(r);
  EXPECT_EQ(r.rc, 2);
}

TEST(Cli, HelpSucceeds) {
  const auto r = cli("--help");
  EXPECT_EQ(r.rc, 0);
  for (const char* sub : {"simulate", "track", "serve", "bench", "calibrate"})
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
}

TEST(CliBench, ZeroFramesRejected) { expect_one_line_failure(cli("bench --frames 0")); }

TEST(CliBench, JsonListsEveryStage) {
  const auto r = cli("bench --frames 5 --json");
  ASSERT_EQ(r.rc, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["frames"], 5);
  EXPECT_EQ(j["width"], 640);
  EXPECT_EQ(j["height"], 480);
  ASSERT_EQ(j["stages"].size(), kBenchStages.size());
  for (std::size_t i = 0; i < kBenchStages.size(); ++i) EXPECT_EQ(j["stages"][i]["stage"], kBenchStages[i]);
  EXPECT_GT(j["frames_per_s"].get<double>(), 0.0);
}

TEST(CliBench, TableHasStagesAndTotals) {
  const auto r = cli("bench --frames 3");
  ASSERT_EQ(r.rc, 0) << r.err;
  for (const char* stage : kBenchStages) EXPECT_NE(r.out.find(stage), std::string::npos) << stage;
  EXPECT_TRUE(std::regex_search(r.out, std::regex(R"(\ntotal +[0-9.]+\n)")));
  EXPECT_TRUE(std::regex_search(r.out, std::regex(R"(frames_per_s [0-9.]+)")));
}

TEST(CliSimulate, ProfileGivesOneFramePerState) {
  ct::TempDir dir;
  const auto r = cli("simulate -o " + (dir / "seq").string() + " --states " + asset("profile.jsonl"));
  ASSERT_EQ(r.rc, 0) << r.err;
  const auto seq = open_sequence(dir / "seq");
  EXPECT_EQ(seq.entries.size(), 30u);
  EXPECT_EQ(load_truth(dir / "seq" / "truth.jsonl").size(), 30u);
}

TEST(CliSimulate, FixedSeedIsBitIdentical) {
  ct::TempDir dir;
  for (const char* name : {"a", "b"}) {
    const auto r = cli("simulate -n 6 --seed 42 --noise harsh -o " + (dir / name).string());
    ASSERT_EQ(r.rc, 0) << r.err;
  }
  const auto a = dir_bytes(dir / "a"), b = dir_bytes(dir / "b");
  EXPECT_EQ(a.size(), 6u * 2 + 4);
  EXPECT_TRUE(a == b);
  ASSERT_EQ(cli("simulate -n 6 --seed 43 --noise harsh -o " + (dir / "c").string()).rc, 0);
  EXPECT_FALSE(a == dir_bytes(dir / "c"));
}

TEST(CliSimulate, BadProfileLine) {
  ct::TempDir dir;
  std::ofstream(dir / "bad.jsonl") << "{\"insertion_mm\": 50}\n";
  expect_one_line_failure(cli("simulate -o " + (dir / "s").string() + " --states " + (dir / "bad.jsonl").string()));
  std::ofstream(dir / "range.jsonl") << R"({"insertion_mm": 500, "knob1_deg": 0, "knob2_deg": 0, "roll_deg": 0})" << "\n";
  expect_one_line_failure(cli("simulate -o " + (dir / "s").string() + " --states " + (dir / "range.jsonl").string()));
}

TEST(CliTrack, NoiselessSequenceUnderOneMillimetre) {
  ct::TempDir dir;
  ASSERT_EQ(cli("simulate -n 40 --seed 7 -o " + (dir / "seq").string()).rc, 0);
  const auto r = cli("track " + (dir / "seq").string() + " --report " + (dir / "rep.json").string());
  ASSERT_EQ(r.rc, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["frames"], 40);
  EXPECT_EQ(j["tracked"], 40);
  EXPECT_LT(j["mean_tip_mm"].get<double>(), 1.0);
  EXPECT_LT(j["mean_rms_mm"].get<double>(), 2.0);
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "rep.json")), j);
}

// The report's error agrees with an error computed here from the written tracks.
TEST(CliTrack, ReportMatchesSidecarOracle) {
  ct::TempDir dir;
  ASSERT_EQ(cli("simulate -n 12 --seed 3 -o " + (dir / "seq").string()).rc, 0);
  const auto r = cli("track " + (dir / "seq").string() + " --out " + (dir / "tracks.jsonl").string());
  ASSERT_EQ(r.rc, 0) << r.err;
  const auto truth = load_truth(dir / "seq" / "truth.jsonl");
  std::ifstream in(dir / "tracks.jsonl");
  std::string line;
  double sum_tip = 0, max_tip = 0, sum_rms = 0;
  std::size_t i = 0;
  for (; std::getline(in, line); ++i) {
    const auto t = track_from_json(nlohmann::json::parse(line));
    ASSERT_EQ(t.timestamp_ms, truth[i].timestamp_ms);
    const auto e = ct::track_error(t, truth[i].points);
    sum_tip += e.tip_mm;
    sum_rms += e.rms_mm;
    max_tip = std::max(max_tip, e.tip_mm);
  }
  ASSERT_EQ(i, 12u);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_NEAR(j["mean_tip_mm"].get<double>(), sum_tip / 12, 1e-9);
  EXPECT_NEAR(j["max_tip_mm"].get<double>(), max_tip, 1e-9);
  EXPECT_NEAR(j["mean_rms_mm"].get<double>(), sum_rms / 12, 1e-6);
}

TEST(CliTrack, RegistrationAppliedToWrittenTracks) {
  ct::TempDir dir;
  ASSERT_EQ(cli("simulate -n 3 -o " + (dir / "seq").string()).rc, 0);
  ASSERT_EQ(cli("track " + (dir / "seq").string() + " --out " + (dir / "plain.jsonl").string()).rc, 0);
  ASSERT_EQ(cli("track " + (dir / "seq").string() + " --registration " + asset("registration.txt") + " --out " +
                (dir / "model.jsonl").string())
                .rc,
            0);
  const auto reg = fit_affine(load_correspondences(asset("registration.txt"))).transform;
  std::ifstream a(dir / "plain.jsonl"), b(dir / "model.jsonl");
  std::string la, lb;
  while (std::getline(a, la) && std::getline(b, lb)) {
    const auto ta = track_from_json(nlohmann::json::parse(la)), tb = track_from_json(nlohmann::json::parse(lb));
    ASSERT_EQ(ta.points.size(), tb.points.size());
    for (std::size_t k = 0; k < ta.points.size(); ++k) EXPECT_LT((reg(ta.points[k]) - tb.points[k]).norm(), 1e-9);
  }
}

TEST(CliTrack, EmptySequenceGivesEmptyReport) {
  ct::TempDir dir;
  ASSERT_EQ(cli("simulate -n 0 -o " + (dir / "seq").string()).rc, 0);
  const auto r = cli("track " + (dir / "seq").string());
  ASSERT_EQ(r.rc, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["frames"], 0);
  EXPECT_TRUE(j["mean_tip_mm"].is_null());
}

TEST(CliTrack, MissingInputsAreUsageErrors) {
  ct::TempDir dir;
  ASSERT_EQ(cli("simulate -n 1 -o " + (dir / "seq").string()).rc, 0);
  auto r = cli("track " + (dir / "seq").string() + " --calib " + (dir / "nope.json").string());
  expect_one_line_failure(r);
  EXPECT_EQ(r.rc, 2);
  r = cli("track " + (dir / "absent").string());
  expect_one_line_failure(r);
  EXPECT_EQ(r.rc, 2);
  std::ofstream(dir / "bad.json") << "{\"threshold_window\": 4}";
  r = cli("track " + (dir / "seq").string() + " --pipeline-config " + (dir / "bad.json").string());
  expect_one_line_failure(r);
  EXPECT_EQ(r.rc, 1);
}

TEST(CliCalibrate, RefitsShippedCalibration) {
  ct::TempDir dir;
  const auto r = cli("calibrate " + asset("fiducials.json") + " -o " + (dir / "calib.json").string());
  ASSERT_EQ(r.rc, 0) << r.err;
  EXPECT_NE(r.out.find("TOP"), std::string::npos);
  const Rig fitted = load_rig((dir / "calib.json").string()), shipped = load_rig(asset("calibration.json"));
  EXPECT_LT((fitted.top.homography - shipped.top.homography).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((fitted.front.homography - shipped.front.homography).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(CliCalibrate, DegenerateFiducialsRejected) {
  ct::TempDir dir;
  auto j = nlohmann::json::parse(slurp(asset("fiducials.json")));
  j["cameras"][0]["fiducials"][2]["pixel"] = j["cameras"][0]["fiducials"][1]["pixel"];
  std::ofstream(dir / "fid.json") << j.dump();
  expect_one_line_failure(cli("calibrate " + (dir / "fid.json").string() + " -o " + (dir / "c.json").string()));
  std::ofstream(dir / "junk.json") << "{";
  expect_one_line_failure(cli("calibrate " + (dir / "junk.json").string() + " -o " + (dir / "c.json").string()));
}

TEST(CliServe, ServesSceneMeshAndFrames) {
  ct::TempDir dir;
  const std::string cmd = std::string(CATHTRACK_CLI) + " serve --port 0 --truth --duration 3 --scene " +
                          asset("scene.json") + " --log " + (dir / "log.jsonl").string() + " 2>&1";
  FILE* p = ::popen(cmd.c_str(), "r");
  ASSERT_NE(p, nullptr);
  char buf[256] = {};
  ASSERT_NE(std::fgets(buf, sizeof buf, p), nullptr);
  std::smatch m;
  const std::string first = buf;
  ASSERT_TRUE(std::regex_search(first, m, std::regex(R"(ws://[0-9.]+:([0-9]+)/)"))) << first;
  const auto port = static_cast<unsigned short>(std::stoi(m[1]));

  const auto scene = nlohmann::json::parse(http_get("127.0.0.1", port, "/scene.json").body);
  EXPECT_EQ(scene["targets"].size(), 6u);
  EXPECT_EQ(scene["mesh"], "/mesh");
  const auto mesh = http_get("127.0.0.1", port, "/mesh").body;
  EXPECT_EQ(mesh, slurp(asset("heart.mesh")));

  WsClient c("127.0.0.1", port);
  c.send(R"({"type": "session", "action": "start"})");
  FrameMessage f;
  for (int i = 0; i < 10; ++i) f = decode_frame(c.read().value());
  EXPECT_EQ(f.metrics.total, 6);
  ASSERT_TRUE(f.target.has_value());
  EXPECT_EQ(f.target->id, "T1");
  c.close();

  std::string rest;
  while (std::fgets(buf, sizeof buf, p)) rest += buf;
  const int status = ::pclose(p);
  EXPECT_TRUE(WIFEXITED(status) && WEXITSTATUS(status) == 0) << rest;
  EXPECT_NE(rest.find("served"), std::string::npos);
  std::ifstream log(dir / "log.jsonl");
  EXPECT_EQ(replay_session_log(log).metrics.total, 6);
}

TEST(CliServe, BadSceneRejected) {
  ct::TempDir dir;
  std::ofstream(dir / "scene.json") << R"({"targets": [{"id": "x", "center": [1, 2]}]})";
  expect_one_line_failure(cli("serve --port 0 --duration 1 --scene " + (dir / "scene.json").string()));
  expect_one_line_failure(cli("serve --port 0 --duration 1 --scene " + (dir / "none.json").string()));
  expect_one_line_failure(cli("serve --port 70000"));
}
