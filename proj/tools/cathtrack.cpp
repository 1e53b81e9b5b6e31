// cathtrack: simulate | track | serve | bench | calibrate

#include "cathtrack/cathtrack.hpp"
#include "cathtrack/server.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using namespace cathtrack;

namespace {

// Usage problems (bad flags, missing files named on the command line) exit 2;
// failures while doing the work exit 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int fail(const std::string& what, int code) {
  std::string line = what;
  std::replace(line.begin(), line.end(), '\n', ' ');
  std::cerr << "cathtrack: error: " << line << '\n';
  return code;
}

void require_file(const std::string& path, const char* what) {
  if (!path.empty() && !fs::is_regular_file(path)) throw UsageError(std::string(what) + " not found: " + path);
}

CatheterConfig catheter_or_default(const std::string& path) {
  return path.empty() ? CatheterConfig{} : load_catheter_config(path);
}
Rig rig_or_default(const std::string& path) { return path.empty() ? default_rig() : load_rig(path); }
PipelineConfig pipeline_or_default(const std::string& path) {
  return path.empty() ? PipelineConfig{} : load_pipeline_config(path);
}
AffineTransform registration_or_identity(const std::string& path) {
  return path.empty() ? AffineTransform::identity() : fit_affine(load_correspondences(path)).transform;
}

std::vector<CatheterState> load_states(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open state profile: " + path);
  std::vector<CatheterState> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    try {
      out.push_back(state_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// --- simulate -------------------------------------------------------------------

struct SimulateArgs {
  std::string out;
  int frames = 100;
  std::uint64_t seed = 1;
  std::string noise = "none";
  std::string states;
  std::string catheter;
  std::string calib;
};

int cmd_simulate(const SimulateArgs& a) {
  require_file(a.states, "state profile");
  require_file(a.catheter, "catheter config");
  require_file(a.calib, "calibration file");
  RecordOptions opt;
  opt.catheter = catheter_or_default(a.catheter);
  opt.noise = a.noise == "harsh" ? NoiseSpec::harsh(a.seed) : NoiseSpec::none();
  const Rig rig = rig_or_default(a.calib);
  std::vector<CatheterState> states;
  if (!a.states.empty()) {
    states = load_states(a.states);
  } else {
    std::mt19937_64 rng(a.seed);
    states = random_observable_sequence(rng, static_cast<std::size_t>(a.frames), opt.catheter, rig);
  }
  const auto n = record_sequence(states, rig, a.out, opt);
  std::cout << "wrote " << n << " frames to " << a.out << '\n';
  return 0;
}

// --- track ----------------------------------------------------------------------

struct TrackArgs {
  std::string sequence;
  std::string calib;
  std::string pipeline;
  std::string registration;
  std::string out;
  std::string report;
};

int cmd_track(const TrackArgs& a) {
  if (!fs::is_directory(a.sequence)) throw UsageError("sequence directory not found: " + a.sequence);
  require_file(a.calib, "calibration file");
  require_file(a.pipeline, "pipeline config");
  require_file(a.registration, "registration file");
  const Sequence seq = open_sequence(a.sequence);
  std::string calib = a.calib;
  if (calib.empty() && !seq.calibration.empty()) calib = (seq.dir / seq.calibration).string();
  const Rig rig = rig_or_default(calib);
  const PipelineConfig cfg = pipeline_or_default(a.pipeline);
  const AffineTransform reg = registration_or_identity(a.registration);

  std::map<std::int64_t, std::vector<Vec3>> truth;
  if (!seq.truth.empty() && fs::exists(seq.dir / seq.truth))
    for (auto& r : load_truth(seq.dir / seq.truth)) truth[r.timestamp_ms] = std::move(r.points);
  std::optional<SerialReplay> roll;
  if (!seq.roll_serial.empty() && fs::exists(seq.dir / seq.roll_serial))
    roll = SerialReplay::load((seq.dir / seq.roll_serial).string(), RollCalibration{});

  std::ofstream out;
  if (!a.out.empty()) {
    out.open(a.out);
    if (!out) throw IoError("cannot write " + a.out);
  }
  const Tracker tracker(rig, cfg);
  ErrorReport report;
  for (std::size_t i = 0; i < seq.entries.size(); ++i) {
    const BiplaneFrame frame = seq.load(i);
    const Track3D track = tracker.process(frame, roll ? roll->angle_at(frame.timestamp_ms) : 0.0);
    auto it = truth.find(frame.timestamp_ms);
    // Accuracy is judged in tracking space, where the truth lives.
    report.add(track, it == truth.end() ? nullptr : &it->second);
    if (out) write_track_record(out, apply(reg, track));
  }
  const auto j = report.to_json();
  if (!a.report.empty()) {
    std::ofstream rf(a.report);
    if (!rf) throw IoError("cannot write " + a.report);
    rf << j.dump(2) << '\n';
  }
  std::cout << j.dump() << '\n';
  return 0;
}

// --- serve ----------------------------------------------------------------------

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

struct ServeArgs {
  std::string bind = "127.0.0.1";
  int port = 8765;
  double rate = 30.0;
  std::string scene;
  std::string calib;
  std::string pipeline;
  std::string catheter;
  std::string log;
  std::string noise = "none";
  bool truth = false;
  double duration_s = 0.0;
};

// What /scene.json serves: the scene with the mesh URL and the fitted
// registration filled in, so a viewer needs nothing else.
nlohmann::json scene_for_clients(const Scene& s, const AffineTransform& reg) {
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& t : s.targets) targets.push_back(target_to_json(t));
  nlohmann::json lin = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) lin.push_back({reg.linear(r, 0), reg.linear(r, 1), reg.linear(r, 2)});
  return {{"mesh", s.mesh.empty() ? nlohmann::json(nullptr) : nlohmann::json("/mesh")},
          {"beam", {{"length_mm", s.beam.length_mm},
                    {"near_width_mm", s.beam.near_width_mm},
                    {"far_width_mm", s.beam.far_width_mm}}},
          {"session", {{"dwell_ms", s.session.dwell_ms}, {"timeout_ms", s.session.timeout_ms}}},
          {"registration", {{"linear", lin},
                            {"translation", {reg.translation.x(), reg.translation.y(), reg.translation.z()}}}},
          {"targets", targets},
          {"stream", "/"}};
}

int cmd_serve(const ServeArgs& a) {
  require_file(a.scene, "scene file");
  require_file(a.calib, "calibration file");
  require_file(a.pipeline, "pipeline config");
  require_file(a.catheter, "catheter config");
  TwinConfig twin;
  twin.catheter = catheter_or_default(a.catheter);
  twin.rig = rig_or_default(a.calib);
  twin.pipeline = pipeline_or_default(a.pipeline);
  twin.rate_hz = a.rate;
  twin.vision = !a.truth;
  twin.noise = a.noise == "harsh" ? NoiseSpec::harsh(1) : NoiseSpec::none();

  ServerOptions opt;
  opt.bind_address = a.bind;
  opt.port = static_cast<unsigned short>(a.port);
  opt.log_path = a.log;
  if (!a.scene.empty()) {
    twin.scene = load_scene(a.scene);
    if (!twin.scene.registration.empty()) twin.registration = registration_or_identity(twin.scene.registration.string());
    if (!twin.scene.mesh.empty()) opt.mesh_text = read_text(twin.scene.mesh);
  }
  opt.scene_json = scene_for_clients(twin.scene, twin.registration).dump();

  StreamServer server(twin, opt);
  server.start();
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "listening on ws://" << a.bind << ':' << server.port() << "/ at " << a.rate << " frames/s" << std::endl;
  const auto t0 = std::chrono::steady_clock::now();
  while (!g_stop) {
    if (a.duration_s > 0.0 &&
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() >= a.duration_s)
      break;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  server.stop();
  const auto st = server.stats();
  std::cout << "served " << st.frames << " frames to " << st.clients_accepted << " clients" << std::endl;
  return 0;
}

// --- bench ----------------------------------------------------------------------

struct BenchArgs {
  int frames = 200;
  std::uint64_t seed = 1;
  bool noisy = false;
  bool json = false;
  std::string pipeline;
  std::string calib;
};

int cmd_bench(const BenchArgs& a) {
  if (a.frames <= 0) throw UsageError("--frames must be >= 1");
  require_file(a.pipeline, "pipeline config");
  require_file(a.calib, "calibration file");
  BenchOptions opt;
  opt.frames = a.frames;
  opt.seed = a.seed;
  opt.noisy = a.noisy;
  const auto rep = run_bench(opt, rig_or_default(a.calib), pipeline_or_default(a.pipeline));
  if (a.json)
    std::cout << bench_to_json(rep).dump(2) << '\n';
  else
    print_bench_table(std::cout, rep);
  return 0;
}

// --- calibrate ------------------------------------------------------------------

struct CalibrateArgs {
  std::string fiducials;
  std::string out;
};

int cmd_calibrate(const CalibrateArgs& a) {
  require_file(a.fiducials, "fiducial file");
  nlohmann::json j;
  {
    std::ifstream in(a.fiducials);
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw CalibrationError(a.fiducials + ": " + e.what());
    }
  }
  // Drop any stored maps so every camera is refitted from its fiducials.
  if (j.contains("cameras") && j["cameras"].is_array())
    for (auto& c : j["cameras"]) c.erase("homography");
  const Rig rig = rig_from_json(j);
  save_rig(rig, a.out);
  for (const CameraModel* cam : {&rig.top, &rig.front}) {
    double worst = 0.0;
    for (const auto& f : cam->fiducials)
      worst = std::max(worst, (cam->raw_to_rect(f.pixel) - cam->world_to_rect(f.world)).norm());
    std::cout << to_string(cam->plane) << ": fiducial residual " << worst << " px\n";
  }
  std::cout << "wrote " << a.out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Biplane catheter tracking twin"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "render a synthetic frame sequence with ground truth");
  s->add_option("-o,--out", sim.out, "output directory")->required();
  s->add_option("-n,--frames", sim.frames, "number of frames when no profile is given")
      ->check(CLI::NonNegativeNumber);
  s->add_option("--seed", sim.seed, "random seed");
  s->add_option("--noise", sim.noise, "none | harsh")->check(CLI::IsMember({"none", "harsh"}));
  s->add_option("--states", sim.states, "state profile, one JSON object per line");
  s->add_option("--catheter", sim.catheter, "catheter config (key = value)");
  s->add_option("--calib", sim.calib, "camera calibration JSON");

  TrackArgs trk;
  auto* t = app.add_subcommand("track", "track a recorded sequence and report error against ground truth");
  t->add_option("sequence,--sequence", trk.sequence, "sequence directory")->required();
  t->add_option("--calib", trk.calib, "camera calibration JSON (default: the sequence's own)");
  t->add_option("--pipeline-config", trk.pipeline, "pipeline config JSON");
  t->add_option("--registration", trk.registration, "fiducial correspondences for the written tracks");
  t->add_option("--out", trk.out, "write track records (JSON lines)");
  t->add_option("--report", trk.report, "write the error report JSON");

  ServeArgs srv;
  auto* v = app.add_subcommand("serve", "run the WebSocket stream server");
  v->add_option("--bind", srv.bind, "IP address to listen on");
  v->add_option("--port", srv.port, "TCP port (0 picks one)")->check(CLI::Range(0, 65535));
  v->add_option("--rate", srv.rate, "frames per second")->check(CLI::PositiveNumber);
  v->add_option("--scene", srv.scene, "scene JSON (targets, beam, mesh, registration)");
  v->add_option("--calib", srv.calib, "camera calibration JSON");
  v->add_option("--pipeline-config", srv.pipeline, "pipeline config JSON");
  v->add_option("--catheter", srv.catheter, "catheter config (key = value)");
  v->add_option("--log", srv.log, "append session events to this file");
  v->add_option("--noise", srv.noise, "none | harsh")->check(CLI::IsMember({"none", "harsh"}));
  v->add_flag("--truth", srv.truth, "skip rendering and vision; stream the ground-truth curve");
  v->add_option("--duration", srv.duration_s, "stop after this many seconds (0 runs until signalled)")
      ->check(CLI::NonNegativeNumber);

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "per-stage pipeline latency");
  b->add_option("--frames", bench.frames, "frame pairs to time");
  b->add_option("--seed", bench.seed, "random seed");
  b->add_flag("--noisy", bench.noisy, "use the harsh noise model");
  b->add_flag("--json", bench.json, "print JSON instead of a table");
  b->add_option("--pipeline-config", bench.pipeline, "pipeline config JSON");
  b->add_option("--calib", bench.calib, "camera calibration JSON");

  CalibrateArgs cal;
  auto* c = app.add_subcommand("calibrate", "fit camera homographies from fiducials");
  c->add_option("fiducials,--fiducials", cal.fiducials, "fiducial JSON (calibration format)")->required();
  c->add_option("-o,--out", cal.out, "calibration file to write")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(e.what(), 2);
  }

  try {
    if (*s) return cmd_simulate(sim);
    if (*t) return cmd_track(trk);
    if (*v) return cmd_serve(srv);
    if (*b) return cmd_bench(bench);
    if (*c) return cmd_calibrate(cal);
  } catch (const UsageError& e) {
    return fail(e.what(), 2);
  } catch (const std::exception& e) {
    return fail(e.what(), 1);
  }
  return 0;
}
