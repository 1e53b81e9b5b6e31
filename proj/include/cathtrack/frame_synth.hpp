#pragma once

// Synthetic biplane frames: project a catheter curve into each camera and
// draw it as a dark tube on a bright backlit field, with optional noise.

#include "cathtrack/camera.hpp"
#include "cathtrack/catheter.hpp"
#include "cathtrack/image.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace cathtrack {

struct BiplaneFrame {
  GrayImage top;
  GrayImage front;
  std::int64_t timestamp_ms = 0;
};

struct RenderStyle {
  int background = 230;
  int tube_intensity = 110;
  double tube_width_px = 6.0;
};

struct NoiseSpec {
  double gaussian_sigma = 0.0;
  double gradient_levels = 0.0;  // peak-to-peak illumination change across the image
  double gradient_angle_deg = 30.0;
  int speckle_count = 0;
  double speckle_min_radius_px = 1.5;
  double speckle_max_radius_px = 4.0;
  std::uint64_t seed = 1;

  static NoiseSpec none() { return {}; }
  // Noise level used by the robustness benchmark.
  static NoiseSpec harsh(std::uint64_t seed) {
    NoiseSpec n;
    n.gaussian_sigma = 8.0;
    n.gradient_levels = 40.0;
    n.speckle_count = 5;
    n.seed = seed;
    return n;
  }
};

// Tip-first raw-pixel polyline of the curve as seen by `camera`.
inline Path2D project(const CatheterCurve& curve, const CameraModel& camera) {
  const Mat3 inv = camera.homography.inverse();
  Path2D out;
  out.space = PathSpace::RawPx;
  out.points.reserve(curve.points.size());
  for (const auto& p : curve.points)
    out.points.push_back(apply_homography(inv, camera.world_to_rect(camera.in_plane(p))));
  return out;
}

// Same projection, stopping in rectified pixels.
inline Path2D project_rect(const CatheterCurve& curve, const CameraModel& camera) {
  Path2D out;
  out.space = PathSpace::RectPx;
  out.points.reserve(curve.points.size());
  for (const auto& p : curve.points) out.points.push_back(camera.world_to_rect(camera.in_plane(p)));
  return out;
}

namespace detail {

inline double segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

// Minimum distance from each pixel centre to the polyline, limited to `reach`.
inline void distance_field(const std::vector<Vec2>& pts, int w, int h, double reach,
                           std::vector<float>& dist) {
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const Vec2& a = pts[i - 1];
    const Vec2& b = pts[i];
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x(), b.x()) - reach)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max(a.x(), b.x()) + reach)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y(), b.y()) - reach)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max(a.y(), b.y()) + reach)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const float d = static_cast<float>(segment_distance(Vec2(x, y), a, b));
        float& slot = dist[static_cast<std::size_t>(y) * w + x];
        slot = std::min(slot, d);
      }
  }
}

}  // namespace detail

// Draws `path` (raw pixels, any length) into a camera-sized image. Edges are
// anti-aliased over one pixel. A path with no extent yields the bare
// background, which downstream stages read as "no catheter".
inline GrayImage rasterize(const Path2D& path, const CameraModel& camera, const NoiseSpec& noise,
                           const RenderStyle& style = {}) {
  const int w = camera.raw_width, h = camera.raw_height;
  std::vector<float> level(static_cast<std::size_t>(w) * h, static_cast<float>(style.background));

  if (noise.gradient_levels != 0.0) {
    const double a = noise.gradient_angle_deg * kDegToRad;
    const Vec2 dir(std::cos(a), std::sin(a));
    const double span = std::abs(dir.x()) * (w - 1) + std::abs(dir.y()) * (h - 1);
    const Vec2 centre(0.5 * (w - 1), 0.5 * (h - 1));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        level[static_cast<std::size_t>(y) * w + x] +=
            static_cast<float>(noise.gradient_levels * (Vec2(x, y) - centre).dot(dir) / span);
  }

  const double contrast = style.background - style.tube_intensity;
  auto darken = [&](const std::vector<float>& dist, double half_width) {
    for (std::size_t i = 0; i < dist.size(); ++i) {
      const double cover = std::clamp(half_width + 0.5 - dist[i], 0.0, 1.0);
      if (cover > 0.0) level[i] -= static_cast<float>(contrast * cover);
    }
  };

  const double half = 0.5 * style.tube_width_px;
  const bool has_extent = path.points.size() >= 2 && polyline_length(path.points) > 0.0;
  if (has_extent) {
    std::vector<float> dist(level.size(), std::numeric_limits<float>::infinity());
    detail::distance_field(path.points, w, h, half + 1.0, dist);
    darken(dist, half);
  }

  std::mt19937_64 rng(noise.seed);
  if (noise.speckle_count > 0) {
    std::uniform_real_distribution<double> ux(0.0, w - 1.0), uy(0.0, h - 1.0);
    std::uniform_real_distribution<double> ur(noise.speckle_min_radius_px, noise.speckle_max_radius_px);
    for (int i = 0; i < noise.speckle_count; ++i) {
      const Vec2 c(ux(rng), uy(rng));
      const double r = ur(rng);
      std::vector<float> dist(level.size(), std::numeric_limits<float>::infinity());
      detail::distance_field({c, c}, w, h, r + 1.0, dist);
      darken(dist, r - 0.5);
    }
  }

  GrayImage img(w, h);
  std::normal_distribution<double> gauss(0.0, noise.gaussian_sigma > 0.0 ? noise.gaussian_sigma : 1.0);
  for (std::size_t i = 0; i < level.size(); ++i) {
    double v = level[i];
    if (noise.gaussian_sigma > 0.0) v += gauss(rng);
    img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  }
  return img;
}

inline BiplaneFrame render_frame(const CatheterCurve& curve, const Rig& rig, const NoiseSpec& noise,
                                 const RenderStyle& style = {}, std::int64_t timestamp_ms = 0) {
  NoiseSpec front_noise = noise;
  front_noise.seed = noise.seed ^ 0x9e3779b97f4a7c15ULL;
  BiplaneFrame f;
  f.top = rasterize(project(curve, rig.top), rig.top, noise, style);
  f.front = rasterize(project(curve, rig.front), rig.front, front_noise, style);
  f.timestamp_ms = timestamp_ms;
  return f;
}

// --- frame-sequence format -------------------------------------------------
//
// <dir>/manifest.json   {"format": "cathtrack-sequence", "version": 1,
//                        "frame_count": N, "calibration": "calibration.json",
//                        "truth": "truth.jsonl", "roll_serial": "roll.serial",
//                        "frames": [{"index", "timestamp_ms", "top", "front"}]}
// <dir>/frame_NNNNN_{top,front}.pgm   binary PGM (P5)
// <dir>/truth.jsonl     one object per frame: index, timestamp_ms, state, points (mm, tip first)
// <dir>/roll.serial     encoder replay, one "T:<ms> C:<count>" line per frame

struct SequenceEntry {
  std::int64_t index = 0;
  std::int64_t timestamp_ms = 0;
  std::string top;
  std::string front;
};

struct TruthRecord {
  std::int64_t index = 0;
  std::int64_t timestamp_ms = 0;
  CatheterState state;
  std::vector<Vec3> points;
};

struct RecordOptions {
  CatheterConfig catheter;
  NoiseSpec noise;  // seed is advanced per frame
  RenderStyle style;
  std::int64_t frame_interval_ms = 33;
  // Encoder counts per degree of catheter roll, used for roll.serial.
  double counts_per_degree = 4.0 * 600.0 / 360.0;
};

inline nlohmann::json state_to_json(const CatheterState& s) {
  return {{"insertion_mm", s.insertion_mm}, {"knob1_deg", s.knob1_deg}, {"knob2_deg", s.knob2_deg},
          {"roll_deg", s.roll_deg}};
}

inline CatheterState state_from_json(const nlohmann::json& j) {
  CatheterState s;
  s.insertion_mm = j.at("insertion_mm").get<double>();
  s.knob1_deg = j.at("knob1_deg").get<double>();
  s.knob2_deg = j.at("knob2_deg").get<double>();
  s.roll_deg = j.at("roll_deg").get<double>();
  return s;
}

inline std::string frame_file_name(std::int64_t index, const char* view) {
  std::ostringstream os;
  os << "frame_" << std::setw(5) << std::setfill('0') << index << '_' << view << ".pgm";
  return os.str();
}

// Writes the frame-sequence format into `dir` (created if needed). Returns the
// number of frames written.
inline std::size_t record_sequence(const std::vector<CatheterState>& states, const Rig& rig,
                                   const std::filesystem::path& dir, const RecordOptions& opt = {}) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  std::ofstream truth(dir / "truth.jsonl");
  std::ofstream serial(dir / "roll.serial");
  if (!truth || !serial) throw IoError("cannot write sequence sidecars in " + dir.string());

  nlohmann::json manifest = {{"format", "cathtrack-sequence"},
                             {"version", 1},
                             {"frame_count", states.size()},
                             {"calibration", "calibration.json"},
                             {"truth", "truth.jsonl"},
                             {"roll_serial", "roll.serial"},
                             {"frames", nlohmann::json::array()}};

  // The encoder reports an unwrapped count, so roll is unwrapped across frames.
  double unwrapped = states.empty() ? 0.0 : states.front().roll_deg;
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto& s = states[i];
    if (i > 0) unwrapped += wrap_deg(s.roll_deg - states[i - 1].roll_deg);
    const auto idx = static_cast<std::int64_t>(i);
    const std::int64_t ts = idx * opt.frame_interval_ms;

    const CatheterCurve curve = forward_kinematics(s, opt.catheter);
    NoiseSpec noise = opt.noise;
    noise.seed = opt.noise.seed + 7919ULL * i;
    const BiplaneFrame frame = render_frame(curve, rig, noise, opt.style, ts);

    const std::string top_name = frame_file_name(idx, "top");
    const std::string front_name = frame_file_name(idx, "front");
    write_pgm(frame.top, (dir / top_name).string());
    write_pgm(frame.front, (dir / front_name).string());
    manifest["frames"].push_back({{"index", idx}, {"timestamp_ms", ts}, {"top", top_name}, {"front", front_name}});

    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : curve.points) pts.push_back({p.x(), p.y(), p.z()});
    truth << nlohmann::json{{"index", idx}, {"timestamp_ms", ts}, {"state", state_to_json(s)}, {"points", pts}}.dump()
          << '\n';
    serial << "T:" << ts << " C:" << std::llround(std::floor(unwrapped * opt.counts_per_degree)) << '\n';
  }

  save_rig(rig, (dir / "calibration.json").string());
  std::ofstream mf(dir / "manifest.json");
  if (!mf) throw IoError("cannot write manifest in " + dir.string());
  mf << manifest.dump(2) << '\n';
  if (!mf || !truth || !serial) throw IoError("write failed in " + dir.string());
  return states.size();
}

struct Sequence {
  std::filesystem::path dir;
  std::vector<SequenceEntry> entries;
  std::string calibration;
  std::string truth;
  std::string roll_serial;

  BiplaneFrame load(std::size_t i) const {
    const auto& e = entries.at(i);
    BiplaneFrame f;
    f.top = read_pgm((dir / e.top).string());
    f.front = read_pgm((dir / e.front).string());
    f.timestamp_ms = e.timestamp_ms;
    return f;
  }
};

inline Sequence open_sequence(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("no manifest.json in " + dir.string());
  Sequence seq;
  seq.dir = dir;
  try {
    nlohmann::json j;
    in >> j;
    if (j.value("format", "") != "cathtrack-sequence") throw IoError("unrecognised manifest format");
    seq.calibration = j.value("calibration", "");
    seq.truth = j.value("truth", "");
    seq.roll_serial = j.value("roll_serial", "");
    for (const auto& f : j.at("frames"))
      seq.entries.push_back({f.at("index").get<std::int64_t>(), f.at("timestamp_ms").get<std::int64_t>(),
                             f.at("top").get<std::string>(), f.at("front").get<std::string>()});
    if (j.at("frame_count").get<std::size_t>() != seq.entries.size())
      throw IoError("manifest frame_count disagrees with frame list");
  } catch (const nlohmann::json::exception& e) {
    throw IoError(dir.string() + "/manifest.json: " + e.what());
  }
  return seq;
}

inline std::vector<TruthRecord> load_truth(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open ground truth " + file.string());
  std::vector<TruthRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TruthRecord r;
      r.index = j.at("index").get<std::int64_t>();
      r.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
      r.state = state_from_json(j.at("state"));
      for (const auto& p : j.at("points")) r.points.emplace_back(p.at(0), p.at(1), p.at(2));
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(file.string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace cathtrack
