#pragma once

// Per-stage latency of the tracking pipeline on synthetic frames. Views run
// back to back on the calling thread, so frames/s is a single-core figure.

#include "cathtrack/frame_synth.hpp"
#include "cathtrack/fusion.hpp"
#include "cathtrack/vision.hpp"
#include "cathtrack/workload.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <ostream>
#include <random>
#include <string>
#include <vector>

namespace cathtrack {

struct BenchOptions {
  int frames = 200;
  std::uint64_t seed = 1;
  bool noisy = false;
};

inline constexpr std::array<const char*, 8> kBenchStages = {"rectify", "smooth_contrast", "threshold", "clean",
                                                            "skeleton", "trace",           "downsample_mm", "fuse"};

struct StageTiming {
  std::string name;
  double mean_ms = 0.0;
  double p95_ms = 0.0;
  double max_ms = 0.0;
};

struct BenchReport {
  int frames = 0;
  int width = 0;
  int height = 0;
  std::vector<StageTiming> stages;
  double total_mean_ms = 0.0;  // per frame pair
  double frames_per_s = 0.0;
  int tracked = 0;
};

inline BenchReport run_bench(const BenchOptions& opt, const Rig& rig = default_rig(), const PipelineConfig& cfg_in = {},
                             const CatheterConfig& cat = {}) {
  if (opt.frames <= 0) throw ParameterError("bench: --frames must be >= 1");
  PipelineConfig cfg = cfg_in;
  cfg.parallel_views = false;
  const ViewProcessor top(rig.top, cfg), front(rig.front, cfg);

  std::mt19937_64 rng(opt.seed);
  std::vector<BiplaneFrame> frames;
  frames.reserve(static_cast<std::size_t>(opt.frames));
  for (int i = 0; i < opt.frames; ++i) {
    const auto s = random_observable_state(rng, cat, rig);
    const NoiseSpec noise = opt.noisy ? NoiseSpec::harsh(opt.seed + static_cast<std::uint64_t>(i)) : NoiseSpec::none();
    frames.push_back(render_frame(forward_kinematics(s, cat), rig, noise, {}, i * 33));
  }

  using clock = std::chrono::steady_clock;
  std::vector<std::vector<double>> samples(kBenchStages.size());
  std::vector<double> totals;
  BenchReport rep;
  rep.frames = opt.frames;
  rep.width = rig.top.raw_width;
  rep.height = rig.top.raw_height;

  for (const auto& f : frames) {
    std::array<double, kBenchStages.size()> acc{};
    auto timed = [&](std::size_t stage, auto&& fn) {
      const auto t0 = clock::now();
      auto r = fn();
      acc[stage] += std::chrono::duration<double, std::milli>(clock::now() - t0).count();
      return r;
    };
    std::array<Path2D, 2> paths;
    bool lost = false;
    const std::array<const ViewProcessor*, 2> views = {&top, &front};
    const std::array<const GrayImage*, 2> imgs = {&f.top, &f.front};
    for (std::size_t v = 0; v < 2; ++v) {
      const ViewProcessor& vp = *views[v];
      const auto rect = timed(0, [&] { return vp.rectify(*imgs[v]); });
      const auto enh = timed(1, [&] { return vp.enhance(rect); });
      const auto mask = timed(2, [&] { return vp.segment(enh); });
      const auto cleaned = timed(3, [&] { return vp.cleanup(mask); });
      const auto skel = timed(4, [&] { return skeletonize(cleaned); });
      try {
        const auto traced = timed(5, [&] { return vp.refine(vp.trace(skel), cleaned); });
        paths[v] = timed(6, [&] {
          const Path2D k_points = vp.to_track(traced);  // the per-view output
          return k_points.empty() ? k_points : px_to_mm(traced, vp.camera());
        });
      } catch (const TrackingLostError&) {
        lost = true;
      }
    }
    const auto track = timed(7, [&] {
      return lost ? Track3D{} : fuse(paths[0], paths[1], cfg.track_points, cfg.consistency_gate_mm, FusionOptions::from(cfg));
    });
    if (track.present()) ++rep.tracked;
    double total = 0.0;
    for (std::size_t s = 0; s < acc.size(); ++s) {
      samples[s].push_back(acc[s]);
      total += acc[s];
    }
    totals.push_back(total);
  }

  auto summarize = [](std::vector<double> v, const std::string& name) {
    StageTiming t;
    t.name = name;
    double sum = 0.0;
    for (double x : v) sum += x;
    t.mean_ms = sum / static_cast<double>(v.size());
    std::sort(v.begin(), v.end());
    t.p95_ms = v[std::min(v.size() - 1, static_cast<std::size_t>(0.95 * static_cast<double>(v.size())))];
    t.max_ms = v.back();
    return t;
  };
  for (std::size_t s = 0; s < kBenchStages.size(); ++s) rep.stages.push_back(summarize(samples[s], kBenchStages[s]));
  const auto tot = summarize(totals, "total");
  rep.total_mean_ms = tot.mean_ms;
  rep.frames_per_s = 1000.0 / tot.mean_ms;
  return rep;
}

inline void print_bench_table(std::ostream& out, const BenchReport& r) {
  char line[160];
  std::snprintf(line, sizeof line, "frames %d  resolution %dx%d  tracked %d\n", r.frames, r.width, r.height, r.tracked);
  out << line;
  std::snprintf(line, sizeof line, "%-16s %10s %10s %10s\n", "stage", "mean_ms", "p95_ms", "max_ms");
  out << line;
  for (const auto& s : r.stages) {
    std::snprintf(line, sizeof line, "%-16s %10.3f %10.3f %10.3f\n", s.name.c_str(), s.mean_ms, s.p95_ms, s.max_ms);
    out << line;
  }
  std::snprintf(line, sizeof line, "%-16s %10.3f\n", "total", r.total_mean_ms);
  out << line;
  std::snprintf(line, sizeof line, "frames_per_s %.2f\n", r.frames_per_s);
  out << line;
}

inline nlohmann::json bench_to_json(const BenchReport& r) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : r.stages)
    stages.push_back({{"stage", s.name}, {"mean_ms", s.mean_ms}, {"p95_ms", s.p95_ms}, {"max_ms", s.max_ms}});
  return {{"frames", r.frames},
          {"width", r.width},
          {"height", r.height},
          {"tracked", r.tracked},
          {"stages", stages},
          {"total_mean_ms", r.total_mean_ms},
          {"frames_per_s", r.frames_per_s}};
}

}  // namespace cathtrack
