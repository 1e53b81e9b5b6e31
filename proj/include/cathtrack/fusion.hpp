#pragma once

// Biplane fusion: TOP gives (x, y), FRONT gives (x, z); x is the mean of the
// two views and the remaining x disagreement is reported as consistency_mm.
//
// A 3D curve's arclength projects non-uniformly into each view, so samples
// at equal per-view normalized arclength are generally different points of
// the catheter. The default (aligned) correspondence instead walks both
// paths together, monotonically in each, matching their shared x profile
// (dynamic time warping on x; the catheter may double back in x, which a
// plain x lookup could not handle), then resamples the joined 3D curve at
// uniform 3D arclength.

#include "cathtrack/camera.hpp"
#include "cathtrack/errors.hpp"
#include "cathtrack/frame_synth.hpp"
#include "cathtrack/geometry.hpp"
#include "cathtrack/vision.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <future>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

namespace cathtrack {

enum class TrackStatus { Ok, NoCatheter, Lost };

inline const char* to_string(TrackStatus s) {
  switch (s) {
    case TrackStatus::Ok: return "ok";
    case TrackStatus::NoCatheter: return "no_catheter";
    case TrackStatus::Lost: return "lost";
  }
  return "?";
}

inline TrackStatus track_status_from_string(const std::string& s) {
  if (s == "ok") return TrackStatus::Ok;
  if (s == "no_catheter") return TrackStatus::NoCatheter;
  if (s == "lost") return TrackStatus::Lost;
  throw ParameterError("unknown track status: " + s);
}

struct Track3D {
  std::vector<Vec3> points;  // K points, tip first; empty unless status == Ok
  double roll_deg = 0.0;
  std::int64_t timestamp_ms = 0;
  double consistency_mm = 0.0;
  bool correspondence_warning = false;
  TrackStatus status = TrackStatus::NoCatheter;

  bool present() const { return status == TrackStatus::Ok && !points.empty(); }
  const Vec3& tip() const { return points.front(); }

  static Track3D no_catheter(std::int64_t ts, double roll = 0.0) {
    Track3D t;
    t.timestamp_ms = ts;
    t.roll_deg = roll;
    return t;
  }
};

struct FusionOptions {
  Correspondence correspondence = Correspondence::Aligned;
  int samples = 256;               // per-view samples for the aligned match
  int smoothing = 3;               // half-window over the warp path, in steps
  double arclength_weight = 1e-3;  // tie-break toward equal normalized arclength

  static FusionOptions from(const PipelineConfig& c) {
    FusionOptions o;
    o.correspondence = c.correspondence;
    o.samples = c.fusion_samples;
    return o;
  }
};

namespace detail {

inline Vec2 lerp_samples(const std::vector<Vec2>& p, double u) {
  const std::size_t a = std::min(static_cast<std::size_t>(u), p.size() - 2);
  return p[a] + (u - static_cast<double>(a)) * (p[a + 1] - p[a]);
}

// Monotone warp path (i over top, j over front) from (0, 0) to (m-1, m-1)
// minimising the summed |x_top - x_front|.
inline std::vector<std::pair<int, int>> warp_on_x(const std::vector<Vec2>& t, const std::vector<Vec2>& f,
                                                  double weight) {
  const int m = static_cast<int>(t.size());
  const std::size_t mm = static_cast<std::size_t>(m);
  std::vector<std::uint8_t> from(mm * mm, 0);  // 0 diagonal, 1 from i-1, 2 from j-1
  std::vector<double> prev(mm), cur(mm);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      const double c = std::abs(t[i].x() - f[j].x()) + weight * std::abs(i - j);
      if (i == 0 && j == 0) {
        cur[0] = c;
        continue;
      }
      double best = std::numeric_limits<double>::infinity();
      std::uint8_t b = 0;
      if (i > 0 && j > 0) best = prev[j - 1];
      if (i > 0 && prev[j] < best) best = prev[j], b = 1;
      if (j > 0 && cur[j - 1] < best) best = cur[j - 1], b = 2;
      cur[j] = best + c;
      from[static_cast<std::size_t>(i) * mm + j] = b;
    }
    std::swap(prev, cur);
  }
  std::vector<std::pair<int, int>> path;
  int i = m - 1, j = m - 1;
  for (;;) {
    path.emplace_back(i, j);
    if (i == 0 && j == 0) break;
    const auto b = from[static_cast<std::size_t>(i) * mm + j];
    if (b == 0) --i, --j;
    else if (b == 1) --i;
    else --j;
  }
  std::reverse(path.begin(), path.end());
  return path;
}

}  // namespace detail

// Fuse two tip-first mm paths (TOP: (x, y), FRONT: (x, z)) into a K-point
// track. The entry point is pinned to the inlet axis (y = z = 0).
inline Track3D fuse(const Path2D& top, const Path2D& front, int k, double consistency_gate_mm = 5.0,
                    const FusionOptions& opt = {}) {
  if (k < 2) throw ParameterError("fuse: K must be >= 2");
  if (top.empty() || front.empty()) return Track3D::no_catheter(0);

  Track3D out;
  out.status = TrackStatus::Ok;
  double disagreement = 0.0;
  if (opt.correspondence == Correspondence::ViewArclength) {
    const auto t = resample_uniform(top.points, static_cast<std::size_t>(k));
    const auto f = resample_uniform(front.points, static_cast<std::size_t>(k));
    out.points.reserve(k);
    for (int i = 0; i < k; ++i) {
      out.points.emplace_back(0.5 * (t[i].x() + f[i].x()), t[i].y(), f[i].y());
      disagreement += std::abs(t[i].x() - f[i].x());
    }
    out.consistency_mm = disagreement / k;
  } else {
    if (opt.samples < 2) throw ParameterError("fuse: samples must be >= 2");
    const auto m = static_cast<std::size_t>(opt.samples);
    const auto t = resample_uniform(top.points, m);
    const auto f = resample_uniform(front.points, m);
    const double len = 0.5 * (polyline_length(top.points) + polyline_length(front.points));
    const auto warp = detail::warp_on_x(t, f, opt.arclength_weight * len / static_cast<double>(m - 1));
    // The raw warp is a staircase; a moving average over it gives a smooth
    // monotone correspondence, sampled with linear interpolation.
    const int n = static_cast<int>(warp.size()), w = std::max(0, opt.smoothing);
    std::vector<Vec3> joined;
    joined.reserve(warp.size());
    for (int q = 0; q < n; ++q) {
      double u = 0.0, v = 0.0;
      const int lo = std::max(0, q - w), hi = std::min(n - 1, q + w);
      for (int r = lo; r <= hi; ++r) {
        u += warp[r].first;
        v += warp[r].second;
      }
      u /= hi - lo + 1;
      v /= hi - lo + 1;
      if (q == 0) u = v = 0.0;
      if (q == n - 1) u = v = static_cast<double>(m - 1);
      const Vec2 a = detail::lerp_samples(t, u), b = detail::lerp_samples(f, v);
      joined.emplace_back(0.5 * (a.x() + b.x()), a.y(), b.y());
      disagreement += std::abs(a.x() - b.x());
    }
    out.points = resample_uniform(joined, static_cast<std::size_t>(k));
    out.consistency_mm = disagreement / n;
  }
  out.points.back().y() = 0.0;
  out.points.back().z() = 0.0;
  out.correspondence_warning = out.consistency_mm > consistency_gate_mm;
  return out;
}

// Full per-frame pipeline for a calibrated rig.
class Tracker {
 public:
  Tracker(const Rig& rig, const PipelineConfig& cfg) : top_(rig.top, cfg), front_(rig.front, cfg), cfg_(cfg) {}

  const PipelineConfig& config() const { return cfg_; }
  const ViewProcessor& top() const { return top_; }
  const ViewProcessor& front() const { return front_; }

  Track3D process(const BiplaneFrame& frame, double roll_deg = 0.0) const {
    Path2D top_path, front_path;
    try {
      if (cfg_.parallel_views && std::thread::hardware_concurrency() > 1) {
        auto fut = std::async(std::launch::async, [&] { return front_.run_dense(frame.front); });
        top_path = top_.run_dense(frame.top);
        front_path = fut.get();
      } else {
        top_path = top_.run_dense(frame.top);
        front_path = front_.run_dense(frame.front);
      }
    } catch (const TrackingLostError&) {
      Track3D lost = Track3D::no_catheter(frame.timestamp_ms, roll_deg);
      lost.status = TrackStatus::Lost;
      return lost;
    }
    Track3D tr = fuse(top_path, front_path, cfg_.track_points, cfg_.consistency_gate_mm, FusionOptions::from(cfg_));
    tr.timestamp_ms = frame.timestamp_ms;
    tr.roll_deg = wrap_deg(roll_deg);
    return tr;
  }

 private:
  ViewProcessor top_;
  ViewProcessor front_;
  PipelineConfig cfg_;
};

// One track (or no-catheter marker) per frame, order and timestamps preserved.
// `roll_at` supplies the roll angle for a timestamp (0 when absent).
inline std::vector<Track3D> fuse_stream(const std::vector<BiplaneFrame>& frames, const Rig& rig,
                                        const PipelineConfig& cfg,
                                        const std::function<double(std::int64_t)>& roll_at = {}) {
  const Tracker tracker(rig, cfg);
  std::vector<Track3D> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(tracker.process(f, roll_at ? roll_at(f.timestamp_ms) : 0.0));
  return out;
}

// --- track record lines -------------------------------------------------------

inline nlohmann::json track_to_json(const Track3D& t) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : t.points) pts.push_back({p.x(), p.y(), p.z()});
  return {{"timestamp_ms", t.timestamp_ms},
          {"status", to_string(t.status)},
          {"roll_deg", t.roll_deg},
          {"consistency_mm", t.consistency_mm},
          {"warning", t.correspondence_warning},
          {"points", pts}};
}

inline Track3D track_from_json(const nlohmann::json& j) {
  Track3D t;
  t.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
  t.status = track_status_from_string(j.at("status").get<std::string>());
  t.roll_deg = j.at("roll_deg").get<double>();
  t.consistency_mm = j.at("consistency_mm").get<double>();
  t.correspondence_warning = j.at("warning").get<bool>();
  for (const auto& p : j.at("points")) t.points.emplace_back(p.at(0), p.at(1), p.at(2));
  return t;
}

inline void write_track_record(std::ostream& out, const Track3D& t) { out << track_to_json(t).dump() << '\n'; }

}  // namespace cathtrack
