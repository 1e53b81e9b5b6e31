#pragma once

// Random catheter states for accuracy benchmarks and fixtures.
//
// Biplane tip-to-tail tracing is only well posed when neither view sees the
// catheter cross or fold onto itself, and when the whole curve is inside both
// fields of view. `is_observable` encodes those conditions; the samplers
// reject states that fail them.

#include "cathtrack/camera.hpp"
#include "cathtrack/catheter.hpp"
#include "cathtrack/frame_synth.hpp"

#include <random>
#include <vector>

namespace cathtrack {

struct ObservabilityRules {
  double border_margin_px = 12.0;
  // Points further apart than this along the catheter...
  double min_arc_separation_mm = 10.0;
  // ...must project at least this far apart in both views.
  double min_projected_gap_mm = 3.0;
  // Largest turn between consecutive ~1 mm projected chords. Sharper turns
  // mean the curve heads into the camera and folds back in that view.
  double max_projected_turn_deg = 45.0;
};

inline bool is_observable(const CatheterCurve& curve, const Rig& rig, const ObservabilityRules& rules = {}) {
  if (curve.arc_length_mm <= 0.0) return false;
  for (const CameraModel* cam : {&rig.top, &rig.front}) {
    const Path2D rect = project_rect(curve, *cam);
    const Path2D raw = project(curve, *cam);
    const double m = rules.border_margin_px;
    for (std::size_t i = 0; i < rect.points.size(); ++i) {
      const Vec2& r = rect.points[i];
      const Vec2& w = raw.points[i];
      if (r.x() < m || r.y() < m || r.x() > cam->rect_width - 1 - m || r.y() > cam->rect_height - 1 - m) return false;
      if (w.x() < m || w.y() < m || w.x() > cam->raw_width - 1 - m || w.y() > cam->raw_height - 1 - m) return false;
    }
    // Coarse pairwise check at ~1 mm spacing.
    std::vector<Vec2> planar;
    std::vector<double> arc;
    const auto cum = cumulative_arclength(std::span<const Vec3>(curve.points));
    double next = 0.0;
    for (std::size_t i = 0; i < curve.points.size(); ++i) {
      if (cum[i] + 1e-9 < next && i + 1 != curve.points.size()) continue;
      planar.push_back(cam->in_plane(curve.points[i]));
      arc.push_back(cum[i]);
      next = cum[i] + 1.0;
    }
    const double min_cos = std::cos(rules.max_projected_turn_deg * kDegToRad);
    for (std::size_t i = 2; i < planar.size(); ++i) {
      const Vec2 a = planar[i - 1] - planar[i - 2];
      const Vec2 b = planar[i] - planar[i - 1];
      if (a.norm() < 1e-6 || b.norm() < 1e-6) return false;
      if (a.dot(b) < min_cos * a.norm() * b.norm()) return false;
    }
    for (std::size_t i = 0; i < planar.size(); ++i)
      for (std::size_t j = i + 1; j < planar.size(); ++j) {
        if (arc[j] - arc[i] < rules.min_arc_separation_mm) continue;
        if ((planar[i] - planar[j]).norm() < rules.min_projected_gap_mm) return false;
      }
  }
  return true;
}

struct StateRanges {
  double min_insertion_mm = 20.0;
  double max_insertion_mm = 120.0;
  double max_knob_deg = 120.0;
};

// Uniform over the ranges, rejecting unobservable states.
template <typename Rng>
CatheterState random_observable_state(Rng& rng, const CatheterConfig& cfg, const Rig& rig,
                                      const StateRanges& ranges = {}, const ObservabilityRules& rules = {}) {
  std::uniform_real_distribution<double> ins(ranges.min_insertion_mm, std::min(ranges.max_insertion_mm, cfg.max_insertion_mm));
  std::uniform_real_distribution<double> knob(-ranges.max_knob_deg, ranges.max_knob_deg);
  std::uniform_real_distribution<double> roll(-180.0, 180.0);
  for (;;) {
    CatheterState s{ins(rng), knob(rng), knob(rng), roll(rng)};
    if (is_observable(forward_kinematics(s, cfg), rig, rules)) return s;
  }
}

// A smooth scripted sweep through observable states, e.g. for `simulate`.
template <typename Rng>
std::vector<CatheterState> random_observable_sequence(Rng& rng, std::size_t n, const CatheterConfig& cfg,
                                                      const Rig& rig, std::size_t knots = 6) {
  std::vector<CatheterState> out;
  if (n == 0) return out;
  knots = std::max<std::size_t>(2, knots);
  std::vector<CatheterState> key;
  for (std::size_t i = 0; i < knots; ++i) key.push_back(random_observable_state(rng, cfg, rig));
  for (std::size_t i = 0; i < n; ++i) {
    const double u = n == 1 ? 0.0 : static_cast<double>(i) * (knots - 1) / (n - 1);
    const std::size_t a = std::min(static_cast<std::size_t>(u), knots - 2);
    const double t = u - a;
    const auto& p = key[a];
    const auto& q = key[a + 1];
    CatheterState s;
    s.insertion_mm = p.insertion_mm + t * (q.insertion_mm - p.insertion_mm);
    s.knob1_deg = p.knob1_deg + t * (q.knob1_deg - p.knob1_deg);
    s.knob2_deg = p.knob2_deg + t * (q.knob2_deg - p.knob2_deg);
    s.roll_deg = wrap_deg(p.roll_deg + t * wrap_deg(q.roll_deg - p.roll_deg));
    // Interpolated states can leave the observable set; fall back to the nearer key.
    if (!is_observable(forward_kinematics(s, cfg), rig)) s = t < 0.5 ? p : q;
    out.push_back(s);
  }
  return out;
}

}  // namespace cathtrack
