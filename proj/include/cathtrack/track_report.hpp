#pragma once

// Accuracy of tracks against ground-truth curves: tip distance and RMS over
// the K points, with the truth sampled at the same normalized arclengths.

#include "cathtrack/fusion.hpp"
#include "cathtrack/geometry.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

namespace cathtrack {

struct FrameError {
  double tip_mm = 0.0;
  double rms_mm = 0.0;
};

inline FrameError frame_error(const Track3D& track, const std::vector<Vec3>& truth_tip_first) {
  if (!track.present() || truth_tip_first.empty()) throw ParameterError("frame_error: need a track and a truth curve");
  const auto ref = resample_uniform(truth_tip_first, track.points.size());
  FrameError e;
  e.tip_mm = (track.points.front() - ref.front()).norm();
  double sq = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) sq += (track.points[i] - ref[i]).squaredNorm();
  e.rms_mm = std::sqrt(sq / static_cast<double>(ref.size()));
  return e;
}

struct ErrorReport {
  int frames = 0;
  int tracked = 0;   // frames with a track, scored against truth
  int missed = 0;    // truth present but no track
  double mean_tip_mm = 0.0;
  double max_tip_mm = 0.0;
  double mean_rms_mm = 0.0;
  double max_rms_mm = 0.0;

  void add(const Track3D& track, const std::vector<Vec3>* truth) {
    ++frames;
    if (!truth || truth->size() < 2) return;
    if (!track.present()) {
      ++missed;
      return;
    }
    const auto e = frame_error(track, *truth);
    sum_tip_ += e.tip_mm;
    sum_rms_ += e.rms_mm;
    ++tracked;
    max_tip_mm = std::max(max_tip_mm, e.tip_mm);
    max_rms_mm = std::max(max_rms_mm, e.rms_mm);
    mean_tip_mm = sum_tip_ / tracked;
    mean_rms_mm = sum_rms_ / tracked;
  }

  double tracked_fraction() const {
    const int scored = tracked + missed;
    return scored == 0 ? 0.0 : static_cast<double>(tracked) / scored;
  }

  nlohmann::json to_json() const {
    auto opt = [this](double v) { return tracked > 0 ? nlohmann::json(v) : nlohmann::json(nullptr); };
    return {{"frames", frames},           {"tracked", tracked},         {"missed", missed},
            {"mean_tip_mm", opt(mean_tip_mm)}, {"max_tip_mm", opt(max_tip_mm)},
            {"mean_rms_mm", opt(mean_rms_mm)}, {"max_rms_mm", opt(max_rms_mm)}};
  }

 private:
  double sum_tip_ = 0.0;
  double sum_rms_ = 0.0;
};

}  // namespace cathtrack
