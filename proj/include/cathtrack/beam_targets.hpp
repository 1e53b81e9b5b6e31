#pragma once

// Ultrasound fan drawn from the catheter tip, spherical targets, and the
// six-target navigation task metrics.

#include "cathtrack/errors.hpp"
#include "cathtrack/fusion.hpp"
#include "cathtrack/geometry.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace cathtrack {

struct BeamSpec {
  double length_mm = 40.0;
  double near_width_mm = 4.0;
  double far_width_mm = 24.0;

  void validate() const {
    if (!(length_mm > 0.0)) throw ConfigError("beam length_mm must be > 0");
    if (!(near_width_mm >= 0.0) || !(far_width_mm >= near_width_mm))
      throw ConfigError("beam widths must satisfy far_width_mm >= near_width_mm >= 0");
  }
};

struct BeamPose {
  Vec3 apex = Vec3::Zero();
  Vec3 axis = Vec3::UnitX();
  Vec3 width_dir = Vec3::UnitY();  // in the fan plane, orthogonal to axis
  Vec3 normal = Vec3::UnitZ();     // fan-plane normal, axis x width_dir
};

struct BeamGeometry {
  BeamPose pose;
  // near+, far+, far-, near- (a closed outline in that order)
  std::array<Vec3, 4> vertices;
  Vec3 beam_end = Vec3::Zero();
};

// The fan's width direction at roll 0 is `reference` (default world +Y)
// made orthogonal to the tip tangent; roll turns it about the tangent. If the
// tangent is parallel to the reference, +Z stands in.
inline BeamGeometry beam_geometry(const Track3D& track, const BeamSpec& spec,
                                  const Vec3& reference = Vec3::UnitY(), const Vec3& fallback = Vec3::UnitZ()) {
  spec.validate();
  if (track.points.size() < 2) throw GeometryError("beam_geometry: track needs at least 2 points");
  const Vec3 d = track.points[0] - track.points[1];
  const double len = d.norm();
  if (!(len > 1e-12)) throw GeometryError("beam_geometry: degenerate tip tangent (first points coincide)");

  BeamGeometry g;
  g.pose.apex = track.points[0];
  g.pose.axis = d / len;
  const Vec3& a = g.pose.axis;
  Vec3 w = reference - reference.dot(a) * a;
  if (w.norm() < 1e-9 * reference.norm() || w.norm() < 1e-12) w = fallback - fallback.dot(a) * a;
  w.normalize();
  w = rotate_about(w, a, track.roll_deg * kDegToRad);
  w = (w - w.dot(a) * a).normalized();
  g.pose.width_dir = w;
  g.pose.normal = a.cross(w).normalized();

  const Vec3 far_c = g.pose.apex + spec.length_mm * a;
  const double hn = 0.5 * spec.near_width_mm, hf = 0.5 * spec.far_width_mm;
  g.vertices = {g.pose.apex + hn * w, far_c + hf * w, far_c - hf * w, g.pose.apex - hn * w};
  g.beam_end = far_c;
  return g;
}

struct TargetSpec {
  std::string id;
  Vec3 center = Vec3::Zero();
  double radius_mm = 5.0;

  friend bool operator==(const TargetSpec&, const TargetSpec&) = default;
};

struct TargetFeedback {
  double distance_mm = 0.0;
  double angle_deg = 0.0;

  friend bool operator==(const TargetFeedback&, const TargetFeedback&) = default;
};

// Angle is between the beam axis and apex->target; a target sitting on the
// apex has angle 0.
inline TargetFeedback target_feedback(const BeamGeometry& beam, const TargetSpec& target) {
  TargetFeedback fb;
  fb.distance_mm = (beam.beam_end - target.center).norm();
  const Vec3 v = target.center - beam.pose.apex;
  if (v.norm() == 0.0) return fb;
  fb.angle_deg = std::atan2(beam.pose.axis.cross(v).norm(), beam.pose.axis.dot(v)) * kRadToDeg;
  return fb;
}

// --- task session -------------------------------------------------------------

struct SessionConfig {
  double dwell_ms = 500.0;
  double timeout_ms = 0.0;  // 0: no timeout
};

struct SessionMetrics {
  double t_s = 0.0;
  int nT = 0;
  int total = 0;
  std::optional<double> tT_s;              // present once nT > 0
  std::vector<std::int64_t> reached_ms;    // per target, from session start
  bool running = false;
  bool finished = false;
  bool timed_out = false;

  friend bool operator==(const SessionMetrics&, const SessionMetrics&) = default;
};

enum class ViewMode { TwoD, ThreeD };

inline const char* to_string(ViewMode m) { return m == ViewMode::TwoD ? "2D" : "3D"; }
inline ViewMode view_mode_from_string(const std::string& s) {
  if (s == "2D") return ViewMode::TwoD;
  if (s == "3D") return ViewMode::ThreeD;
  throw ParameterError("view mode must be 2D or 3D, got: " + s);
}

// Targets are visited in fixed order. A target counts as reached once the
// beam end has stayed inside its sphere for the dwell time. t is the time of
// the last reach (or the elapsed time while running / at timeout) and tT is
// the last reach time divided by nT.
class Session {
 public:
  Session(std::vector<TargetSpec> targets, SessionConfig cfg = {}) : targets_(std::move(targets)), cfg_(cfg) {
    for (const auto& t : targets_)
      if (!(t.radius_mm > 0.0)) throw ConfigError("target " + t.id + ": radius must be > 0");
    metrics_.total = static_cast<int>(targets_.size());
  }

  const std::vector<TargetSpec>& targets() const { return targets_; }
  const SessionConfig& config() const { return cfg_; }
  const SessionMetrics& metrics() const { return metrics_; }
  ViewMode mode() const { return mode_; }

  const TargetSpec* current_target() const {
    if (metrics_.nT >= metrics_.total) return nullptr;
    return &targets_[static_cast<std::size_t>(metrics_.nT)];
  }

  void start(std::int64_t now_ms) {
    reset_metrics();
    metrics_.running = true;
    start_ms_ = now_ms;
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& t : targets_) ids.push_back(t.id);
    emit({{"event", "start"}, {"t_ms", now_ms}, {"targets", ids}, {"dwell_ms", cfg_.dwell_ms},
          {"timeout_ms", cfg_.timeout_ms}, {"mode", to_string(mode_)}});
  }

  void reset(std::int64_t now_ms) {
    reset_metrics();
    emit({{"event", "reset"}, {"t_ms", now_ms}});
  }

  void set_mode(ViewMode m, std::int64_t now_ms) {
    mode_ = m;
    emit({{"event", "mode"}, {"t_ms", now_ms}, {"view", to_string(m)}});
  }

  // `beam_end` absent means no catheter this tick (counts as outside).
  const SessionMetrics& update(const std::optional<Vec3>& beam_end, std::int64_t now_ms) {
    if (!metrics_.running) return metrics_;
    const std::int64_t elapsed = std::max<std::int64_t>(now_ms - start_ms_, last_elapsed_);
    last_elapsed_ = elapsed;
    metrics_.t_s = static_cast<double>(elapsed) / 1000.0;

    const TargetSpec* target = current_target();
    if (target && beam_end && (*beam_end - target->center).norm() <= target->radius_mm) {
      if (!inside_since_) inside_since_ = elapsed;
      if (static_cast<double>(elapsed - *inside_since_) >= cfg_.dwell_ms) {
        metrics_.reached_ms.push_back(elapsed);
        ++metrics_.nT;
        metrics_.tT_s = static_cast<double>(elapsed) / 1000.0 / metrics_.nT;
        inside_since_.reset();
        emit({{"event", "reached"}, {"t_ms", now_ms}, {"target", target->id}, {"index", metrics_.nT - 1},
              {"elapsed_ms", elapsed}});
        if (metrics_.nT == metrics_.total) {
          finish(now_ms, false);
          return metrics_;
        }
      }
    } else {
      inside_since_.reset();
    }

    if (cfg_.timeout_ms > 0.0 && static_cast<double>(elapsed) >= cfg_.timeout_ms) finish(now_ms, true);
    return metrics_;
  }

  // Events since the last call, oldest first.
  std::vector<nlohmann::json> drain_events() { return std::exchange(events_, {}); }

 private:
  void reset_metrics() {
    const int total = metrics_.total;
    metrics_ = SessionMetrics{};
    metrics_.total = total;
    inside_since_.reset();
    last_elapsed_ = 0;
  }

  void finish(std::int64_t now_ms, bool timed_out) {
    metrics_.running = false;
    metrics_.finished = true;
    metrics_.timed_out = timed_out;
    if (!timed_out) metrics_.t_s = static_cast<double>(metrics_.reached_ms.back()) / 1000.0;
    nlohmann::json j = {{"event", "final"},
                        {"t_ms", now_ms},
                        {"t_s", metrics_.t_s},
                        {"nT", metrics_.nT},
                        {"total", metrics_.total},
                        {"timed_out", timed_out},
                        {"reached_ms", metrics_.reached_ms}};
    j["tT_s"] = metrics_.tT_s ? nlohmann::json(*metrics_.tT_s) : nlohmann::json(nullptr);
    emit(std::move(j));
  }

  void emit(nlohmann::json ev) { events_.push_back(std::move(ev)); }

  std::vector<TargetSpec> targets_;
  SessionConfig cfg_;
  SessionMetrics metrics_;
  ViewMode mode_ = ViewMode::ThreeD;
  std::int64_t start_ms_ = 0;
  std::int64_t last_elapsed_ = 0;
  std::optional<std::int64_t> inside_since_;
  std::vector<nlohmann::json> events_;
};

inline void write_session_event(std::ostream& out, const nlohmann::json& ev) { out << ev.dump() << '\n'; }

// Rebuilds the metrics of the last session in a log from its start/reached/
// final records alone. Mode switches are collected in order.
struct SessionReplay {
  SessionMetrics metrics;
  std::vector<std::pair<std::int64_t, ViewMode>> modes;
};

inline SessionReplay replay_session_log(std::istream& in) {
  SessionReplay r;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json ev;
    try {
      ev = nlohmann::json::parse(line);
      const auto kind = ev.at("event").get<std::string>();
      const auto t = ev.at("t_ms").get<std::int64_t>();
      auto& m = r.metrics;
      if (kind == "start") {
        const int total = static_cast<int>(ev.at("targets").size());
        m = SessionMetrics{};
        m.total = total;
        m.running = true;
      } else if (kind == "reset") {
        const int total = m.total;
        m = SessionMetrics{};
        m.total = total;
      } else if (kind == "mode") {
        r.modes.emplace_back(t, view_mode_from_string(ev.at("view").get<std::string>()));
      } else if (kind == "reached") {
        const auto e = ev.at("elapsed_ms").get<std::int64_t>();
        m.reached_ms.push_back(e);
        ++m.nT;
        m.tT_s = static_cast<double>(e) / 1000.0 / m.nT;
        m.t_s = static_cast<double>(e) / 1000.0;
      } else if (kind == "final") {
        m.running = false;
        m.finished = true;
        m.timed_out = ev.at("timed_out").get<bool>();
        m.t_s = ev.at("t_s").get<double>();
      } else {
        throw ConfigError("unknown event '" + kind + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("session log line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return r;
}

// --- scene file -----------------------------------------------------------------
//
// {"mesh": "heart.mesh", "registration": "registration.txt",
//  "beam": {"length_mm", "near_width_mm", "far_width_mm"},
//  "session": {"dwell_ms", "timeout_ms"},
//  "targets": [{"id", "center": [x, y, z], "radius_mm"}]}
// Paths are relative to the scene file. Target centres are in model space.

struct Scene {
  std::filesystem::path mesh;
  std::filesystem::path registration;  // empty: identity
  BeamSpec beam;
  SessionConfig session;
  std::vector<TargetSpec> targets;
};

inline nlohmann::json target_to_json(const TargetSpec& t) {
  return {{"id", t.id}, {"center", {t.center.x(), t.center.y(), t.center.z()}}, {"radius_mm", t.radius_mm}};
}

inline TargetSpec target_from_json(const nlohmann::json& j) {
  TargetSpec t;
  t.id = j.at("id").get<std::string>();
  const auto& c = j.at("center");
  if (!c.is_array() || c.size() != 3) throw ConfigError("target center must be [x, y, z]");
  t.center = Vec3(c[0].get<double>(), c[1].get<double>(), c[2].get<double>());
  t.radius_mm = j.value("radius_mm", 5.0);
  return t;
}

inline Scene scene_from_json(const nlohmann::json& j, const std::filesystem::path& base = {}) {
  Scene s;
  try {
    auto rel = [&](const std::string& p) { return p.empty() ? std::filesystem::path{} : base / p; };
    s.mesh = rel(j.value("mesh", std::string{}));
    s.registration = rel(j.value("registration", std::string{}));
    if (j.contains("beam")) {
      const auto& b = j["beam"];
      s.beam.length_mm = b.value("length_mm", s.beam.length_mm);
      s.beam.near_width_mm = b.value("near_width_mm", s.beam.near_width_mm);
      s.beam.far_width_mm = b.value("far_width_mm", s.beam.far_width_mm);
    }
    if (j.contains("session")) {
      s.session.dwell_ms = j["session"].value("dwell_ms", s.session.dwell_ms);
      s.session.timeout_ms = j["session"].value("timeout_ms", s.session.timeout_ms);
    }
    for (const auto& t : j.at("targets")) s.targets.push_back(target_from_json(t));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scene: ") + e.what());
  }
  s.beam.validate();
  if (s.session.dwell_ms < 0.0 || s.session.timeout_ms < 0.0) throw ConfigError("scene: negative session time");
  return s;
}

inline Scene load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scene file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return scene_from_json(j, path.parent_path());
}

}  // namespace cathtrack
