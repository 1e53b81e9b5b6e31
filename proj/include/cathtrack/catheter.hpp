#pragma once

// Parametric catheter used as the ground-truth source for the synthetic rig.
//
// Piecewise-constant-curvature model. Walking from the inlet (origin, heading
// +X) the catheter is: a straight shaft, a proximal arc whose total bend is
// knob2, then a distal arc whose total bend is knob1. The proximal arc bends
// toward +Y; roll spins the distal bend plane about the local tangent. When
// the catheter is only partially inserted the distal part emerges first and a
// partially emerged arc keeps the curvature of the full segment.
//
// This two-segment articulation is a stand-in: the real device geometry is not
// documented, only that the handle has two bending knobs.

#include "cathtrack/errors.hpp"
#include "cathtrack/geometry.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace cathtrack {

struct CatheterConfig {
  double distal_length_mm = 35.0;
  double proximal_length_mm = 45.0;
  double max_insertion_mm = 120.0;
  double knob_limit_deg = 180.0;
  double sample_spacing_mm = 0.5;

  void validate() const {
    if (!(distal_length_mm > 0.0) || !(proximal_length_mm > 0.0))
      throw ConfigError("catheter segment lengths must be positive");
    if (distal_length_mm + proximal_length_mm > max_insertion_mm)
      throw ConfigError("segment lengths exceed max_insertion_mm");
    if (!(knob_limit_deg > 0.0)) throw ConfigError("knob_limit_deg must be positive");
    if (!(sample_spacing_mm > 0.0) || sample_spacing_mm > 0.5)
      throw ConfigError("sample_spacing_mm must be in (0, 0.5]");
  }
};

struct CatheterState {
  double insertion_mm = 0.0;
  double knob1_deg = 0.0;  // distal segment
  double knob2_deg = 0.0;  // proximal segment
  double roll_deg = 0.0;

  friend bool operator==(const CatheterState&, const CatheterState&) = default;
};

// Signed rates applied by `step`. Units per second.
struct ControlRates {
  double insertion_mm_s = 0.0;
  double knob1_deg_s = 0.0;
  double knob2_deg_s = 0.0;
  double roll_deg_s = 0.0;

  friend bool operator==(const ControlRates&, const ControlRates&) = default;
};

// Tip first, entry (inlet) last.
struct CatheterCurve {
  std::vector<Vec3> points;
  double arc_length_mm = 0.0;

  const Vec3& tip() const { return points.front(); }
  const Vec3& entry() const { return points.back(); }
};

inline void validate_state(const CatheterState& s, const CatheterConfig& cfg) {
  if (!std::isfinite(s.insertion_mm) || s.insertion_mm < 0.0 || s.insertion_mm > cfg.max_insertion_mm)
    throw InvalidStateError("insertion_mm out of range [0, " + std::to_string(cfg.max_insertion_mm) +
                            "]: " + std::to_string(s.insertion_mm));
  if (!std::isfinite(s.knob1_deg) || std::abs(s.knob1_deg) > cfg.knob_limit_deg)
    throw InvalidStateError("knob1_deg beyond mechanical limit: " + std::to_string(s.knob1_deg));
  if (!std::isfinite(s.knob2_deg) || std::abs(s.knob2_deg) > cfg.knob_limit_deg)
    throw InvalidStateError("knob2_deg beyond mechanical limit: " + std::to_string(s.knob2_deg));
  if (!std::isfinite(s.roll_deg)) throw InvalidStateError("roll_deg is not finite");
}

namespace detail {

struct Frame {
  Vec3 pos{0.0, 0.0, 0.0};
  Vec3 tangent{1.0, 0.0, 0.0};
  Vec3 bend{0.0, 1.0, 0.0};
};

// Discrete constant-curvature arc: equal chords, each turning by
// curvature*chord, with the chord direction taken at the chord midpoint. The
// vertices lie on a circle and the chord lengths sum to `length` exactly.
inline void walk_arc(Frame& f, double length, double curvature, double spacing,
                     std::vector<Vec3>& out) {
  if (length <= 0.0) return;
  const auto n = static_cast<int>(std::ceil(length / spacing - 1e-12));
  const double chord = length / n;
  const double turn = curvature * chord;
  auto rotate = [&f](double a) {
    const double c = std::cos(a), s = std::sin(a);
    const Vec3 t = f.tangent * c + f.bend * s;
    const Vec3 b = -f.tangent * s + f.bend * c;
    f.tangent = t.normalized();
    f.bend = b.normalized();
  };
  for (int i = 0; i < n; ++i) {
    rotate(0.5 * turn);
    f.pos += chord * f.tangent;
    rotate(0.5 * turn);
    out.push_back(f.pos);
  }
}

}  // namespace detail

inline CatheterCurve forward_kinematics(const CatheterState& state, const CatheterConfig& cfg) {
  validate_state(state, cfg);

  const double ins = state.insertion_mm;
  const double distal = std::min(ins, cfg.distal_length_mm);
  const double proximal = std::min(ins - distal, cfg.proximal_length_mm);
  const double straight = ins - distal - proximal;

  const double k_prox = state.knob2_deg * kDegToRad / cfg.proximal_length_mm;
  const double k_dist = state.knob1_deg * kDegToRad / cfg.distal_length_mm;

  std::vector<Vec3> base_first;
  base_first.reserve(static_cast<std::size_t>(ins / cfg.sample_spacing_mm) + 8);
  detail::Frame f;
  base_first.push_back(f.pos);

  detail::walk_arc(f, straight, 0.0, cfg.sample_spacing_mm, base_first);
  detail::walk_arc(f, proximal, k_prox, cfg.sample_spacing_mm, base_first);
  f.bend = rotate_about(f.bend, f.tangent, state.roll_deg * kDegToRad).normalized();
  detail::walk_arc(f, distal, k_dist, cfg.sample_spacing_mm, base_first);

  if (base_first.size() == 1) base_first.push_back(f.pos);  // zero insertion

  CatheterCurve curve;
  curve.points.assign(base_first.rbegin(), base_first.rend());
  curve.arc_length_mm = ins;
  return curve;
}

inline CatheterState step(const CatheterState& s, const ControlRates& rates, double dt,
                          const CatheterConfig& cfg) {
  if (!(dt > 0.0)) throw ParameterError("step: dt must be positive");
  CatheterState out = s;
  out.insertion_mm = std::clamp(s.insertion_mm + rates.insertion_mm_s * dt, 0.0, cfg.max_insertion_mm);
  out.knob1_deg = std::clamp(s.knob1_deg + rates.knob1_deg_s * dt, -cfg.knob_limit_deg, cfg.knob_limit_deg);
  out.knob2_deg = std::clamp(s.knob2_deg + rates.knob2_deg_s * dt, -cfg.knob_limit_deg, cfg.knob_limit_deg);
  out.roll_deg = wrap_deg(s.roll_deg + rates.roll_deg_s * dt);
  return out;
}

// Key-value text: one `key = value` per line, '#' starts a comment.
inline std::map<std::string, std::string> parse_key_values(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string{};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline CatheterConfig parse_catheter_config(std::istream& in) {
  CatheterConfig cfg;
  const std::map<std::string, double*> fields = {
      {"distal_length_mm", &cfg.distal_length_mm},
      {"proximal_length_mm", &cfg.proximal_length_mm},
      {"max_insertion_mm", &cfg.max_insertion_mm},
      {"knob_limit_deg", &cfg.knob_limit_deg},
      {"sample_spacing_mm", &cfg.sample_spacing_mm},
  };
  for (const auto& [key, value] : parse_key_values(in)) {
    auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError("unknown catheter config key: " + key);
    double v = 0.0;
    auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc{} || p != value.data() + value.size())
      throw ConfigError("bad number for " + key + ": " + value);
    *it->second = v;
  }
  cfg.validate();
  return cfg;
}

inline CatheterConfig load_catheter_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open catheter config: " + path);
  return parse_catheter_config(in);
}

}  // namespace cathtrack
