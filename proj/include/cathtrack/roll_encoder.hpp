#pragma once

// Roll angle from a quadrature encoder geared to the catheter.
//
// x4 decoding: every edge of either channel is one count. The channel pair
// walks the Gray sequence 00 -> 01 -> 11 -> 10 -> 00 for forward rotation.

#include "cathtrack/errors.hpp"
#include "cathtrack/geometry.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cathtrack {

struct QuadratureSample {
  double t_ms = 0.0;
  std::uint8_t a = 0;
  std::uint8_t b = 0;

  int phase() const { return (a << 1) | b; }
  friend bool operator==(const QuadratureSample&, const QuadratureSample&) = default;
};

struct RollCalibration {
  int ppr = 600;              // pulses per encoder revolution
  double gear_ratio = 1.0;    // encoder revolutions per catheter revolution
  double zero_offset_deg = 0.0;

  void validate() const {
    if (ppr < 1) throw ParameterError("roll calibration: ppr must be >= 1");
    if (!(gear_ratio > 0.0)) throw ParameterError("roll calibration: gear_ratio must be > 0");
  }
  double counts_per_degree() const { return 4.0 * ppr * gear_ratio / 360.0; }
  // One count expressed as catheter roll.
  double quantum_deg() const { return 360.0 / (4.0 * ppr * gear_ratio); }
};

// Position of a 2-bit phase in the forward Gray cycle.
inline constexpr int gray_index(int phase) {
  constexpr int table[4] = {0, 1, 3, 2};  // 00, 01, 10, 11
  return table[phase & 3];
}

inline constexpr int gray_phase(std::int64_t count) {
  constexpr int seq[4] = {0b00, 0b01, 0b11, 0b10};
  return seq[((count % 4) + 4) % 4];
}

// Count change for one phase transition: 0 (no change), +1, -1, or nullopt
// when both channels flipped.
inline constexpr std::optional<int> quadrature_step(int from, int to) {
  const int d = (gray_index(to) - gray_index(from) + 4) % 4;
  switch (d) {
    case 0: return 0;
    case 1: return 1;
    case 3: return -1;
    default: return std::nullopt;
  }
}

// Streaming decoder; owned by a single reader.
class QuadratureDecoder {
 public:
  QuadratureDecoder() = default;

  // First call sets the reference phase.
  void feed(const QuadratureSample& s) {
    if (!phase_) {
      phase_ = s.phase();
      ++index_;
      return;
    }
    const auto step = quadrature_step(*phase_, s.phase());
    if (!step)
      throw GlitchError(index_, "quadrature glitch at sample " + std::to_string(index_) +
                                    ": both channels changed (sampling too slow)");
    count_ += *step;
    phase_ = s.phase();
    ++index_;
  }

  std::int64_t count() const { return count_; }
  void reset() {
    phase_.reset();
    count_ = 0;
    index_ = 0;
  }

 private:
  std::optional<int> phase_;
  std::int64_t count_ = 0;
  std::size_t index_ = 0;
};

inline std::int64_t decode(const std::vector<QuadratureSample>& stream) {
  QuadratureDecoder dec;
  for (const auto& s : stream) dec.feed(s);
  return dec.count();
}

inline double counts_to_angle(std::int64_t count, const RollCalibration& calib) {
  calib.validate();
  return wrap_deg(static_cast<double>(count) * 360.0 / (4.0 * calib.ppr) / calib.gear_ratio - calib.zero_offset_deg);
}

// The sample sequence a perfect encoder emits while the catheter follows the
// piecewise-linear roll profile. The first sample carries the initial phase;
// each further sample is one edge, timed where the profile crosses it. A
// constant profile therefore yields only the initial sample (no edges).
inline std::vector<QuadratureSample> simulate_rotation(const std::vector<std::pair<double, double>>& profile,
                                                       const RollCalibration& calib) {
  calib.validate();
  std::vector<QuadratureSample> out;
  if (profile.empty()) return out;
  for (std::size_t i = 1; i < profile.size(); ++i)
    if (!(profile[i].first > profile[i - 1].first))
      throw ParameterError("simulate_rotation: profile times must increase");

  const double cpd = calib.counts_per_degree();
  auto position = [&](double deg) { return (deg + calib.zero_offset_deg) * cpd; };
  auto emit = [&](double t, std::int64_t count) {
    const int ph = gray_phase(count);
    out.push_back({t, static_cast<std::uint8_t>(ph >> 1), static_cast<std::uint8_t>(ph & 1)});
  };

  std::int64_t count = static_cast<std::int64_t>(std::floor(position(profile.front().second)));
  emit(profile.front().first, count);
  for (std::size_t i = 1; i < profile.size(); ++i) {
    const auto [t0, d0] = profile[i - 1];
    const auto [t1, d1] = profile[i];
    const double p0 = position(d0), p1 = position(d1);
    const auto target = static_cast<std::int64_t>(std::floor(p1));
    while (count != target) {
      // Edge between `count` and the next count in the direction of travel.
      const std::int64_t next = target > count ? count + 1 : count - 1;
      const double edge = static_cast<double>(target > count ? next : count);
      const double u = p1 != p0 ? (edge - p0) / (p1 - p0) : 1.0;
      count = next;
      emit(t0 + std::clamp(u, 0.0, 1.0) * (t1 - t0), count);
    }
  }
  return out;
}

// --- serial framing -------------------------------------------------------
//
// ASCII lines at 115200 baud: "C:<signed int>\n" carries the running count,
// "Q:<a><b>\n" a raw channel sample. Either may be preceded by "T:<ms> ".

struct SerialRecord {
  std::optional<std::int64_t> t_ms;
  std::optional<std::int64_t> count;
  std::optional<QuadratureSample> sample;

  friend bool operator==(const SerialRecord&, const SerialRecord&) = default;
};

namespace detail {

inline std::int64_t parse_int(std::string_view text, std::string_view line) {
  std::int64_t v = 0;
  if (text.empty()) throw FramingError(std::string(line), "empty numeric field");
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec == std::errc::result_out_of_range) throw FramingError(std::string(line), "numeric overflow");
  if (ec != std::errc{} || p != text.data() + text.size())
    throw FramingError(std::string(line), "non-numeric payload");
  return v;
}

}  // namespace detail

inline SerialRecord parse_serial_line(std::string_view line) {
  const std::string_view original = line;
  if (line.empty() || line.back() != '\n') throw FramingError(std::string(original), "line not newline-terminated");
  line.remove_suffix(1);
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

  SerialRecord rec;
  if (line.starts_with("T:")) {
    const auto sp = line.find(' ');
    if (sp == std::string_view::npos) throw FramingError(std::string(original), "timestamp without payload");
    rec.t_ms = detail::parse_int(line.substr(2, sp - 2), original);
    line.remove_prefix(sp + 1);
  }
  if (line.starts_with("C:")) {
    rec.count = detail::parse_int(line.substr(2), original);
  } else if (line.starts_with("Q:")) {
    const auto bits = line.substr(2);
    if (bits.size() != 2 || (bits[0] != '0' && bits[0] != '1') || (bits[1] != '0' && bits[1] != '1'))
      throw FramingError(std::string(original), "quadrature sample must be two binary digits");
    QuadratureSample s;
    s.t_ms = rec.t_ms ? static_cast<double>(*rec.t_ms) : 0.0;
    s.a = static_cast<std::uint8_t>(bits[0] - '0');
    s.b = static_cast<std::uint8_t>(bits[1] - '0');
    rec.sample = s;
  } else {
    throw FramingError(std::string(original), "unknown record tag");
  }
  return rec;
}

inline std::string format_count_line(std::int64_t count, std::optional<std::int64_t> t_ms = {}) {
  std::string s;
  if (t_ms) s += "T:" + std::to_string(*t_ms) + ' ';
  s += "C:" + std::to_string(count) + '\n';
  return s;
}

// Roll angle over time from a replay file of count records.
class SerialReplay {
 public:
  static SerialReplay load(const std::string& path, const RollCalibration& calib) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open serial replay: " + path);
    SerialReplay r;
    r.calib_ = calib;
    std::string line;
    while (std::getline(in, line)) {
      line.push_back('\n');
      const auto rec = parse_serial_line(line);
      if (rec.count) r.counts_.emplace_back(rec.t_ms.value_or(0), *rec.count);
    }
    return r;
  }

  bool empty() const { return counts_.empty(); }

  // Angle of the latest record at or before t_ms (first record if none).
  double angle_at(std::int64_t t_ms) const {
    if (counts_.empty()) return 0.0;
    auto best = counts_.front().second;
    for (const auto& [t, c] : counts_) {
      if (t > t_ms) break;
      best = c;
    }
    return counts_to_angle(best, calib_);
  }

 private:
  RollCalibration calib_;
  std::vector<std::pair<std::int64_t, std::int64_t>> counts_;
};

}  // namespace cathtrack
