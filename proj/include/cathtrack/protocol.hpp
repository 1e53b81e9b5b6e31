#pragma once

// WebSocket JSON messages between the stream server and its clients.
//
// Server -> client: one "frame" object per tick (a full state snapshot).
// Client -> server: "control" (rates), "session" (start/reset), "mode" (2D/3D).
// Objects are encoded with sorted keys and shortest round-trip numbers, so an
// encoding is canonical. Decoders ignore fields they do not know.

#include "cathtrack/beam_targets.hpp"
#include "cathtrack/catheter.hpp"
#include "cathtrack/errors.hpp"
#include "cathtrack/fusion.hpp"
#include "cathtrack/geometry.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace cathtrack {

struct BeamMessage {
  std::array<Vec3, 4> vertices;
  Vec3 beam_end = Vec3::Zero();
  friend bool operator==(const BeamMessage&, const BeamMessage&) = default;
};

struct MetricsMessage {
  double t_s = 0.0;
  int nT = 0;
  int total = 0;
  std::optional<double> tT_s;
  bool running = false;
  bool finished = false;
  friend bool operator==(const MetricsMessage&, const MetricsMessage&) = default;
};

struct FrameMessage {
  std::uint64_t seq = 0;
  std::int64_t timestamp_ms = 0;
  TrackStatus status = TrackStatus::NoCatheter;
  std::vector<Vec3> points;  // model space, tip first
  double roll_deg = 0.0;
  std::optional<BeamMessage> beam;
  std::optional<TargetSpec> target;
  std::optional<TargetFeedback> feedback;
  MetricsMessage metrics;
  double consistency_mm = 0.0;
  bool warning = false;
  std::string mode = "3D";
  std::int64_t ack = 0;  // id of the newest control message applied

  friend bool operator==(const FrameMessage&, const FrameMessage&) = default;
};

enum class ControlKind { Control, Session, Mode };

struct ControlMessage {
  ControlKind kind = ControlKind::Control;
  std::int64_t id = 0;                      // optional, echoed as frame.ack
  ControlRates rates;                       // kind == Control
  std::optional<std::int64_t> duration_ms;  // kind == Control; rates revert to 0 afterwards
  std::string action;                       // kind == Session: "start" | "reset"
  ViewMode view = ViewMode::ThreeD;         // kind == Mode

  friend bool operator==(const ControlMessage&, const ControlMessage&) = default;
};

namespace detail {

inline nlohmann::json vec_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

inline const nlohmann::json& field(const nlohmann::json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end()) throw ProtocolError(std::string("missing field '") + name + "'", 0, name);
  return *it;
}

template <typename T>
T field_as(const nlohmann::json& j, const char* name) {
  const auto& v = field(j, name);
  // get<integer>() would silently truncate 1.5 or wrap -1.
  if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
    const bool ok = std::is_signed_v<T> ? v.is_number_integer() : v.is_number_unsigned();
    if (!ok) throw ProtocolError(std::string("field '") + name + "' must be an integer", 0, name);
  }
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ProtocolError(std::string("field '") + name + "' has the wrong type", 0, name);
  }
}

inline double finite_number(const nlohmann::json& j, const char* name) {
  const auto& v = field(j, name);
  if (!v.is_number()) throw ProtocolError(std::string("field '") + name + "' must be a number", 0, name);
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ProtocolError(std::string("field '") + name + "' must be finite", 0, name);
  return d;
}

inline Vec3 vec_from(const nlohmann::json& v, const char* name) {
  if (!v.is_array() || v.size() != 3 || !v[0].is_number() || !v[1].is_number() || !v[2].is_number())
    throw ProtocolError(std::string("field '") + name + "' must be [x, y, z]", 0, name);
  return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

inline nlohmann::json parse_object(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    // nlohmann counts bytes from 1; offsets here are 0-based.
    throw ProtocolError(std::string("malformed JSON: ") + e.what(), e.byte > 0 ? e.byte - 1 : 0);
  } catch (const nlohmann::json::out_of_range& e) {
    // Number overflow; the message quotes the literal, which locates it.
    const std::string what = e.what();
    std::size_t at = 0;
    if (auto a = what.find('\''), b = what.rfind('\''); a != std::string::npos && b > a)
      if (auto pos = text.find(what.substr(a + 1, b - a - 1)); pos != std::string_view::npos) at = pos;
    throw ProtocolError(std::string("malformed JSON: ") + what, at);
  }
  if (!j.is_object()) throw ProtocolError("message must be a JSON object", 0);
  return j;
}

}  // namespace detail

inline nlohmann::json frame_to_json(const FrameMessage& m) {
  using detail::vec_json;
  nlohmann::json j;
  j["type"] = "frame";
  j["seq"] = m.seq;
  j["timestamp_ms"] = m.timestamp_ms;
  j["status"] = to_string(m.status);
  j["points"] = nlohmann::json::array();
  for (const auto& p : m.points) j["points"].push_back(vec_json(p));
  j["roll_deg"] = m.roll_deg;
  if (m.beam) {
    nlohmann::json v = nlohmann::json::array();
    for (const auto& p : m.beam->vertices) v.push_back(vec_json(p));
    j["beam"] = {{"vertices", v}, {"beam_end", vec_json(m.beam->beam_end)}};
  } else {
    j["beam"] = nullptr;
  }
  j["target"] = m.target ? target_to_json(*m.target) : nlohmann::json(nullptr);
  j["feedback"] = m.feedback ? nlohmann::json{{"distance_mm", m.feedback->distance_mm},
                                              {"angle_deg", m.feedback->angle_deg}}
                             : nlohmann::json(nullptr);
  j["metrics"] = {{"t_s", m.metrics.t_s},
                  {"nT", m.metrics.nT},
                  {"total", m.metrics.total},
                  {"tT_s", m.metrics.tT_s ? nlohmann::json(*m.metrics.tT_s) : nlohmann::json(nullptr)},
                  {"running", m.metrics.running},
                  {"finished", m.metrics.finished}};
  j["consistency_mm"] = m.consistency_mm;
  j["warning"] = m.warning;
  j["mode"] = m.mode;
  j["ack"] = m.ack;
  return j;
}

inline std::string encode_frame(const FrameMessage& m) { return frame_to_json(m).dump(); }

inline FrameMessage decode_frame(std::string_view text) {
  using namespace detail;
  const auto j = parse_object(text);
  if (field_as<std::string>(j, "type") != "frame") throw ProtocolError("not a frame message", 0, "type");
  FrameMessage m;
  m.seq = field_as<std::uint64_t>(j, "seq");
  m.timestamp_ms = field_as<std::int64_t>(j, "timestamp_ms");
  try {
    m.status = track_status_from_string(field_as<std::string>(j, "status"));
  } catch (const ParameterError& e) {
    throw ProtocolError(e.what(), 0, "status");
  }
  const auto& pts = field(j, "points");
  if (!pts.is_array()) throw ProtocolError("field 'points' must be an array", 0, "points");
  for (const auto& p : pts) m.points.push_back(vec_from(p, "points"));
  m.roll_deg = finite_number(j, "roll_deg");
  if (const auto& b = field(j, "beam"); !b.is_null()) {
    BeamMessage bm;
    const auto& v = field(b, "vertices");
    if (!v.is_array() || v.size() != 4) throw ProtocolError("beam needs 4 vertices", 0, "vertices");
    for (std::size_t i = 0; i < 4; ++i) bm.vertices[i] = vec_from(v[i], "vertices");
    bm.beam_end = vec_from(field(b, "beam_end"), "beam_end");
    m.beam = bm;
  }
  if (const auto& t = field(j, "target"); !t.is_null()) {
    TargetSpec ts;
    ts.id = field_as<std::string>(t, "id");
    ts.center = vec_from(field(t, "center"), "center");
    ts.radius_mm = finite_number(t, "radius_mm");
    m.target = ts;
  }
  if (const auto& f = field(j, "feedback"); !f.is_null())
    m.feedback = TargetFeedback{finite_number(f, "distance_mm"), finite_number(f, "angle_deg")};
  const auto& mj = field(j, "metrics");
  m.metrics.t_s = finite_number(mj, "t_s");
  m.metrics.nT = field_as<int>(mj, "nT");
  m.metrics.total = field_as<int>(mj, "total");
  if (const auto& tt = field(mj, "tT_s"); !tt.is_null()) m.metrics.tT_s = finite_number(mj, "tT_s");
  m.metrics.running = field_as<bool>(mj, "running");
  m.metrics.finished = field_as<bool>(mj, "finished");
  m.consistency_mm = finite_number(j, "consistency_mm");
  m.warning = field_as<bool>(j, "warning");
  m.mode = field_as<std::string>(j, "mode");
  m.ack = field_as<std::int64_t>(j, "ack");
  return m;
}

inline nlohmann::json control_to_json(const ControlMessage& c) {
  nlohmann::json j;
  if (c.id != 0) j["id"] = c.id;
  switch (c.kind) {
    case ControlKind::Control:
      j["type"] = "control";
      j["insertion_mm_s"] = c.rates.insertion_mm_s;
      j["knob1_deg_s"] = c.rates.knob1_deg_s;
      j["knob2_deg_s"] = c.rates.knob2_deg_s;
      j["roll_deg_s"] = c.rates.roll_deg_s;
      if (c.duration_ms) j["duration_ms"] = *c.duration_ms;
      break;
    case ControlKind::Session:
      j["type"] = "session";
      j["action"] = c.action;
      break;
    case ControlKind::Mode:
      j["type"] = "mode";
      j["view"] = to_string(c.view);
      break;
  }
  return j;
}

inline std::string encode_control(const ControlMessage& c) { return control_to_json(c).dump(); }

// Missing rate fields default to 0 so a client can send only what it drives.
inline ControlMessage decode_control(std::string_view text) {
  using namespace detail;
  const auto j = parse_object(text);
  const auto type = field_as<std::string>(j, "type");
  ControlMessage c;
  if (j.contains("id")) c.id = field_as<std::int64_t>(j, "id");
  auto rate = [&](const char* name) { return j.contains(name) ? finite_number(j, name) : 0.0; };
  if (type == "control") {
    c.kind = ControlKind::Control;
    c.rates = {rate("insertion_mm_s"), rate("knob1_deg_s"), rate("knob2_deg_s"), rate("roll_deg_s")};
    if (j.contains("duration_ms")) {
      c.duration_ms = field_as<std::int64_t>(j, "duration_ms");
      if (*c.duration_ms < 0) throw ProtocolError("duration_ms must be >= 0", 0, "duration_ms");
    }
  } else if (type == "session") {
    c.kind = ControlKind::Session;
    c.action = field_as<std::string>(j, "action");
    if (c.action != "start" && c.action != "reset")
      throw ProtocolError("session action must be start or reset", 0, "action");
  } else if (type == "mode") {
    c.kind = ControlKind::Mode;
    const auto v = field_as<std::string>(j, "view");
    if (v != "2D" && v != "3D") throw ProtocolError("view must be 2D or 3D", 0, "view");
    c.view = view_mode_from_string(v);
  } else {
    throw ProtocolError("unknown message type '" + type + "'", 0, "type");
  }
  return c;
}

}  // namespace cathtrack
