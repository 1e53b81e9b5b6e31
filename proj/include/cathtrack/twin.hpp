#pragma once

// The simulated rig end to end: control input -> catheter -> rendered biplane
// frames + encoder ticks -> tracker -> registration -> beam, targets, session.
// One Twin is driven by one owner; tick() advances simulated time by one
// frame period, so runs are deterministic regardless of wall-clock pacing.

#include "cathtrack/beam_targets.hpp"
#include "cathtrack/camera.hpp"
#include "cathtrack/catheter.hpp"
#include "cathtrack/frame_synth.hpp"
#include "cathtrack/fusion.hpp"
#include "cathtrack/protocol.hpp"
#include "cathtrack/registration.hpp"
#include "cathtrack/roll_encoder.hpp"
#include "cathtrack/vision.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

namespace cathtrack {

struct TwinConfig {
  CatheterConfig catheter;
  Rig rig = default_rig();
  PipelineConfig pipeline;
  RollCalibration roll;
  AffineTransform registration;
  Scene scene;
  NoiseSpec noise;  // seed advanced per tick
  RenderStyle style;
  CatheterState initial{60.0, 0.0, 0.0, 0.0};
  double rate_hz = 30.0;
  // false: skip rendering and vision, use the ground-truth curve resampled to K.
  bool vision = true;
};

// Ground-truth curve as a K-point track (tip first), the tracker's ideal output.
inline Track3D truth_track(const CatheterCurve& curve, int k, double roll_deg, std::int64_t ts) {
  Track3D t;
  t.timestamp_ms = ts;
  t.roll_deg = wrap_deg(roll_deg);
  if (curve.arc_length_mm <= 0.0) return t;
  t.points = resample_uniform(curve.points, static_cast<std::size_t>(k));
  t.status = TrackStatus::Ok;
  return t;
}

class Twin {
 public:
  explicit Twin(TwinConfig cfg)
      : cfg_(std::move(cfg)), tracker_(cfg_.rig, cfg_.pipeline), session_(cfg_.scene.targets, cfg_.scene.session) {
    cfg_.catheter.validate();
    cfg_.roll.validate();
    if (!(cfg_.rate_hz > 0.0)) throw ConfigError("rate must be > 0");
    validate_state(cfg_.initial, cfg_.catheter);
    state_ = cfg_.initial;
    unwrapped_roll_ = cfg_.initial.roll_deg;
    base_count_ = static_cast<std::int64_t>(
        std::floor((unwrapped_roll_ + cfg_.roll.zero_offset_deg) * cfg_.roll.counts_per_degree()));
    const auto first = simulate_rotation({{0.0, unwrapped_roll_}}, cfg_.roll);
    decoder_.feed(first.front());
  }

  const TwinConfig& config() const { return cfg_; }
  const CatheterState& state() const { return state_; }
  const ControlRates& rates() const { return rates_; }
  const Session& session() const { return session_; }
  Session& session() { return session_; }
  std::uint64_t ticks() const { return tick_; }
  double period_ms() const { return 1000.0 / cfg_.rate_hz; }
  std::int64_t now_ms() const { return std::llround(static_cast<double>(tick_) * period_ms()); }

  // Roll as the encoder reports it.
  double measured_roll_deg() const { return counts_to_angle(base_count_ + decoder_.count(), cfg_.roll); }

  // Takes effect from the next tick.
  void apply(const ControlMessage& c) {
    ack_ = std::max(ack_, c.id);
    switch (c.kind) {
      case ControlKind::Control:
        rates_ = c.rates;
        if (c.duration_ms)
          ticks_left_ = static_cast<std::int64_t>(std::ceil(static_cast<double>(*c.duration_ms) / period_ms() - 1e-9));
        else
          ticks_left_.reset();
        break;
      case ControlKind::Session:
        if (c.action == "start")
          session_.start(now_ms());
        else
          session_.reset(now_ms());
        break;
      case ControlKind::Mode:
        session_.set_mode(c.view, now_ms());
        break;
    }
  }

  FrameMessage tick() {
    const double dt = 1.0 / cfg_.rate_hz;
    const double t0 = static_cast<double>(now_ms());
    if (ticks_left_ && *ticks_left_ <= 0) {
      rates_ = {};
      ticks_left_.reset();
    }
    const CatheterState before = state_;
    state_ = step(state_, rates_, dt, cfg_.catheter);
    if (ticks_left_) --*ticks_left_;
    ++tick_;
    const std::int64_t now = now_ms();

    // Encoder edges for this tick's rotation.
    const double prev = unwrapped_roll_;
    unwrapped_roll_ += wrap_deg(state_.roll_deg - before.roll_deg);
    if (unwrapped_roll_ != prev) {
      const auto samples = simulate_rotation({{t0, prev}, {static_cast<double>(now), unwrapped_roll_}}, cfg_.roll);
      for (std::size_t i = 1; i < samples.size(); ++i) decoder_.feed(samples[i]);
    }
    const double roll = measured_roll_deg();

    const CatheterCurve curve = forward_kinematics(state_, cfg_.catheter);
    Track3D track;
    if (cfg_.vision) {
      NoiseSpec noise = cfg_.noise;
      noise.seed = cfg_.noise.seed + 7919ULL * tick_;
      track = tracker_.process(render_frame(curve, cfg_.rig, noise, cfg_.style, now), roll);
    } else {
      track = truth_track(curve, cfg_.pipeline.track_points, roll, now);
    }
    last_track_ = track;
    return compose(apply_registration(track), now);
  }

  const Track3D& last_track() const { return last_track_; }

  std::vector<nlohmann::json> drain_events() { return session_.drain_events(); }

 private:
  Track3D apply_registration(const Track3D& t) const { return cathtrack::apply(cfg_.registration, t); }

  FrameMessage compose(const Track3D& model, std::int64_t now) {
    FrameMessage m;
    m.seq = tick_;
    m.timestamp_ms = now;
    m.status = model.status;
    m.points = model.points;
    m.roll_deg = model.roll_deg;
    m.consistency_mm = model.consistency_mm;
    m.warning = model.correspondence_warning;
    m.mode = to_string(session_.mode());
    m.ack = ack_;

    std::optional<Vec3> beam_end;
    std::optional<BeamGeometry> beam;
    if (model.present()) {
      try {
        // Zero roll faces tracking-space +Y, carried into model space.
        beam = beam_geometry(model, cfg_.scene.beam, cfg_.registration.linear * Vec3::UnitY(),
                             cfg_.registration.linear * Vec3::UnitZ());
        m.beam = BeamMessage{beam->vertices, beam->beam_end};
        beam_end = beam->beam_end;
      } catch (const GeometryError&) {
      }
    }
    const SessionMetrics& sm = session_.update(beam_end, now);
    if (const TargetSpec* target = session_.current_target()) {
      m.target = *target;
      if (beam) m.feedback = target_feedback(*beam, *target);
    }
    m.metrics = {sm.t_s, sm.nT, sm.total, sm.tT_s, sm.running, sm.finished};
    return m;
  }

  TwinConfig cfg_;
  Tracker tracker_;
  Session session_;
  CatheterState state_;
  ControlRates rates_;
  std::optional<std::int64_t> ticks_left_;
  std::uint64_t tick_ = 0;
  std::int64_t ack_ = 0;
  double unwrapped_roll_ = 0.0;
  std::int64_t base_count_ = 0;
  QuadratureDecoder decoder_;
  Track3D last_track_;
};

}  // namespace cathtrack
