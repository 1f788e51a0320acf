#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "canshape/can_codec.hpp"
#include "canshape/detect.hpp"
#include "canshape/error.hpp"
#include "canshape/rng.hpp"
#include "canshape/signal_pipeline.hpp"

namespace canshape::sim {

struct Knot {
  double t = 0.0;
  double value = 0.0;
};

/// Piecewise-linear curve; holds the end values outside its knots.
using Trajectory = std::vector<Knot>;

inline double evaluate(const Trajectory& traj, double t) {
  if (traj.empty()) return 0.0;
  if (t <= traj.front().t) return traj.front().value;
  if (t >= traj.back().t) return traj.back().value;
  const auto it = std::upper_bound(traj.begin(), traj.end(), t, [](double v, const Knot& k) { return v < k.t; });
  const Knot& b = *it;
  const Knot& a = *(it - 1);
  const double w = (t - a.t) / (b.t - a.t);
  return a.value + w * (b.value - a.value);
}

/// One drive-cycle segment: a label, a duration and a curve per latent.
struct StateSpec {
  std::string label;
  double duration = 0.0;
  std::map<std::string, Trajectory> trajectory;
  std::string canonical_latent = "speed";
};

enum class SensorShape { Linear, Tanh, Square, Sine };

inline std::string_view to_string(SensorShape s) {
  switch (s) {
    case SensorShape::Linear: return "linear";
    case SensorShape::Tanh: return "tanh";
    case SensorShape::Square: return "square";
    case SensorShape::Sine: return "sine";
  }
  return "linear";
}

inline SensorShape parse_sensor_shape(std::string_view s) {
  if (s == "linear") return SensorShape::Linear;
  if (s == "tanh") return SensorShape::Tanh;
  if (s == "square") return SensorShape::Square;
  if (s == "sine") return SensorShape::Sine;
  throw Error(ErrorKind::Schema, "unknown sensor shape '" + std::string(s) + "'");
}

/// value = offset + scale * f(sum_i weights[i] * latent_i) + N(0, noise^2),
/// quantized and clamped to [0, 65535].
struct SensorSpec {
  BytePairId id;
  std::vector<double> weights;  // one per latent variable
  SensorShape shape = SensorShape::Linear;
  double offset = 0.0;
  double scale = 1.0;
  double noise = 0.0;

  double response(std::span<const double> latent) const {
    double u = 0.0;
    for (std::size_t i = 0; i < weights.size() && i < latent.size(); ++i) u += weights[i] * latent[i];
    double f = u;
    switch (shape) {
      case SensorShape::Linear: f = u; break;
      case SensorShape::Tanh: f = std::tanh(2.0 * u); break;
      case SensorShape::Square: f = u * u; break;
      case SensorShape::Sine: f = 0.5 * (1.0 + std::sin(6.283185307179586 * u)); break;
    }
    return offset + scale * f;
  }
};

struct AidSpec {
  std::uint32_t aid = 0;
  double period_ms = 100.0;
  std::uint8_t length = 8;
  std::array<std::uint8_t, kMaxPayload> fill{};  // bytes of pairs no sensor drives
};

struct LatentVehicle {
  std::vector<std::string> latent_names;
  std::vector<StateSpec> states;
  std::vector<SensorSpec> sensors;
  std::vector<AidSpec> aids;
  double jitter_fraction = 0.05;
  double canonical_rate_hz = 10.0;
  double canonical_noise = 0.0;
  std::string channel = "can0";

  std::size_t latent_index(const std::string& name) const {
    const auto it = std::find(latent_names.begin(), latent_names.end(), name);
    if (it == latent_names.end()) throw Error(ErrorKind::Schema, "unknown latent variable '" + name + "'");
    return static_cast<std::size_t>(it - latent_names.begin());
  }

  void validate() const {
    if (latent_names.empty()) throw Error(ErrorKind::Schema, "vehicle needs at least one latent variable");
    for (const auto& a : aids) {
      if (!(a.period_ms > 0.0)) throw Error(ErrorKind::Schema, "AID period must be positive");
      if (a.length > kMaxPayload) throw Error(ErrorKind::Schema, "AID payload length exceeds 8");
      if (a.aid > kMaxExtendedAid) throw Error(ErrorKind::Schema, "AID exceeds 29 bits");
    }
    for (const auto& s : sensors) {
      if (s.weights.size() != latent_names.size()) {
        throw Error(ErrorKind::Schema, "sensor " + to_string(s.id) + " needs one weight per latent variable");
      }
      if (std::none_of(aids.begin(), aids.end(), [&](const AidSpec& a) { return a.aid == s.id.aid; })) {
        throw Error(ErrorKind::Schema, "sensor " + to_string(s.id) + " is on an AID with no schedule");
      }
    }
    for (const auto& st : states) {
      if (!(st.duration > 0.0)) throw Error(ErrorKind::Schema, "state '" + st.label + "' needs a positive duration");
      for (const auto& [name, traj] : st.trajectory) {
        latent_index(name);
        for (std::size_t i = 1; i < traj.size(); ++i) {
          if (!(traj[i].t > traj[i - 1].t)) throw Error(ErrorKind::Schema, "trajectory knots must be increasing in time");
        }
      }
    }
  }
};

inline double quantize_time(double t) { return std::round(t * 1e6) / 1e6; }

namespace detail {

inline std::vector<double> latent_at(const LatentVehicle& v, const StateSpec& state, double t) {
  std::vector<double> z(v.latent_names.size(), 0.0);
  for (const auto& [name, traj] : state.trajectory) z[v.latent_index(name)] = evaluate(traj, t);
  return z;
}

}  // namespace detail

/// Frames of one drive-cycle state: every AID at its fixed period with
/// uniform jitter, sensor byte pairs from the latent trajectory.
inline StateCapture generate_state(const LatentVehicle& vehicle, const StateSpec& state, std::uint64_t seed) {
  vehicle.validate();
  auto gen = rng::substream(seed, "state:" + state.label);
  std::map<std::uint32_t, std::vector<const SensorSpec*>> sensors_by_aid;
  for (const auto& s : vehicle.sensors) sensors_by_aid[s.id.aid].push_back(&s);

  StateCapture cap;
  cap.label = state.label;
  cap.duration = state.duration;
  for (const AidSpec& aid : vehicle.aids) {
    const double period = aid.period_ms / 1000.0;
    const double phase = rng::uniform01(gen) * period;
    const auto it = sensors_by_aid.find(aid.aid);
    for (std::int64_t j = 0;; ++j) {
      const double nominal = phase + static_cast<double>(j) * period;
      if (nominal >= state.duration) break;
      const double jitter = (2.0 * rng::uniform01(gen) - 1.0) * vehicle.jitter_fraction * period;
      const double t = quantize_time(std::clamp(nominal + jitter, 0.0, state.duration));
      CanFrame f;
      f.timestamp = t;
      f.aid = aid.aid;
      f.extended = aid.aid > kMaxStandardAid;
      f.length = aid.length;
      f.data = aid.fill;
      f.channel = vehicle.channel;
      if (it != sensors_by_aid.end()) {
        const std::vector<double> z = detail::latent_at(vehicle, state, t);
        for (const SensorSpec* s : it->second) {
          const double raw = s->response(z) + s->noise * rng::normal01(gen);
          const auto v = static_cast<std::uint16_t>(std::clamp(std::round(raw), 0.0, 65535.0));
          const std::size_t hi = 2 * s->id.pair_index;
          f.data[hi] = static_cast<std::uint8_t>(v >> 8);
          f.data[hi + 1] = static_cast<std::uint8_t>(v & 0xFF);
        }
      }
      for (std::size_t b = f.length; b < kMaxPayload; ++b) f.data[b] = 0;
      cap.frames.push_back(std::move(f));
    }
  }
  std::stable_sort(cap.frames.begin(), cap.frames.end(), [](const CanFrame& a, const CanFrame& b) {
    return a.timestamp < b.timestamp || (a.timestamp == b.timestamp && a.aid < b.aid);
  });

  CanonicalSeries canon;
  const std::size_t li = vehicle.latent_index(state.canonical_latent);
  const auto samples = static_cast<std::int64_t>(std::floor(state.duration * vehicle.canonical_rate_hz));
  for (std::int64_t j = 0; j <= samples; ++j) {
    const double t = std::min(state.duration, static_cast<double>(j) / vehicle.canonical_rate_hz);
    if (!canon.times.empty() && t <= canon.times.back()) break;
    canon.times.push_back(t);
    canon.values.push_back(detail::latent_at(vehicle, state, t)[li] + vehicle.canonical_noise * rng::normal01(gen));
  }
  cap.canonical = std::move(canon);
  return cap;
}

/// One capture per drive-cycle state, each with its canonical series.
inline std::vector<StateCapture> generate_ambient(const LatentVehicle& vehicle, std::uint64_t seed) {
  std::vector<StateCapture> out;
  for (const StateSpec& s : vehicle.states) out.push_back(generate_state(vehicle, s, seed));
  return out;
}

struct Window {
  double start = 0.0;
  double end = 0.0;

  bool contains(double t) const { return t >= start && t <= end; }
  bool operator==(const Window&) const = default;
};

struct AttackTarget {
  BytePairId id;
  double delta = 0.0;  // raw value offset added to the expected value
};

struct AttackSpec {
  enum class Kind { Injection, Replay };
  Kind kind = Kind::Injection;
  std::vector<AttackTarget> targets;
  std::vector<Window> windows;
  double frequency_hz = 0.0;  // injection rate; 0 means 10x the AID's native rate
  Window replay_source;
};

struct AttackedCapture {
  StateCapture capture;
  std::vector<Window> windows;
  std::size_t injected_frames = 0;
};

inline constexpr double kDefaultInjectionRateFactor = 10.0;

/// Median inter-arrival time of an AID in a capture, seconds.
inline double native_period(const StateCapture& capture, std::uint32_t aid) {
  std::vector<double> gaps;
  double last = -1.0;
  for (const CanFrame& f : capture.frames) {
    if (f.aid != aid) continue;
    if (last >= 0.0 && f.timestamp > last) gaps.push_back(f.timestamp - last);
    last = f.timestamp;
  }
  if (gaps.empty()) throw Error(ErrorKind::UnknownTarget, "cannot infer the native rate of AID with fewer than 2 frames");
  std::nth_element(gaps.begin(), gaps.begin() + static_cast<std::ptrdiff_t>(gaps.size() / 2), gaps.end());
  return gaps[gaps.size() / 2];
}

namespace detail {

inline void validate_windows(std::vector<Window> windows, double duration) {
  std::sort(windows.begin(), windows.end(), [](const Window& a, const Window& b) { return a.start < b.start; });
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const Window& w = windows[i];
    if (!(w.start >= 0.0 && w.end <= duration && w.start < w.end)) {
      throw Error(ErrorKind::WindowOutOfRange, "window [" + std::to_string(w.start) + ", " + std::to_string(w.end) +
                                                   "] not inside capture of " + std::to_string(duration) + " s");
    }
    if (i > 0 && w.start < windows[i - 1].end) throw Error(ErrorKind::WindowOutOfRange, "attack windows overlap");
  }
}

inline void merge_frames(std::vector<CanFrame>& authentic, std::vector<CanFrame> extra) {
  std::stable_sort(extra.begin(), extra.end(), [](const CanFrame& a, const CanFrame& b) { return a.timestamp < b.timestamp; });
  std::vector<CanFrame> merged;
  merged.reserve(authentic.size() + extra.size());
  // authentic frames first on equal timestamps
  std::merge(std::make_move_iterator(authentic.begin()), std::make_move_iterator(authentic.end()),
             std::make_move_iterator(extra.begin()), std::make_move_iterator(extra.end()), std::back_inserter(merged),
             [](const CanFrame& a, const CanFrame& b) { return a.timestamp < b.timestamp; });
  authentic = std::move(merged);
}

}  // namespace detail

/// Adds attack traffic to a capture. Injection: extra frames for each
/// target AID at the attack rate, copying the latest authentic frame and
/// offsetting the targeted pairs by delta. Replay: the target AIDs' frames
/// from the source interval are re-sent, time shifted, over each window.
inline AttackedCapture inject_attack(const StateCapture& capture, const AttackSpec& spec, std::uint64_t seed) {
  detail::validate_windows(spec.windows, capture.duration);
  std::map<std::uint32_t, std::vector<AttackTarget>> by_aid;
  for (const AttackTarget& t : spec.targets) by_aid[t.id.aid].push_back(t);
  if (by_aid.empty()) throw Error(ErrorKind::UnknownTarget, "attack has no targets");
  for (const auto& [aid, targets] : by_aid) {
    const bool present = std::any_of(capture.frames.begin(), capture.frames.end(), [aid = aid](const CanFrame& f) { return f.aid == aid; });
    if (!present) throw Error(ErrorKind::UnknownTarget, to_string(targets.front().id) + " does not occur in the capture");
  }

  AttackedCapture out;
  out.capture = capture;
  out.windows = spec.windows;
  std::vector<CanFrame> extra;
  auto gen = rng::substream(seed, "attack");

  if (spec.kind == AttackSpec::Kind::Injection) {
    if (spec.frequency_hz < 0.0) throw Error(ErrorKind::InvalidArgument, "injection frequency must be positive");
    for (const auto& [aid, targets] : by_aid) {
      const double period = spec.frequency_hz > 0.0 ? 1.0 / spec.frequency_hz
                                                    : native_period(capture, aid) / kDefaultInjectionRateFactor;
      // authentic frames of this AID, in time order
      std::vector<const CanFrame*> authentic;
      for (const CanFrame& f : capture.frames)
        if (f.aid == aid) authentic.push_back(&f);
      for (const Window& w : spec.windows) {
        const double phase = rng::uniform01(gen) * period;
        std::size_t cursor = 0;
        for (std::int64_t j = 0;; ++j) {
          const double t = quantize_time(w.start + phase + static_cast<double>(j) * period);
          if (t > w.end) break;
          while (cursor < authentic.size() && authentic[cursor]->timestamp <= t) ++cursor;
          if (cursor == 0) continue;  // nothing authentic to imitate yet
          CanFrame f = *authentic[cursor - 1];
          f.timestamp = t;
          auto pairs = decompose(f);
          if (f.length < kMaxPayload) f.length = kMaxPayload;
          for (const AttackTarget& tgt : targets) {
            const double v = std::clamp(std::round(pairs[tgt.id.pair_index].value + tgt.delta), 0.0, 65535.0);
            const auto u = static_cast<std::uint16_t>(v);
            f.data[2 * tgt.id.pair_index] = static_cast<std::uint8_t>(u >> 8);
            f.data[2 * tgt.id.pair_index + 1] = static_cast<std::uint8_t>(u & 0xFF);
          }
          extra.push_back(std::move(f));
        }
      }
    }
  } else {
    const Window& src = spec.replay_source;
    detail::validate_windows({src}, capture.duration);
    std::vector<const CanFrame*> source;
    for (const CanFrame& f : capture.frames) {
      if (by_aid.contains(f.aid) && f.timestamp >= src.start && f.timestamp < src.end) source.push_back(&f);
    }
    const double span = src.end - src.start;
    for (const Window& w : spec.windows) {
      for (std::int64_t rep = 0;; ++rep) {
        const double shift = w.start - src.start + static_cast<double>(rep) * span;
        if (src.start + shift >= w.end) break;
        for (const CanFrame* f : source) {
          const double t = quantize_time(f->timestamp + shift);
          if (t > w.end) break;
          CanFrame copy = *f;
          copy.timestamp = t;
          extra.push_back(std::move(copy));
        }
      }
    }
  }
  out.injected_frames = extra.size();
  detail::merge_frames(out.capture.frames, std::move(extra));
  return out;
}

struct WindowResult {
  Window window;
  bool detected = false;
  std::optional<double> latency;  // first alert time minus window start
};

struct Metrics {
  std::vector<WindowResult> windows;
  std::size_t detected = 0;
  std::size_t false_alarms = 0;
  std::size_t outside_observations = 0;
  double false_alarm_rate = 0.0;
};

/// Scores alerts of one detector against ground-truth windows.
/// `observation_times` are the times of every trace row.
inline Metrics evaluate(std::span<const Alert> alerts, std::span<const Window> truth, std::span<const double> observation_times) {
  Metrics m;
  for (const Window& w : truth) {
    WindowResult r{w, false, std::nullopt};
    for (const Alert& a : alerts) {
      if (w.contains(a.time)) {
        r.detected = true;
        r.latency = a.time - w.start;
        break;
      }
    }
    m.detected += r.detected ? 1 : 0;
    m.windows.push_back(r);
  }
  const auto inside = [&](double t) { return std::any_of(truth.begin(), truth.end(), [t](const Window& w) { return w.contains(t); }); };
  for (double t : observation_times) m.outside_observations += inside(t) ? 0 : 1;
  for (const Alert& a : alerts) m.false_alarms += inside(a.time) ? 0 : 1;
  m.false_alarm_rate = m.outside_observations > 0 ? static_cast<double>(m.false_alarms) / static_cast<double>(m.outside_observations) : 0.0;
  return m;
}

/// Alerts of one detector kind.
inline std::vector<Alert> alerts_of(std::span<const Alert> alerts, DetectorKind kind) {
  std::vector<Alert> out;
  for (const Alert& a : alerts)
    if (a.detector == kind) out.push_back(a);
  return out;
}

/// Three latents (speed km/h, throttle and brake fractions), 24 sensors on six
/// AIDs, plus static AIDs whose payloads never change. Forward drive cycle:
/// key on, accelerate, hold speed, brake, reverse.
inline LatentVehicle default_vehicle() {
  LatentVehicle v;
  v.latent_names = {"speed", "throttle", "brake"};
  const auto sensor = [](std::uint32_t aid, int pair, std::vector<double> w, SensorShape shape, double offset, double scale) {
    SensorSpec s;
    s.id = BytePairId{aid, static_cast<std::uint8_t>(pair)};
    s.weights = std::move(w);
    s.shape = shape;
    s.offset = offset;
    s.scale = scale;
    s.noise = 0.005 * scale;
    return s;
  };
  constexpr double kSpeed = 1.0 / 100.0;
  // speed: wheel speeds, speedometer, odometer rate, transmission output
  v.sensors.push_back(sensor(0x0D0, 0, {kSpeed, 0, 0}, SensorShape::Linear, 1000, 12000));
  v.sensors.push_back(sensor(0x0D0, 1, {kSpeed, 0, 0}, SensorShape::Linear, 1040, 12100));
  v.sensors.push_back(sensor(0x0D0, 2, {kSpeed, 0, 0}, SensorShape::Linear, 980, 11900));
  v.sensors.push_back(sensor(0x0D0, 3, {kSpeed, 0, 0}, SensorShape::Linear, 1010, 12050));
  v.sensors.push_back(sensor(0x0D4, 0, {kSpeed, 0, 0}, SensorShape::Linear, 0, 20000));
  v.sensors.push_back(sensor(0x0D4, 1, {kSpeed, 0, 0}, SensorShape::Tanh, 500, 30000));
  v.sensors.push_back(sensor(0x0D4, 2, {kSpeed, 0, 0}, SensorShape::Square, 200, 40000));
  v.sensors.push_back(sensor(0x0D4, 3, {kSpeed, 0, 0}, SensorShape::Linear, 3000, 16000));
  // throttle: pedal, throttle body, air flow, injection
  v.sensors.push_back(sensor(0x130, 0, {0, 1, 0}, SensorShape::Linear, 0, 50000));
  v.sensors.push_back(sensor(0x130, 1, {0, 1, 0}, SensorShape::Linear, 2000, 45000));
  v.sensors.push_back(sensor(0x130, 2, {0, 1, 0}, SensorShape::Tanh, 800, 30000));
  v.sensors.push_back(sensor(0x130, 3, {0, 1, 0}, SensorShape::Square, 100, 40000));
  v.sensors.push_back(sensor(0x134, 0, {0, 1, 0}, SensorShape::Linear, 5000, 20000));
  v.sensors.push_back(sensor(0x134, 1, {0, 1, 0}, SensorShape::Tanh, 0, 25000));
  v.sensors.push_back(sensor(0x134, 2, {0, 1, 0}, SensorShape::Linear, 10000, 30000));
  v.sensors.push_back(sensor(0x134, 3, {0, 1, 0}, SensorShape::Linear, 300, 35000));
  // brake: pressure sensors, pedal switch travel
  v.sensors.push_back(sensor(0x1A0, 0, {0, 0, 1}, SensorShape::Linear, 0, 40000));
  v.sensors.push_back(sensor(0x1A0, 1, {0, 0, 1}, SensorShape::Linear, 1500, 38000));
  v.sensors.push_back(sensor(0x1A0, 2, {0, 0, 1}, SensorShape::Tanh, 0, 30000));
  v.sensors.push_back(sensor(0x1A0, 3, {0, 0, 1}, SensorShape::Square, 700, 42000));
  v.sensors.push_back(sensor(0x1A4, 0, {0, 0, 1}, SensorShape::Linear, 4000, 25000));
  v.sensors.push_back(sensor(0x1A4, 1, {0, 0, 1}, SensorShape::Tanh, 200, 20000));
  v.sensors.push_back(sensor(0x1A4, 2, {0, 0, 1}, SensorShape::Linear, 0, 45000));
  v.sensors.push_back(sensor(0x1A4, 3, {0, 0, 1}, SensorShape::Linear, 8000, 30000));

  v.aids = {
      AidSpec{0x0D0, 10.0}, AidSpec{0x0D4, 20.0}, AidSpec{0x130, 10.0},
      AidSpec{0x134, 20.0}, AidSpec{0x1A0, 10.0}, AidSpec{0x1A4, 20.0},
  };
  // Static traffic: configuration, body and status frames that never change.
  for (std::uint32_t i = 0; i < 20; ++i) {
    AidSpec a;
    a.aid = 0x200 + 0x10 * i;
    a.period_ms = (i % 4 == 0) ? 50.0 : (i % 4 == 1) ? 100.0 : (i % 4 == 2) ? 200.0 : 500.0;
    a.length = static_cast<std::uint8_t>(i % 3 == 0 ? 8 : i % 3 == 1 ? 6 : 4);
    for (std::size_t b = 0; b < a.length; ++b) a.fill[b] = static_cast<std::uint8_t>((i * 37 + b * 11) & 0xFF);
    v.aids.push_back(a);
  }

  using T = Trajectory;
  v.states = {
      StateSpec{"KeyOn", 10.0, {{"speed", T{{0, 0}}}, {"throttle", T{{0, 0}}}, {"brake", T{{0, 0}}}}},
      StateSpec{"Accelerating", 15.0,
                {{"speed", T{{0, 0}, {5, 25}, {10, 55}, {15, 80}}},
                 {"throttle", T{{0, 0.2}, {1, 0.7}, {12, 0.6}, {15, 0.35}}},
                 {"brake", T{{0, 0}}}}},
      StateSpec{"Speed", 20.0,
                {{"speed", T{{0, 80}, {4, 80}, {6, 40}, {10, 40}, {13, 100}, {17, 100}, {19, 70}, {20, 70}}},
                 {"throttle", T{{0, 0.3}}},
                 {"brake", T{{0, 0}}}}},
      StateSpec{"Braking", 12.0,
                {{"speed", T{{0, 70}, {12, 0}}},
                 {"throttle", T{{0, 0}}},
                 {"brake", T{{0, 0.15}, {3, 0.5}, {9, 0.6}, {12, 0.3}}}}},
      StateSpec{"Reverse", 12.0,
                {{"speed", T{{0, 0}, {4, 8}, {8, 8}, {12, 0}}},
                 {"throttle", T{{0, 0}, {1, 0.12}, {8, 0.08}, {9, 0}}},
                 {"brake", T{{0, 0}, {9, 0}, {10, 0.25}, {12, 0.3}}}}},
  };
  v.canonical_noise = 0.05;
  return v;
}

/// Constant-speed drive used for attack experiments.
inline StateSpec constant_speed_state(double duration, double speed = 80.0, double throttle = 0.3,
                                      std::string label = "Speed") {
  return StateSpec{std::move(label), duration,
                   {{"speed", Trajectory{{0, speed}}}, {"throttle", Trajectory{{0, throttle}}}, {"brake", Trajectory{{0, 0}}}}};
}

}  // namespace canshape::sim
