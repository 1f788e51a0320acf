#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "canshape/can_codec.hpp"
#include "canshape/error.hpp"

namespace canshape {

/// Real-valued ground-truth measurement (e.g. vehicle speed) with its own clock.
struct CanonicalSeries {
  std::vector<double> times;
  std::vector<double> values;
};

/// Ambient frames recorded while the vehicle was held in one state.
struct StateCapture {
  std::string label;
  std::vector<CanFrame> frames;
  double duration = 0.0;
  std::optional<CanonicalSeries> canonical;
};

struct BytePairSeries {
  BytePairId id;
  std::vector<double> times;
  std::vector<double> values;
};

using SeriesMap = std::map<BytePairId, BytePairSeries>;

/// One time series per (aid, pair) observed in the capture. Two frames of
/// the same AID at the same timestamp collapse to the later one so that
/// series times stay strictly increasing.
inline SeriesMap extract_series(const StateCapture& capture) {
  if (capture.frames.empty()) {
    throw Error(ErrorKind::EmptyCapture, "capture '" + capture.label + "' has no frames");
  }
  SeriesMap out;
  for (const CanFrame& frame : capture.frames) {
    for (const BytePairSample& s : decompose(frame)) {
      BytePairSeries& series = out[s.id];
      series.id = s.id;
      if (!series.times.empty() && series.times.back() >= frame.timestamp) {
        series.values.back() = s.value;
        continue;
      }
      series.times.push_back(frame.timestamp);
      series.values.push_back(s.value);
    }
  }
  return out;
}

/// Ids whose values, pooled across every ambient capture, take at least two
/// distinct values.
inline std::set<BytePairId> constant_filter(std::span<const SeriesMap> series_by_state) {
  std::map<BytePairId, std::pair<double, bool>> seen;  // first value, varies
  for (const SeriesMap& state : series_by_state) {
    for (const auto& [id, series] : state) {
      for (double v : series.values) {
        auto [it, inserted] = seen.try_emplace(id, v, false);
        if (!inserted && it->second.first != v) it->second.second = true;
      }
    }
  }
  std::set<BytePairId> retained;
  for (const auto& [id, state] : seen) {
    if (state.second) retained.insert(id);
  }
  return retained;
}

namespace detail {

inline double grid_point(double t0, double t1, std::size_t i, std::size_t length) {
  if (length == 1) return t0;
  return t0 + (t1 - t0) * static_cast<double>(i) / static_cast<double>(length - 1);
}

}  // namespace detail

/// Previous-value (step) resampling onto `length` uniform points over [t0, t1].
/// Points before the first sample take the first value.
inline Eigen::VectorXd interpolate_step(std::span<const double> times, std::span<const double> values,
                                        std::size_t length, double t0, double t1) {
  if (times.empty() || times.size() != values.size()) {
    throw Error(ErrorKind::TooShort, "step interpolation needs at least one sample");
  }
  if (length == 0) throw Error(ErrorKind::InvalidArgument, "interpolation length must be positive");
  Eigen::VectorXd out(static_cast<Eigen::Index>(length));
  std::size_t j = 0;
  for (std::size_t i = 0; i < length; ++i) {
    const double t = detail::grid_point(t0, t1, i, length);
    while (j + 1 < times.size() && times[j + 1] <= t) ++j;
    out[static_cast<Eigen::Index>(i)] = values[j];
  }
  return out;
}

inline Eigen::VectorXd interpolate_step(const BytePairSeries& series, std::size_t length) {
  if (series.times.empty()) throw Error(ErrorKind::TooShort, "empty series");
  return interpolate_step(series.times, series.values, length, series.times.front(), series.times.back());
}

/// Natural cubic spline through strictly increasing knots. Evaluation
/// outside the knot range holds the end values.
class NaturalCubicSpline {
 public:
  NaturalCubicSpline(std::span<const double> x, std::span<const double> y) : x_(x.begin(), x.end()), y_(y.begin(), y.end()) {
    const std::size_t n = x_.size();
    if (n < 2 || y_.size() != n) throw Error(ErrorKind::TooShort, "cubic spline needs at least 2 points");
    for (std::size_t i = 1; i < n; ++i) {
      if (!(x_[i] > x_[i - 1])) throw Error(ErrorKind::InvalidArgument, "spline knots must be strictly increasing");
    }
    // Second derivatives by the tridiagonal (Thomas) solve, M_0 = M_{n-1} = 0.
    m_.assign(n, 0.0);
    if (n == 2) return;
    std::vector<double> c(n, 0.0), d(n, 0.0);
    for (std::size_t i = 1; i + 1 < n; ++i) {
      const double h0 = x_[i] - x_[i - 1];
      const double h1 = x_[i + 1] - x_[i];
      const double a = h0 / 6.0;
      const double b = (h0 + h1) / 3.0;
      const double cc = h1 / 6.0;
      const double rhs = (y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0;
      const double denom = b - a * c[i - 1];
      c[i] = cc / denom;
      d[i] = (rhs - a * d[i - 1]) / denom;
    }
    for (std::size_t i = n - 2; i >= 1; --i) {
      m_[i] = d[i] - c[i] * m_[i + 1];
    }
  }

  double operator()(double t) const {
    if (t <= x_.front()) return y_.front();
    if (t >= x_.back()) return y_.back();
    const auto it = std::upper_bound(x_.begin(), x_.end(), t);
    const std::size_t i = static_cast<std::size_t>(it - x_.begin()) - 1;
    const double h = x_[i + 1] - x_[i];
    const double a = (x_[i + 1] - t) / h;
    const double b = (t - x_[i]) / h;
    return a * y_[i] + b * y_[i + 1] + ((a * a * a - a) * m_[i] + (b * b * b - b) * m_[i + 1]) * h * h / 6.0;
  }

 private:
  std::vector<double> x_, y_, m_;
};

inline Eigen::VectorXd interpolate_spline(std::span<const double> times, std::span<const double> values,
                                          std::size_t length, double t0, double t1) {
  if (length == 0) throw Error(ErrorKind::InvalidArgument, "interpolation length must be positive");
  const NaturalCubicSpline spline(times, values);
  Eigen::VectorXd out(static_cast<Eigen::Index>(length));
  for (std::size_t i = 0; i < length; ++i) out[static_cast<Eigen::Index>(i)] = spline(detail::grid_point(t0, t1, i, length));
  return out;
}

inline Eigen::VectorXd interpolate_spline(const CanonicalSeries& series, std::size_t length) {
  if (series.times.size() < 2) throw Error(ErrorKind::TooShort, "cubic spline needs at least 2 points");
  return interpolate_spline(series.times, series.values, length, series.times.front(), series.times.back());
}

/// Per-coordinate min-max ranges learned from training data.
struct Scaler {
  Eigen::VectorXd min;
  Eigen::VectorXd max;

  Eigen::Index size() const { return min.size(); }

  double scale(Eigen::Index i, double raw) const {
    const double span = max[i] - min[i];
    if (!(span > 0.0)) return 0.0;
    return std::clamp((raw - min[i]) / span, 0.0, 1.0);
  }

  Eigen::VectorXd apply(const Eigen::VectorXd& raw) const {
    Eigen::VectorXd out(raw.size());
    for (Eigen::Index i = 0; i < raw.size(); ++i) out[i] = scale(i, raw[i]);
    return out;
  }

  static Scaler identity(Eigen::Index n, double lo = 0.0, double hi = 1.0) {
    return Scaler{Eigen::VectorXd::Constant(n, lo), Eigen::VectorXd::Constant(n, hi)};
  }
};

/// Ranges of the member signals over every training capture.
inline Scaler fit_scaler(std::span<const SeriesMap> series_by_state, std::span<const BytePairId> members) {
  const auto n = static_cast<Eigen::Index>(members.size());
  Scaler s{Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity()),
           Eigen::VectorXd::Constant(n, -std::numeric_limits<double>::infinity())};
  for (Eigen::Index i = 0; i < n; ++i) {
    for (const SeriesMap& state : series_by_state) {
      const auto it = state.find(members[static_cast<std::size_t>(i)]);
      if (it == state.end()) continue;
      for (double v : it->second.values) {
        s.min[i] = std::min(s.min[i], v);
        s.max[i] = std::max(s.max[i], v);
      }
    }
    if (!std::isfinite(s.min[i])) {
      throw Error(ErrorKind::UnknownMember, to_string(members[static_cast<std::size_t>(i)]) + " never observed in training data");
    }
  }
  return s;
}

/// Observation vector x(t) for one cluster: scaled latest values of its members.
struct Observation {
  double time = 0.0;
  Eigen::VectorXd x;
};

struct EmitMode {
  enum class Kind { PerMessage, FixedRate };
  Kind kind = Kind::PerMessage;
  double rate_hz = 0.0;
  std::optional<double> origin;  // fixed-rate grid origin; defaults to warm-up time

  static EmitMode per_message() { return {}; }
  static EmitMode fixed_rate(double hz, std::optional<double> origin = std::nullopt) {
    if (!(hz > 0.0)) throw Error(ErrorKind::InvalidArgument, "emission rate must be positive");
    return {Kind::FixedRate, hz, origin};
  }
};

inline EmitMode parse_emit_mode(std::string_view text) {
  if (text == "per-message") return EmitMode::per_message();
  if (text.starts_with("rate:")) {
    const std::string_view num = text.substr(5);
    double hz = 0.0;
    auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), hz);
    if (ec != std::errc{} || ptr != num.data() + num.size()) {
      throw Error(ErrorKind::InvalidArgument, "bad emission rate '" + std::string(text) + "'");
    }
    return EmitMode::fixed_rate(hz);
  }
  throw Error(ErrorKind::InvalidArgument, "emit mode must be 'per-message' or 'rate:<hz>', got '" + std::string(text) + "'");
}

inline std::string to_string(const EmitMode& mode) {
  if (mode.kind == EmitMode::Kind::PerMessage) return "per-message";
  char buf[64];
  std::snprintf(buf, sizeof buf, "rate:%.17g", mode.rate_hz);
  return buf;
}

/// Stateful transformer from an ordered frame stream to observations.
/// Keeps a latest-value register per member; nothing is emitted until every
/// member has been seen once.
class ObservationStream {
 public:
  ObservationStream(std::vector<BytePairId> members, Scaler scaler, EmitMode mode,
                    std::optional<std::set<BytePairId>> known_ids = std::nullopt)
      : members_(std::move(members)), scaler_(std::move(scaler)), mode_(mode), known_(std::move(known_ids)) {
    if (scaler_.size() != static_cast<Eigen::Index>(members_.size())) {
      throw Error(ErrorKind::DimensionMismatch, "scaler size does not match member count");
    }
    const auto n = static_cast<Eigen::Index>(members_.size());
    raw_ = Eigen::VectorXd::Zero(n);
    seen_.assign(members_.size(), false);
    for (std::size_t i = 0; i < members_.size(); ++i) {
      slots_[members_[i].aid].push_back({members_[i].pair_index, i});
    }
  }

  void push(const CanFrame& frame, std::vector<Observation>& out) {
    if (frame.timestamp < last_time_) {
      throw Error(ErrorKind::OutOfOrder, "frame at " + std::to_string(frame.timestamp) + " after " + std::to_string(last_time_));
    }
    last_time_ = frame.timestamp;
    ++frames_;
    if (mode_.kind == EmitMode::Kind::FixedRate && warm_) flush_grid_before(frame.timestamp, out);

    const auto it = slots_.find(frame.aid);
    if (it == slots_.end()) {
      ++non_member_frames_;
      note_unseen(frame);
      return;
    }
    note_unseen(frame);
    const auto pairs = decompose(frame);
    for (const Slot& slot : it->second) {
      raw_[static_cast<Eigen::Index>(slot.member)] = pairs[slot.pair_index].value;
      if (!seen_[slot.member]) {
        seen_[slot.member] = true;
        ++seen_count_;
      }
    }
    if (!warm_ && seen_count_ == members_.size()) {
      warm_ = true;
      if (mode_.kind == EmitMode::Kind::FixedRate) {
        grid_origin_ = mode_.origin.value_or(frame.timestamp);
        grid_index_ = 0;
        if (grid_origin_ < frame.timestamp) {
          grid_index_ = static_cast<std::int64_t>(std::ceil((frame.timestamp - grid_origin_) * mode_.rate_hz - 1e-9));
        }
      }
    }
    if (warm_ && mode_.kind == EmitMode::Kind::PerMessage) out.push_back(current(frame.timestamp));
  }

  /// Flushes pending fixed-rate points up to the last frame time. Throws
  /// UnknownMember if some member never appeared.
  void finish(std::vector<Observation>& out) {
    if (warm_ && mode_.kind == EmitMode::Kind::FixedRate) {
      while (grid_time(grid_index_) <= last_time_) {
        out.push_back(current(grid_time(grid_index_)));
        ++grid_index_;
      }
    }
    if (!warm_ && !members_.empty()) {
      std::string missing;
      for (std::size_t i = 0; i < members_.size(); ++i) {
        if (!seen_[i]) missing += (missing.empty() ? "" : ", ") + to_string(members_[i]);
      }
      throw Error(ErrorKind::UnknownMember, "stream never carried member(s) " + missing);
    }
  }

  std::size_t frames() const { return frames_; }
  std::size_t non_member_frames() const { return non_member_frames_; }
  const std::set<BytePairId>& unseen_ids() const { return unseen_; }

 private:
  struct Slot {
    std::uint8_t pair_index;
    std::size_t member;
  };

  double grid_time(std::int64_t j) const { return grid_origin_ + static_cast<double>(j) / mode_.rate_hz; }

  void flush_grid_before(double t, std::vector<Observation>& out) {
    while (grid_time(grid_index_) < t) {
      out.push_back(current(grid_time(grid_index_)));
      ++grid_index_;
    }
  }

  Observation current(double t) const { return Observation{t, scaler_.apply(raw_)}; }

  void note_unseen(const CanFrame& frame) {
    if (!known_) return;
    for (int i = 0; i < kPairsPerFrame; ++i) {
      const BytePairId id{frame.aid, static_cast<std::uint8_t>(i)};
      if (!known_->contains(id)) unseen_.insert(id);
    }
  }

  std::vector<BytePairId> members_;
  Scaler scaler_;
  EmitMode mode_;
  std::optional<std::set<BytePairId>> known_;
  std::unordered_map<std::uint32_t, std::vector<Slot>> slots_;
  Eigen::VectorXd raw_;
  std::vector<bool> seen_;
  std::size_t seen_count_ = 0;
  bool warm_ = false;
  double last_time_ = -std::numeric_limits<double>::infinity();
  double grid_origin_ = 0.0;
  std::int64_t grid_index_ = 0;
  std::size_t frames_ = 0;
  std::size_t non_member_frames_ = 0;
  std::set<BytePairId> unseen_;
};

inline std::vector<Observation> observation_stream(std::span<const CanFrame> frames, std::vector<BytePairId> members,
                                                   Scaler scaler, EmitMode mode) {
  ObservationStream stream(std::move(members), std::move(scaler), mode);
  std::vector<Observation> out;
  for (const CanFrame& f : frames) stream.push(f, out);
  stream.finish(out);
  return out;
}

/// Stacks observations row-wise into an n x d matrix.
inline Eigen::MatrixXd stack_observations(std::span<const Observation> obs) {
  if (obs.empty()) return {};
  Eigen::MatrixXd out(static_cast<Eigen::Index>(obs.size()), obs.front().x.size());
  for (std::size_t i = 0; i < obs.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = obs[i].x.transpose();
  return out;
}

/// Inputs to the correlation matrix for a multi-state ambient corpus.
struct CorrelationInputs {
  std::vector<BytePairId> ids;
  std::vector<Eigen::VectorXd> series;             // aligned with ids
  std::map<std::string, Eigen::VectorXd> canonical;  // state label -> vector
  std::vector<BytePairId> dropped_constant;          // retained ids flat after resampling
  std::vector<std::string> dropped_canonical;        // canonical series flat inside their state
};

/// Resamples every retained signal to `length` points per capture over
/// [0, duration] and concatenates the captures in order. Segments where a
/// signal is absent are filled with its mean over the other segments.
/// A canonical series is spline-resampled inside its own capture and filled
/// with its own mean elsewhere, so it contributes nothing to covariance
/// outside that state.
inline CorrelationInputs build_correlation_inputs(std::span<const StateCapture> captures,
                                                  std::span<const SeriesMap> series_by_state,
                                                  const std::set<BytePairId>& retained, std::size_t length) {
  if (captures.size() != series_by_state.size()) {
    throw Error(ErrorKind::LengthMismatch, "one series map per capture required");
  }
  const auto seg = static_cast<Eigen::Index>(length);
  const auto total = seg * static_cast<Eigen::Index>(captures.size());
  CorrelationInputs out;
  for (const BytePairId& id : retained) {
    Eigen::VectorXd v(total);
    std::vector<bool> present(captures.size(), false);
    double sum = 0.0;
    Eigen::Index count = 0;
    for (std::size_t s = 0; s < captures.size(); ++s) {
      const auto it = series_by_state[s].find(id);
      if (it == series_by_state[s].end()) continue;
      present[s] = true;
      v.segment(static_cast<Eigen::Index>(s) * seg, seg) =
          interpolate_step(it->second.times, it->second.values, length, 0.0, captures[s].duration);
      sum += v.segment(static_cast<Eigen::Index>(s) * seg, seg).sum();
      count += seg;
    }
    const double mean = sum / static_cast<double>(count);
    for (std::size_t s = 0; s < captures.size(); ++s) {
      if (!present[s]) v.segment(static_cast<Eigen::Index>(s) * seg, seg).setConstant(mean);
    }
    if ((v.array() == v[0]).all()) {
      out.dropped_constant.push_back(id);
      continue;
    }
    out.ids.push_back(id);
    out.series.push_back(std::move(v));
  }
  for (std::size_t s = 0; s < captures.size(); ++s) {
    if (!captures[s].canonical) continue;
    const CanonicalSeries& c = *captures[s].canonical;
    if (c.times.size() < 2) throw Error(ErrorKind::TooShort, "canonical series for '" + captures[s].label + "'");
    const Eigen::VectorXd own = interpolate_spline(c.times, c.values, length, 0.0, captures[s].duration);
    if (own.maxCoeff() - own.minCoeff() <= 1e-12 * std::max(1.0, own.cwiseAbs().maxCoeff())) {
      out.dropped_canonical.push_back(captures[s].label);
      continue;
    }
    Eigen::VectorXd v = Eigen::VectorXd::Constant(total, own.mean());
    v.segment(static_cast<Eigen::Index>(s) * seg, seg) = own;
    out.canonical[captures[s].label] = std::move(v);
  }
  return out;
}

}  // namespace canshape
