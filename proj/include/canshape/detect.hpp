#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "canshape/diffusion.hpp"
#include "canshape/error.hpp"
#include "canshape/kdtree.hpp"
#include "canshape/signal_pipeline.hpp"

namespace canshape {

enum class DetectorKind { DistanceToManifold, IncrementDiscontinuity };

constexpr std::string_view to_string(DetectorKind kind) {
  return kind == DetectorKind::DistanceToManifold ? "DistanceToManifold" : "IncrementDiscontinuity";
}

struct Thresholds {
  double k_dist = 0.0;
  double k_cont = 0.0;
  double quantile = 0.999;
  double multiplier = 1.5;
};

struct Alert {
  double time = 0.0;
  DetectorKind detector = DetectorKind::DistanceToManifold;
  double statistic = 0.0;
  double threshold = 0.0;
  std::size_t observation_index = 0;
};

struct TraceRow {
  double time = 0.0;
  double manifold_dist = 0.0;  // +inf when the observation could not be embedded
  std::optional<double> increment_dist;
  bool alert_dist = false;
  bool alert_cont = false;

  bool operator==(const TraceRow&) const = default;
};

struct DetectorState {
  std::optional<EmbeddedPoint> previous;
};

struct DetectOptions {
  std::size_t neighbors = 5;  // r in the r-nearest-neighbour manifold distance
  double cooldown = 0.0;      // seconds; 0 reports every exceedance
};

/// Nearest-neighbour index over the embedded training set Psi(S).
class ManifoldIndex {
 public:
  explicit ManifoldIndex(const DiffusionModel& model) : tree_(model.train_embed) {}

  /// Mean distance from p to its r nearest embedded training points.
  double distance(const EmbeddedPoint& p, std::size_t r) const {
    const std::vector<double> d = tree_.nearest(p.psi.transpose(), std::max<std::size_t>(1, r));
    double sum = 0.0;
    for (double v : d) sum += v;
    return sum / static_cast<double>(d.size());
  }

 private:
  KdTree tree_;
};

inline double manifold_distance(const ManifoldIndex& index, const EmbeddedPoint& p, std::size_t r = 5) {
  return index.distance(p, r);
}

/// Euclidean step from the previous embedded point; nullopt for the first.
inline std::optional<double> increment_distance(DetectorState& state, const EmbeddedPoint& p) {
  if (!state.previous) {
    state.previous = p;
    return std::nullopt;
  }
  if (p.time < state.previous->time) {
    throw Error(ErrorKind::OutOfOrder, "embedded point at t=" + std::to_string(p.time) + " precedes t=" +
                                           std::to_string(state.previous->time));
  }
  const double d = (p.psi - state.previous->psi).norm();
  state.previous = p;
  return d;
}

/// Type-7 (linear interpolation) sample quantile.
inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorKind::InvalidArgument, "quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

/// Streaming detector: one per observation stream. Decisions use only the
/// frozen model and observations seen so far.
class Detector {
 public:
  Detector(const DiffusionModel& model, Thresholds thresholds, DetectOptions opts = {})
      : embedder_(model), index_(model), thresholds_(thresholds), opts_(opts) {}

  TraceRow step(const Observation& obs, std::vector<Alert>* alerts = nullptr) {
    TraceRow row;
    row.time = obs.time;
    const std::size_t idx = count_++;
    std::optional<EmbeddedPoint> p;
    try {
      p = embedder_(obs.x, obs.time);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::ZeroKernelRow) throw;
      ++zero_kernel_rows_;
    }
    if (p) {
      row.manifold_dist = index_.distance(*p, opts_.neighbors);
      row.increment_dist = increment_distance(state_, *p);
    } else {
      row.manifold_dist = std::numeric_limits<double>::infinity();
    }
    row.alert_dist = row.manifold_dist > thresholds_.k_dist;
    row.alert_cont = row.increment_dist && *row.increment_dist > thresholds_.k_cont;
    if (alerts) {
      if (row.alert_dist) raise(*alerts, DetectorKind::DistanceToManifold, row.time, row.manifold_dist, thresholds_.k_dist, idx);
      if (row.alert_cont) raise(*alerts, DetectorKind::IncrementDiscontinuity, row.time, *row.increment_dist, thresholds_.k_cont, idx);
    }
    return row;
  }

  std::size_t zero_kernel_rows() const { return zero_kernel_rows_; }
  const Thresholds& thresholds() const { return thresholds_; }

 private:
  void raise(std::vector<Alert>& alerts, DetectorKind kind, double t, double stat, double threshold, std::size_t idx) {
    std::optional<double>& last = kind == DetectorKind::DistanceToManifold ? last_dist_alert_ : last_cont_alert_;
    if (opts_.cooldown > 0.0 && last && t - *last < opts_.cooldown) return;
    last = t;
    alerts.push_back(Alert{t, kind, stat, threshold, idx});
  }

  Embedder embedder_;
  ManifoldIndex index_;
  Thresholds thresholds_;
  DetectOptions opts_;
  DetectorState state_;
  std::size_t count_ = 0;
  std::size_t zero_kernel_rows_ = 0;
  std::optional<double> last_dist_alert_;
  std::optional<double> last_cont_alert_;
};

struct DetectionResult {
  std::vector<Alert> alerts;
  std::vector<TraceRow> trace;
  std::size_t zero_kernel_rows = 0;
};

inline DetectionResult detect_stream(const DiffusionModel& model, const Thresholds& thresholds,
                                     std::span<const Observation> observations, const DetectOptions& opts = {}) {
  Detector det(model, thresholds, opts);
  DetectionResult out;
  out.trace.reserve(observations.size());
  for (const Observation& o : observations) out.trace.push_back(det.step(o, &out.alerts));
  out.zero_kernel_rows = det.zero_kernel_rows();
  return out;
}

inline constexpr std::size_t kMinHoldout = 1000;

/// Thresholds from an ambient holdout: c times the q-quantile of each
/// statistic. Non-finite distances (unembeddable points) are left out of the
/// quantile.
inline Thresholds calibrate(const DiffusionModel& model, std::span<const Observation> holdout, double q = 0.999,
                            double c = 1.5, const DetectOptions& opts = {}) {
  if (!(q > 0.0 && q < 1.0)) throw Error(ErrorKind::InvalidArgument, "quantile must lie in (0, 1)");
  if (!(c >= 1.0)) throw Error(ErrorKind::InvalidArgument, "multiplier must be >= 1");
  if (holdout.size() < kMinHoldout) {
    throw Error(ErrorKind::InsufficientHoldout,
                std::to_string(holdout.size()) + " holdout observations, need at least " + std::to_string(kMinHoldout));
  }
  Detector det(model, Thresholds{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(), q, c},
               DetectOptions{opts.neighbors, 0.0});
  std::vector<double> dist, incr;
  for (const Observation& o : holdout) {
    const TraceRow row = det.step(o);
    if (std::isfinite(row.manifold_dist)) dist.push_back(row.manifold_dist);
    if (row.increment_dist) incr.push_back(*row.increment_dist);
  }
  if (dist.empty() || incr.empty()) throw Error(ErrorKind::InsufficientHoldout, "holdout produced no finite statistics");
  constexpr double kFloor = 1e-12;  // thresholds must stay strictly positive
  return Thresholds{std::max(kFloor, c * quantile(std::move(dist), q)), std::max(kFloor, c * quantile(std::move(incr), q)), q, c};
}

}  // namespace canshape
