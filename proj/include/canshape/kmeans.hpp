#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "canshape/error.hpp"
#include "canshape/rng.hpp"

namespace canshape {

struct KMeansOptions {
  int restarts = 100;
  int max_iterations = 300;
  std::uint64_t seed = 0;
};

struct KMeansResult {
  std::vector<int> labels;
  Eigen::MatrixXd centroids;  // k x dim
  double inertia = std::numeric_limits<double>::infinity();
  bool converged = false;
  int iterations = 0;
};

namespace detail {

// Nearest centroid; ties go to the lowest index.
inline int nearest_centroid(const Eigen::MatrixXd& centroids, const Eigen::Ref<const Eigen::RowVectorXd>& p,
                            double* dist2) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const double d = (centroids.row(c) - p).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  if (dist2) *dist2 = best_d;
  return best;
}

inline Eigen::MatrixXd kmeans_pp_seed(const Eigen::MatrixXd& points, int k, std::mt19937_64& gen) {
  const Eigen::Index n = points.rows();
  Eigen::MatrixXd centroids(k, points.cols());
  centroids.row(0) = points.row(static_cast<Eigen::Index>(rng::uniform_index(gen, static_cast<std::uint64_t>(n))));
  Eigen::VectorXd d2(n);
  for (Eigen::Index i = 0; i < n; ++i) d2[i] = (points.row(i) - centroids.row(0)).squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double u = rng::uniform01(gen) * total;
      for (pick = 0; pick < n - 1; ++pick) {
        u -= d2[pick];
        if (u < 0.0) break;
      }
    } else {
      pick = static_cast<Eigen::Index>(rng::uniform_index(gen, static_cast<std::uint64_t>(n)));
    }
    centroids.row(c) = points.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) d2[i] = std::min(d2[i], (points.row(i) - centroids.row(c)).squaredNorm());
  }
  return centroids;
}

inline KMeansResult lloyd(const Eigen::MatrixXd& points, Eigen::MatrixXd centroids, int max_iterations) {
  const Eigen::Index n = points.rows();
  const auto k = centroids.rows();
  KMeansResult r;
  r.labels.assign(static_cast<std::size_t>(n), -1);
  std::vector<double> dist(static_cast<std::size_t>(n), 0.0);
  for (int it = 0; it < max_iterations; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int c = nearest_centroid(centroids, points.row(i), &dist[static_cast<std::size_t>(i)]);
      if (c != r.labels[static_cast<std::size_t>(i)]) {
        r.labels[static_cast<std::size_t>(i)] = c;
        changed = true;
      }
    }
    r.iterations = it + 1;
    if (!changed) {
      r.converged = true;
      break;
    }
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(r.labels[static_cast<std::size_t>(i)]) += points.row(i);
      ++counts[static_cast<std::size_t>(r.labels[static_cast<std::size_t>(i)])];
    }
    for (Eigen::Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        continue;
      }
      // Empty cluster: move it onto the point worst served by its centroid.
      Eigen::Index far = 0;
      for (Eigen::Index i = 1; i < n; ++i) {
        if (dist[static_cast<std::size_t>(i)] > dist[static_cast<std::size_t>(far)]) far = i;
      }
      centroids.row(c) = points.row(far);
      dist[static_cast<std::size_t>(far)] = 0.0;
    }
  }
  r.inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double d = 0.0;
    r.labels[static_cast<std::size_t>(i)] = nearest_centroid(centroids, points.row(i), &d);
    r.inertia += d;
  }
  r.centroids = std::move(centroids);
  return r;
}

}  // namespace detail

/// k-means with k-means++ seeding and independent restarts; keeps the run
/// with the lowest inertia (earliest run on ties).
inline KMeansResult kmeans(const Eigen::MatrixXd& points, int k, const KMeansOptions& opts = {}) {
  if (k < 1 || points.rows() < k) {
    throw Error(ErrorKind::InvalidArgument, "k-means needs 1 <= k <= number of points");
  }
  auto gen = rng::substream(opts.seed, "kmeans");
  KMeansResult best;
  for (int run = 0; run < std::max(1, opts.restarts); ++run) {
    KMeansResult r = detail::lloyd(points, detail::kmeans_pp_seed(points, k, gen), opts.max_iterations);
    if (r.inertia < best.inertia) best = std::move(r);
  }
  return best;
}

}  // namespace canshape
