#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "canshape/can_codec.hpp"
#include "canshape/error.hpp"
#include "canshape/kmeans.hpp"

namespace canshape {

/// Row/column key of the correlation matrix: either a real byte pair or the
/// canonical pseudo-id of a vehicle state.
struct SignalKey {
  BytePairId pair{};
  std::string canonical;  // non-empty for canonical pseudo-ids

  static SignalKey byte_pair(BytePairId id) { return {id, {}}; }
  static SignalKey canonical_state(std::string state) { return {{}, std::move(state)}; }

  bool is_canonical() const { return !canonical.empty(); }

  std::strong_ordering operator<=>(const SignalKey& o) const {
    if (is_canonical() != o.is_canonical()) return is_canonical() ? std::strong_ordering::greater : std::strong_ordering::less;
    if (is_canonical()) return canonical <=> o.canonical;
    return pair <=> o.pair;
  }
  bool operator==(const SignalKey& o) const { return (*this <=> o) == 0; }
};

inline constexpr std::string_view kCanonicalPrefix = "canonical:";

inline std::string to_string(const SignalKey& key) {
  return key.is_canonical() ? std::string(kCanonicalPrefix) + key.canonical : to_string(key.pair);
}

inline SignalKey parse_signal_key(std::string_view text) {
  if (text.starts_with(kCanonicalPrefix)) {
    const auto name = text.substr(kCanonicalPrefix.size());
    if (name.empty()) throw Error(ErrorKind::Schema, "empty canonical state name");
    return SignalKey::canonical_state(std::string(name));
  }
  return SignalKey::byte_pair(parse_byte_pair_id(text));
}

struct LabeledSeries {
  SignalKey key;
  Eigen::VectorXd values;
};

struct CorrelationMatrix {
  std::vector<SignalKey> ids;
  Eigen::MatrixXd values;
};

/// Pearson correlation of every pair of equal-length series. Canonical
/// vectors are appended after the byte pairs under their pseudo-ids.
inline CorrelationMatrix correlation_matrix(const std::vector<LabeledSeries>& series,
                                            const std::map<std::string, Eigen::VectorXd>& canonical = {}) {
  std::vector<const LabeledSeries*> all;
  std::vector<LabeledSeries> canon;
  canon.reserve(canonical.size());
  for (const auto& [state, v] : canonical) canon.push_back({SignalKey::canonical_state(state), v});
  for (const auto& s : series) all.push_back(&s);
  for (const auto& s : canon) all.push_back(&s);
  if (all.empty()) throw Error(ErrorKind::InvalidArgument, "no series to correlate");

  const Eigen::Index len = all.front()->values.size();
  if (len < 2) throw Error(ErrorKind::TooShort, "correlation needs series of length >= 2");
  const auto n = static_cast<Eigen::Index>(all.size());
  Eigen::MatrixXd z(len, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::VectorXd& v = all[static_cast<std::size_t>(j)]->values;
    if (v.size() != len) {
      throw Error(ErrorKind::LengthMismatch, to_string(all[static_cast<std::size_t>(j)]->key) + " has length " +
                                                 std::to_string(v.size()) + ", expected " + std::to_string(len));
    }
    const Eigen::VectorXd centered = v.array() - v.mean();
    const double norm = centered.norm();
    if (!(norm > 0.0) || norm <= 1e-12 * std::max(1.0, v.cwiseAbs().maxCoeff()) * std::sqrt(static_cast<double>(len))) {
      throw Error(ErrorKind::ConstantSeries, to_string(all[static_cast<std::size_t>(j)]->key) + " has zero variance");
    }
    z.col(j) = centered / norm;
  }

  CorrelationMatrix out;
  out.ids.reserve(all.size());
  for (const auto* s : all) out.ids.push_back(s->key);
  out.values = Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double r = std::clamp(z.col(i).dot(z.col(j)), -1.0, 1.0);
      out.values(i, j) = r;
      out.values(j, i) = r;
    }
  }
  return out;
}

struct CoClusterOptions {
  int restarts = 100;
  int max_iterations = 300;
  std::uint64_t seed = 0;
};

struct CoClusterModel {
  int cluster_count = 0;
  std::vector<SignalKey> ids;
  std::vector<int> assignment;                      // aligned with ids
  std::map<int, std::vector<std::string>> labels;  // cluster -> states whose canonical landed there
  int disagreement_count = 0;
  bool converged = true;
  std::vector<std::string> warnings;

  std::vector<SignalKey> members(int cluster) const {
    std::vector<SignalKey> out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (assignment[i] == cluster) out.push_back(ids[i]);
    }
    return out;
  }

  /// Cluster carrying the given state label, if any.
  std::optional<int> cluster_for(const std::string& state) const {
    for (const auto& [c, states] : labels) {
      if (std::find(states.begin(), states.end(), state) != states.end()) return c;
    }
    return std::nullopt;
  }
};

/// Bipartite spectral co-clustering of |M|. Each signal is a node on both
/// sides of the bipartite graph; rows and columns are embedded jointly and
/// clustered by k-means.
inline CoClusterModel spectral_cocluster(const CorrelationMatrix& m, int k, const CoClusterOptions& opts = {}) {
  const Eigen::Index n = m.values.rows();
  if (k < 2) throw Error(ErrorKind::InvalidArgument, "cluster count must be >= 2");
  if (n < k) throw Error(ErrorKind::InvalidArgument, "fewer signals than clusters");
  if (m.values.cols() != n || static_cast<Eigen::Index>(m.ids.size()) != n) {
    throw Error(ErrorKind::DimensionMismatch, "correlation matrix shape does not match id list");
  }

  const Eigen::MatrixXd a = m.values.cwiseAbs();
  const Eigen::VectorXd row_sums = a.rowwise().sum();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(row_sums[i] > 0.0)) throw Error(ErrorKind::DegenerateRow, to_string(m.ids[static_cast<std::size_t>(i)]) + " has zero row sum");
  }
  const Eigen::VectorXd d_inv_sqrt = row_sums.cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd an = d_inv_sqrt.asDiagonal() * a * d_inv_sqrt.asDiagonal();
  an = 0.5 * (an + an.transpose());

  // An is symmetric, so its singular triplets come from the eigenpairs:
  // u = e, v = sign(lambda) e. The trivial pair (sigma = 1, D^1/2 1) is
  // deflated explicitly, which matches dropping the first singular vector
  // and stays well defined when that singular value is repeated.
  Eigen::VectorXd trivial = row_sums.cwiseSqrt();
  trivial.normalize();
  an -= trivial * trivial.transpose();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(an);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) {
    return std::abs(eig.eigenvalues()[x]) > std::abs(eig.eigenvalues()[y]);
  });

  const int vecs = std::max(1, static_cast<int>(std::ceil(std::log2(static_cast<double>(k)))));
  Eigen::MatrixXd z(2 * n, vecs);
  for (int c = 0; c < vecs; ++c) {
    const Eigen::Index src = order[static_cast<std::size_t>(c)];
    Eigen::VectorXd u = eig.eigenvectors().col(src);
    // deterministic sign: largest-magnitude entry positive
    Eigen::Index arg = 0;
    u.cwiseAbs().maxCoeff(&arg);
    if (u[arg] < 0) u = -u;
    const double sign = eig.eigenvalues()[src] < 0 ? -1.0 : 1.0;
    z.col(c).head(n) = d_inv_sqrt.cwiseProduct(u);
    z.col(c).tail(n) = sign * d_inv_sqrt.cwiseProduct(u);
  }

  const KMeansResult km = kmeans(z, k, KMeansOptions{opts.restarts, opts.max_iterations, opts.seed});

  // Relabel clusters by first appearance in id order.
  std::map<int, int> relabel;
  for (Eigen::Index i = 0; i < n; ++i) relabel.try_emplace(km.labels[static_cast<std::size_t>(i)], static_cast<int>(relabel.size()));
  for (int c = 0; c < k; ++c) relabel.try_emplace(c, static_cast<int>(relabel.size()));

  CoClusterModel out;
  out.cluster_count = k;
  out.ids = m.ids;
  out.assignment.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const int row_label = km.labels[static_cast<std::size_t>(i)];
    const int col_label = km.labels[static_cast<std::size_t>(n + i)];
    if (row_label != col_label) ++out.disagreement_count;
    out.assignment[static_cast<std::size_t>(i)] = relabel.at(row_label);
  }
  for (std::size_t i = 0; i < out.ids.size(); ++i) {
    if (out.ids[i].is_canonical()) out.labels[out.assignment[i]].push_back(out.ids[i].canonical);
  }
  out.converged = km.converged;
  if (!km.converged) {
    out.warnings.push_back("KMeansNoConverge: iteration cap hit; returning best-so-far partition");
  }
  if (out.disagreement_count > 0) {
    out.warnings.push_back(std::to_string(out.disagreement_count) +
                           " row/column node assignment disagreement(s), resolved by row node");
  }
  return out;
}

/// Permutation grouping ids by cluster (clusters in index order, members in
/// matrix order).
inline std::vector<std::size_t> cluster_heatmap_order(const CoClusterModel& model) {
  std::vector<std::size_t> perm(model.ids.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::stable_sort(perm.begin(), perm.end(),
                   [&](std::size_t a, std::size_t b) { return model.assignment[a] < model.assignment[b]; });
  return perm;
}

inline CorrelationMatrix reorder(const CorrelationMatrix& m, const std::vector<std::size_t>& perm) {
  CorrelationMatrix out;
  const auto n = static_cast<Eigen::Index>(perm.size());
  out.values.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.ids.push_back(m.ids[perm[static_cast<std::size_t>(i)]]);
    for (Eigen::Index j = 0; j < n; ++j) {
      out.values(i, j) = m.values(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)]),
                                  static_cast<Eigen::Index>(perm[static_cast<std::size_t>(j)]));
    }
  }
  return out;
}

}  // namespace canshape
