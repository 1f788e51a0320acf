#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "canshape/can_codec.hpp"
#include "canshape/error.hpp"
#include "canshape/rng.hpp"
#include "canshape/signal_pipeline.hpp"

namespace canshape {

/// Gaussian kernel exp(-gamma * ||a - b||^2).
template <typename DerivedA, typename DerivedB>
double kernel(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b, double gamma) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::DimensionMismatch,
                "kernel arguments of size " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  if (!(gamma > 0.0)) throw Error(ErrorKind::InvalidArgument, "gamma must be positive");
  return std::exp(-gamma * (a.template cast<double>() - b.template cast<double>()).squaredNorm());
}

/// Kernel values below this are stored as exact zeros. They carry no weight
/// next to any normal row sum, and keeping them would push products into
/// subnormal range, which is very slow on x86.
inline constexpr double kKernelFloor = 1e-150;

namespace detail {

template <typename Derived>
void floor_kernel(Eigen::MatrixBase<Derived>& k) {
  k = (k.array() < kKernelFloor).select(0.0, k.array());
}

}  // namespace detail

/// Squared Euclidean distances between the rows of x (n x d) and the columns
/// of y (d x k), clamped at zero.
inline Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  const Eigen::VectorXd xn = x.rowwise().squaredNorm();
  const Eigen::RowVectorXd yn = y.colwise().squaredNorm();
  Eigen::MatrixXd d = -2.0 * (x * y);
  d.colwise() += xn;
  d.rowwise() += yn;
  return d.cwiseMax(0.0);
}

struct GammaSelection {
  double gamma = 0.0;
  std::vector<double> log_gamma;
  std::vector<double> log_sum;  // log sum_ij K(x_i, x_j; gamma)
  bool fallback = false;        // no linear region; median-distance rule used
  std::size_t segment_begin = 0;  // grid indices of the chosen linear stretch
  std::size_t segment_end = 0;
};

namespace detail {

inline std::vector<double> pairwise_sq_distances(const Eigen::MatrixXd& sample) {
  const Eigen::MatrixXd d = squared_distances(sample, sample.transpose());
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(d.rows() * (d.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < d.rows(); ++i)
    for (Eigen::Index j = i + 1; j < d.cols(); ++j) out.push_back(d(i, j));
  return out;
}

inline double median_of(std::vector<double> v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double hi = *mid;
  return 0.5 * (hi + *std::max_element(v.begin(), mid));
}

}  // namespace detail

/// Log-spaced gamma grid around 1/median squared distance of the sample.
inline std::vector<double> default_gamma_grid(const Eigen::MatrixXd& sample, double decades_below = 3.0,
                                              double decades_above = 5.0, int per_decade = 10) {
  std::vector<double> d2 = detail::pairwise_sq_distances(sample);
  std::erase_if(d2, [](double v) { return !(v > 0.0); });
  if (d2.empty()) throw Error(ErrorKind::InvalidArgument, "gamma selection needs at least 2 distinct points");
  const double center = std::log10(1.0 / detail::median_of(std::move(d2)));
  const int steps = static_cast<int>(std::lround((decades_below + decades_above) * per_decade));
  std::vector<double> grid;
  for (int i = 0; i <= steps; ++i) grid.push_back(std::pow(10.0, center - decades_below + static_cast<double>(i) / per_decade));
  return grid;
}

/// Bandwidth heuristic: compute S(gamma) = log sum_ij K over a log grid and
/// return the gamma at the right end of the longest stretch where the slope
/// dS/dlog(gamma) stays within 20% of the stretch median and exceeds 0.1 in
/// magnitude. Falls back to 1/median(||xi - xj||^2) when no stretch exists.
inline GammaSelection select_gamma(const Eigen::MatrixXd& sample, const std::vector<double>& grid) {
  if (grid.size() < 2) throw Error(ErrorKind::InvalidArgument, "gamma grid needs at least 2 points");
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1]) || !(grid[0] > 0.0)) throw Error(ErrorKind::InvalidArgument, "gamma grid must be positive and increasing");
  }
  if (std::log10(grid.back() / grid.front()) < 4.0 - 1e-9) {
    throw Error(ErrorKind::InvalidArgument, "gamma grid must span at least 4 decades");
  }
  const std::vector<double> d2 = detail::pairwise_sq_distances(sample);
  if (std::none_of(d2.begin(), d2.end(), [](double v) { return v > 0.0; })) {
    throw Error(ErrorKind::InvalidArgument, "gamma selection needs at least 2 distinct points");
  }
  const double n = static_cast<double>(sample.rows());

  GammaSelection sel;
  for (double g : grid) {
    // n unit diagonal entries plus each off-diagonal pair twice
    double acc = 0.0;
    for (double v : d2) acc += std::exp(-g * v);
    sel.log_gamma.push_back(std::log(g));
    sel.log_sum.push_back(std::log(n + 2.0 * acc));
  }

  const std::size_t slopes = grid.size() - 1;
  std::vector<double> slope(slopes);
  for (std::size_t i = 0; i < slopes; ++i) {
    slope[i] = (sel.log_sum[i + 1] - sel.log_sum[i]) / (sel.log_gamma[i + 1] - sel.log_gamma[i]);
  }

  constexpr std::size_t kMinSlopes = 3;
  std::size_t best_len = 0, best_a = 0;
  for (std::size_t a = 0; a < slopes; ++a) {
    for (std::size_t b = a + kMinSlopes - 1; b < slopes; ++b) {
      const std::size_t len = b - a + 1;
      if (len <= best_len) continue;
      std::vector<double> seg(slope.begin() + static_cast<std::ptrdiff_t>(a), slope.begin() + static_cast<std::ptrdiff_t>(b + 1));
      const double med = detail::median_of(seg);
      const bool ok = std::all_of(seg.begin(), seg.end(), [med](double s) {
        return std::abs(s) > 0.1 && std::abs(s - med) <= 0.2 * std::abs(med);
      });
      if (ok) {
        best_len = len;
        best_a = a;
      }
    }
  }
  if (best_len == 0) {
    std::vector<double> pos;
    for (double v : d2)
      if (v > 0.0) pos.push_back(v);
    sel.gamma = 1.0 / detail::median_of(std::move(pos));
    sel.fallback = true;
    return sel;
  }
  sel.segment_begin = best_a;
  sel.segment_end = best_a + best_len;  // grid index at the right end of the last slope
  sel.gamma = grid[sel.segment_end];
  return sel;
}

/// Everything needed to embed new observations of one cluster.
struct DiffusionModel {
  double gamma = 0.0;
  int m = 3;
  std::vector<BytePairId> member_ids;
  Scaler scaler;
  std::set<BytePairId> known_ids;            // all byte pairs present at training time
  Eigen::MatrixXd landmarks;                  // d x k, one landmark per column
  std::vector<std::size_t> landmark_indices;  // rows of the training set
  Eigen::MatrixXd landmark_pinv;              // k x k
  Eigen::VectorXd eigvals;                    // m+1, descending, eigvals[0] = 1
  Eigen::MatrixXd eigvecs;                    // n x (m+1), right eigenvectors of P-hat
  Eigen::MatrixXd train_embed;                // n x m
  Eigen::MatrixXd projection_cache;           // k x (m+1): B A^T 1, then B A^T xi_2..xi_{m+1}

  Eigen::Index landmark_count() const { return landmarks.cols(); }
  Eigen::Index input_dim() const { return landmarks.rows(); }
  Eigen::Index train_size() const { return train_embed.rows(); }
};

struct EmbeddedPoint {
  double time = 0.0;
  Eigen::VectorXd psi;
};

struct FitOptions {
  int landmarks = 1000;
  int m = 3;
  std::optional<double> gamma;  // nullopt selects it from the training data
  double pinv_rtol = 1e-10;
  std::uint64_t seed = 0;
  int gamma_sample = 500;  // points used by the bandwidth heuristic
};

/// Rank-revealing factor of the Nystrom kernel: K-hat = G G^T with
/// row sums D = G (G^T 1).
struct NystromFactor {
  Eigen::MatrixXd g;  // n x r
  Eigen::VectorXd row_sums;
};

struct FitResult {
  DiffusionModel model;
  NystromFactor factor;
  std::optional<GammaSelection> gamma_selection;
  std::vector<std::string> warnings;
};

/// Uniform subsample of k distinct row indices (partial Fisher-Yates), sorted.
inline std::vector<std::size_t> sample_landmarks(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto gen = rng::substream(seed, "landmarks");
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng::uniform_index(gen, n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace detail {

inline void fix_sign(Eigen::Ref<Eigen::VectorXd> v) {
  Eigen::Index arg = 0;
  v.cwiseAbs().maxCoeff(&arg);
  if (v[arg] < 0) v = -v;
}

}  // namespace detail

/// Fits a diffusion map over n scaled observations (rows) with k Nystrom
/// landmarks. The n x n matrices are never formed: all spectral work runs
/// through the rank-r factor G with K-hat = A B A^T = G G^T.
inline FitResult fit(const Eigen::MatrixXd& observations, const FitOptions& opts) {
  const Eigen::Index n = observations.rows();
  const int k = opts.landmarks;
  const int m = opts.m;
  if (m < 1) throw Error(ErrorKind::InvalidArgument, "embedding dimension m must be >= 1");
  if (k < m + 2) throw Error(ErrorKind::InvalidArgument, "landmark count must be >= m + 2");
  if (n < k) {
    throw Error(ErrorKind::InvalidArgument, "landmark count " + std::to_string(k) + " exceeds training size " + std::to_string(n));
  }
  if (!observations.allFinite()) throw Error(ErrorKind::InvalidArgument, "training observations must be finite");

  FitResult out;
  DiffusionModel& model = out.model;
  model.m = m;

  if (opts.gamma) {
    if (!(*opts.gamma > 0.0)) throw Error(ErrorKind::InvalidArgument, "gamma must be positive");
    model.gamma = *opts.gamma;
  } else {
    const auto s = static_cast<std::size_t>(std::min<Eigen::Index>(n, opts.gamma_sample));
    const auto rows = sample_landmarks(static_cast<std::size_t>(n), s, rng::substream_seed(opts.seed, "gamma"));
    Eigen::MatrixXd sample(static_cast<Eigen::Index>(s), observations.cols());
    for (std::size_t i = 0; i < s; ++i) sample.row(static_cast<Eigen::Index>(i)) = observations.row(static_cast<Eigen::Index>(rows[i]));
    GammaSelection sel = select_gamma(sample, default_gamma_grid(sample));
    if (sel.fallback) out.warnings.push_back("NoLinearRegion: gamma set by the median pairwise distance rule");
    model.gamma = sel.gamma;
    out.gamma_selection = std::move(sel);
  }

  model.landmark_indices = sample_landmarks(static_cast<std::size_t>(n), static_cast<std::size_t>(k), opts.seed);
  model.landmarks.resize(observations.cols(), k);
  for (int j = 0; j < k; ++j) {
    model.landmarks.col(j) = observations.row(static_cast<Eigen::Index>(model.landmark_indices[static_cast<std::size_t>(j)])).transpose();
  }

  // A (n x k) and W (k x k).
  Eigen::MatrixXd a = (-model.gamma * squared_distances(observations, model.landmarks)).array().exp().matrix();
  detail::floor_kernel(a);
  Eigen::MatrixXd w(k, k);
  for (int j = 0; j < k; ++j) w.row(j) = a.row(static_cast<Eigen::Index>(model.landmark_indices[static_cast<std::size_t>(j)]));
  w = 0.5 * (w + w.transpose());

  // B = W^+ with eigenvalues below rtol * max zeroed; W is symmetric PSD so
  // its singular values are its eigenvalues.
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> weig(w);
  const Eigen::VectorXd& wl = weig.eigenvalues();
  const double wmax = wl.cwiseAbs().maxCoeff();
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = k - 1; i >= 0; --i) {
    if (wl[i] > opts.pinv_rtol * wmax) keep.push_back(i);
  }
  const auto r = static_cast<Eigen::Index>(keep.size());
  if (r < m + 1) {
    throw Error(ErrorKind::RankCollapse, "landmark kernel has numerical rank " + std::to_string(r) + " < m + 1; reduce m or gamma");
  }
  Eigen::MatrixXd v(k, r);
  Eigen::VectorXd inv_sqrt(r);
  for (Eigen::Index c = 0; c < r; ++c) {
    v.col(c) = weig.eigenvectors().col(keep[static_cast<std::size_t>(c)]);
    inv_sqrt[c] = 1.0 / std::sqrt(wl[keep[static_cast<std::size_t>(c)]]);
  }
  model.landmark_pinv = v * inv_sqrt.cwiseAbs2().asDiagonal() * v.transpose();

  // K-hat = G G^T, G = A V L^{-1/2}.
  const Eigen::MatrixXd v_scaled = v * inv_sqrt.asDiagonal();
  out.factor.g.noalias() = a * v_scaled;
  const Eigen::MatrixXd& g = out.factor.g;
  Eigen::VectorXd d = g * g.colwise().sum().transpose();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (d[i] < -1e-12) {
      throw Error(ErrorKind::NegativeRowSum, "approximated kernel row " + std::to_string(i) + " sums to " + std::to_string(d[i]));
    }
    d[i] = std::max(d[i], std::numeric_limits<double>::min());
  }
  out.factor.row_sums = d;

  // Symmetric conjugate S = D^-1/2 K-hat D^-1/2 = H H^T. Its nonzero
  // spectrum is that of H^T H (r x r).
  const Eigen::VectorXd d_inv_sqrt = d.cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd h = d_inv_sqrt.asDiagonal() * g;
  Eigen::MatrixXd gram(r, r);
  gram.setZero();
  gram.selfadjointView<Eigen::Lower>().rankUpdate(h.transpose());
  gram = gram.selfadjointView<Eigen::Lower>();
  gram = 0.5 * (gram + gram.transpose());
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> geig(gram);
  const Eigen::VectorXd& gl = geig.eigenvalues();  // ascending
  const double top = gl[r - 1];
  int nonzero = 0;
  for (Eigen::Index i = 0; i < r; ++i) nonzero += gl[i] > 1e-12 * top ? 1 : 0;
  if (nonzero < m + 1) {
    throw Error(ErrorKind::RankCollapse, "only " + std::to_string(nonzero) + " nonzero diffusion eigenvalues; reduce m or gamma");
  }

  model.eigvals.resize(m + 1);
  model.eigvecs.resize(n, m + 1);
  for (int j = 0; j <= m; ++j) {
    const Eigen::Index src = r - 1 - j;
    const double lambda = gl[src];
    Eigen::VectorXd phi = h * geig.eigenvectors().col(src) / std::sqrt(lambda);
    phi.normalize();
    if (j == 0) {
      if (phi.sum() < 0) phi = -phi;
    } else {
      detail::fix_sign(phi);
    }
    model.eigvals[j] = lambda;
    model.eigvecs.col(j) = d_inv_sqrt.cwiseProduct(phi);  // right eigenvector of P-hat
  }

  // Training embedding: <p-hat_i, xi_j> = (P-hat xi_j)_i = lambda_j xi_j(i).
  model.train_embed.resize(n, m);
  for (int j = 1; j <= m; ++j) model.train_embed.col(j - 1) = model.eigvals[j] * model.eigvecs.col(j);

  // Out-of-sample projection cache: B A^T [1, xi_2 .. xi_{m+1}].
  Eigen::MatrixXd basis(n, m + 1);
  basis.col(0).setOnes();
  basis.rightCols(m) = model.eigvecs.rightCols(m);
  model.projection_cache = model.landmark_pinv * (a.transpose() * basis);
  return out;
}

/// Stateless embedding of new observations against a frozen model. Holds
/// scratch space, so one instance per thread.
class Embedder {
 public:
  explicit Embedder(const DiffusionModel& model) : model_(&model) {}

  /// Psi(x)_j = <p-hat(x), xi_{j+1}>, p-hat(x) = k-hat(x) / sum k-hat(x),
  /// k-hat(x) = a(x) B A^T. Throws ZeroKernelRow when x is beyond the reach
  /// of every landmark at working precision.
  EmbeddedPoint operator()(const Eigen::VectorXd& x, double time = 0.0) {
    const DiffusionModel& mdl = *model_;
    if (x.size() != mdl.input_dim()) {
      throw Error(ErrorKind::DimensionMismatch,
                  "observation has " + std::to_string(x.size()) + " coordinates, model expects " + std::to_string(mdl.input_dim()));
    }
    a_ = (-mdl.gamma * (mdl.landmarks.colwise() - x).colwise().squaredNorm()).array().exp().matrix().transpose();
    detail::floor_kernel(a_);
    proj_.noalias() = mdl.projection_cache.transpose() * a_;
    const double total = proj_[0];
    if (!(total > 1e-300)) {
      throw Error(ErrorKind::ZeroKernelRow, "observation at t=" + std::to_string(time) + " has no kernel mass on the landmarks");
    }
    return EmbeddedPoint{time, proj_.tail(mdl.m) / total};
  }

  /// Kernel row against the landmarks from the last call.
  const Eigen::VectorXd& last_kernel_row() const { return a_; }

 private:
  const DiffusionModel* model_;
  Eigen::VectorXd a_;
  Eigen::VectorXd proj_;
};

inline EmbeddedPoint embed(const DiffusionModel& model, const Eigen::VectorXd& x, double time = 0.0) {
  Embedder e(model);
  return e(x, time);
}

/// Explicit n x k kernel block against the model landmarks.
inline Eigen::MatrixXd landmark_kernel(const DiffusionModel& model, const Eigen::MatrixXd& observations) {
  Eigen::MatrixXd k = (-model.gamma * squared_distances(observations, model.landmarks)).array().exp().matrix();
  detail::floor_kernel(k);
  return k;
}

}  // namespace canshape
