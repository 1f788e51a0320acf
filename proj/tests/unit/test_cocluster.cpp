#include <catch_amalgamated.hpp>

#include <random>

#include "canshape/cocluster.hpp"
#include "canshape/kmeans.hpp"
#include "support/oracles.hpp"

using namespace canshape;

namespace {

LabeledSeries series(std::uint32_t aid, std::vector<double> v) {
  return {SignalKey::byte_pair({aid, 0}), Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()))};
}

}  // namespace

TEST_CASE("pearson examples") {
  const std::vector<double> v{1, 2, 3, 4}, w{1, 3, 2, 4};
  const auto m = correlation_matrix({series(1, v), series(2, w)});
  CHECK(m.values(0, 1) == Catch::Approx(oracle::pearson(v, w)).margin(1e-12));
  CHECK(m.values(0, 1) == Catch::Approx(0.8).margin(1e-12));

  std::vector<double> affine, neg;
  for (double x : v) {
    affine.push_back(2 * x + 3);
    neg.push_back(-x);
  }
  const auto m2 = correlation_matrix({series(1, v), series(2, affine), series(3, neg)});
  CHECK(m2.values(0, 1) == Catch::Approx(1.0).margin(1e-12));
  CHECK(m2.values(0, 2) == Catch::Approx(-1.0).margin(1e-12));
}

TEST_CASE("correlation errors") {
  auto kind = [](auto f) {
    try {
      f();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Io;
  };
  CHECK(kind([] { correlation_matrix({series(1, {1, 1, 1}), series(2, {1, 2, 3})}); }) == ErrorKind::ConstantSeries);
  CHECK(kind([] { correlation_matrix({series(1, {1, 2, 3}), series(2, {1, 2})}); }) == ErrorKind::LengthMismatch);
  CHECK(kind([] { correlation_matrix({series(1, {1}), series(2, {2})}); }) == ErrorKind::TooShort);
}

TEST_CASE("property: correlation matrix is symmetric with unit diagonal and bounded entries") {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> nd;
  std::vector<LabeledSeries> s;
  for (std::uint32_t i = 0; i < 12; ++i) {
    std::vector<double> v(200);
    for (auto& x : v) x = nd(gen);
    s.push_back(series(i, v));
  }
  std::map<std::string, Eigen::VectorXd> canon{{"Speed", Eigen::VectorXd::LinSpaced(200, 0, 1)}};
  const auto m = correlation_matrix(s, canon);
  REQUIRE(m.values.rows() == 13);
  CHECK(m.ids.back() == SignalKey::canonical_state("Speed"));
  CHECK((m.values - m.values.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((m.values.diagonal().array() == 1.0).all());
  CHECK(m.values.cwiseAbs().maxCoeff() <= 1.0);
}

TEST_CASE("two perfect blocks are recovered exactly") {
  CorrelationMatrix m;
  for (std::uint32_t i = 0; i < 6; ++i) m.ids.push_back(SignalKey::byte_pair({i, 0}));
  m.values = Eigen::MatrixXd::Zero(6, 6);
  m.values.topLeftCorner(3, 3).setOnes();
  m.values.bottomRightCorner(3, 3).setOnes();
  const auto model = spectral_cocluster(m, 2);
  CHECK(oracle::same_partition(model.assignment, {0, 0, 0, 1, 1, 1}));
  CHECK(model.disagreement_count == 0);
}

TEST_CASE("planted blocks: purity, partition property and labels") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto p = oracle::planted_blocks(seed, 3, 20, 0.9, 0.05, 0.02, {{"Speed", 1}});
    const auto model = spectral_cocluster(p.matrix, 3, CoClusterOptions{100, 300, seed});
    CHECK(oracle::purity(model.assignment, p.block) >= 0.95);
    std::vector<int> sizes(3, 0);
    for (int a : model.assignment) {
      REQUIRE(a >= 0);
      REQUIRE(a < 3);
      ++sizes[static_cast<std::size_t>(a)];
    }
    CHECK(sizes[0] + sizes[1] + sizes[2] == 61);
    const auto speed = model.cluster_for("Speed");
    REQUIRE(speed);
    // the labeled cluster is the one holding planted block 1
    for (std::size_t i = 0; i < p.block.size(); ++i) {
      if (p.block[i] == 1) CHECK(model.assignment[i] == *speed);
    }
  }
}

TEST_CASE("co-clustering ignores correlation signs") {
  auto p = oracle::planted_blocks(21);
  const auto base = spectral_cocluster(p.matrix, 3, CoClusterOptions{20, 300, 4});
  // negate series 5: row and column 5 flip sign, the diagonal stays 1
  p.matrix.values.row(5) *= -1.0;
  p.matrix.values.col(5) *= -1.0;
  const auto flipped = spectral_cocluster(p.matrix, 3, CoClusterOptions{20, 300, 4});
  CHECK(base.assignment == flipped.assignment);
}

TEST_CASE("permuting ids yields an equivalent partition") {
  const auto p = oracle::planted_blocks(33);
  const auto base = spectral_cocluster(p.matrix, 3, CoClusterOptions{20, 300, 9});
  const Eigen::Index n = p.matrix.values.rows();
  std::vector<std::size_t> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 gen(2);
  std::shuffle(perm.begin(), perm.end(), gen);
  const auto shuffled = reorder(p.matrix, perm);
  const auto model = spectral_cocluster(shuffled, 3, CoClusterOptions{20, 300, 9});
  std::vector<int> back(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < perm.size(); ++i) back[perm[i]] = model.assignment[i];
  CHECK(oracle::same_partition(base.assignment, back));
}

TEST_CASE("heatmap order groups clusters and is block-diagonal on the planted model") {
  CoClusterModel m;
  m.cluster_count = 2;
  m.ids = {SignalKey::byte_pair({0xA, 0}), SignalKey::byte_pair({0xB, 0}), SignalKey::byte_pair({0xC, 0})};
  m.assignment = {0, 1, 0};
  CHECK(cluster_heatmap_order(m) == std::vector<std::size_t>{0, 2, 1});
  m.assignment = {0, 0, 0};
  CHECK(cluster_heatmap_order(m) == std::vector<std::size_t>{0, 1, 2});

  const auto p = oracle::planted_blocks(5);
  const auto model = spectral_cocluster(p.matrix, 3, CoClusterOptions{20, 300, 5});
  const auto perm = cluster_heatmap_order(model);
  const auto r = reorder(p.matrix, perm);
  double intra = 0, inter = 0;
  int ni = 0, ne = 0;
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t j = 0; j < perm.size(); ++j) {
      if (i == j) continue;
      const double v = std::abs(r.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      if (model.assignment[perm[i]] == model.assignment[perm[j]]) {
        intra += v;
        ++ni;
      } else {
        inter += v;
        ++ne;
      }
    }
  CHECK(intra / ni > inter / ne);
}

TEST_CASE("degenerate and invalid inputs") {
  CorrelationMatrix m;
  for (std::uint32_t i = 0; i < 3; ++i) m.ids.push_back(SignalKey::byte_pair({i, 0}));
  m.values = Eigen::MatrixXd::Identity(3, 3);
  m.values(2, 2) = 0.0;
  CHECK_THROWS_AS(spectral_cocluster(m, 2), Error);
  m.values(2, 2) = 1.0;
  CHECK_THROWS_AS(spectral_cocluster(m, 1), Error);
  CHECK_THROWS_AS(spectral_cocluster(m, 4), Error);
}

TEST_CASE("signal keys round-trip through text") {
  CHECK(to_string(SignalKey::canonical_state("Speed")) == "canonical:Speed");
  CHECK(parse_signal_key("canonical:Speed") == SignalKey::canonical_state("Speed"));
  CHECK(parse_signal_key("0D0:1") == SignalKey::byte_pair({0x0D0, 1}));
  CHECK(SignalKey::byte_pair({0xFFF, 3}) < SignalKey::canonical_state("A"));
}

TEST_CASE("k-means separates well-spaced groups and is seed-deterministic") {
  Eigen::MatrixXd pts(30, 2);
  std::mt19937_64 gen(1);
  std::normal_distribution<double> nd(0, 0.05);
  for (int i = 0; i < 30; ++i) {
    pts(i, 0) = (i / 10) * 5.0 + nd(gen);
    pts(i, 1) = nd(gen);
  }
  const auto a = kmeans(pts, 3, KMeansOptions{10, 300, 8});
  const auto b = kmeans(pts, 3, KMeansOptions{10, 300, 8});
  CHECK(a.labels == b.labels);
  CHECK(a.converged);
  std::vector<int> truth;
  for (int i = 0; i < 30; ++i) truth.push_back(i / 10);
  CHECK(oracle::same_partition(a.labels, truth));
}

TEST_CASE("nearest centroid ties go to the lowest index") {
  Eigen::MatrixXd c(2, 1);
  c << -1, 1;
  Eigen::RowVectorXd p(1);
  p << 0;
  CHECK(detail::nearest_centroid(c, p, nullptr) == 0);
}
