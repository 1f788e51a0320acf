#include <catch_amalgamated.hpp>

#include <random>

#include "canshape/detect.hpp"
#include "canshape/kdtree.hpp"
#include "support/oracles.hpp"

using namespace canshape;

namespace {

std::vector<Observation> iid_stream(std::uint64_t seed, std::size_t n, Eigen::Index d, double t0 = 0.0) {
  const Eigen::MatrixXd x = oracle::random_points(seed, static_cast<Eigen::Index>(n), d);
  std::vector<Observation> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({t0 + 0.01 * static_cast<double>(i), x.row(static_cast<Eigen::Index>(i)).transpose()});
  return out;
}

DiffusionModel small_model(std::uint64_t seed = 1) {
  FitOptions opts;
  opts.landmarks = 60;
  opts.m = 3;
  opts.gamma = 3.0;
  opts.seed = seed;
  return fit(oracle::random_points(seed, 600, 3), opts).model;
}

}  // namespace

TEST_CASE("k-d tree matches brute force") {
  std::mt19937_64 gen(2);
  for (Eigen::Index n : {1, 7, 50, 400}) {
    const Eigen::MatrixXd pts = oracle::random_points(static_cast<std::uint64_t>(n), n, 3);
    const KdTree tree(pts, 4);
    for (int q = 0; q < 30; ++q) {
      const Eigen::RowVectorXd query = oracle::random_points(gen(), 1, 3).row(0).array() * 1.4 - 0.2;
      std::vector<double> brute;
      for (Eigen::Index i = 0; i < n; ++i) brute.push_back((pts.row(i) - query).norm());
      std::sort(brute.begin(), brute.end());
      for (std::size_t r : {std::size_t{1}, std::size_t{5}, std::size_t{20}}) {
        const auto got = tree.nearest(query, r);
        REQUIRE(got.size() == std::min<std::size_t>(r, static_cast<std::size_t>(n)));
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == Catch::Approx(brute[i]).margin(1e-12));
      }
    }
  }
  CHECK_THROWS_AS(KdTree(oracle::random_points(1, 5, 2)).nearest(Eigen::RowVector3d(0, 0, 0), 1), Error);
}

TEST_CASE("manifold distance examples") {
  DiffusionModel m;
  m.m = 1;
  m.train_embed.resize(10, 1);
  for (int i = 0; i < 10; ++i) m.train_embed(i, 0) = i;
  const ManifoldIndex index(m);
  EmbeddedPoint p{0.0, Eigen::VectorXd::Constant(1, 4.0)};
  CHECK(manifold_distance(index, p, 1) == 0.0);
  p.psi[0] = 2.5;
  CHECK(manifold_distance(index, p, 1) == Catch::Approx(0.5));
  // r = 2 averages the two grid neighbours at distance 0.5
  CHECK(manifold_distance(index, p, 2) == Catch::Approx(0.5));
  // r = 4 adds the points at 1.5
  CHECK(manifold_distance(index, p, 4) == Catch::Approx(1.0));
}

TEST_CASE("increment distance examples") {
  DetectorState s;
  const EmbeddedPoint a{0.0, Eigen::Vector3d(1, 2, 3)};
  CHECK_FALSE(increment_distance(s, a));
  CHECK(*increment_distance(s, EmbeddedPoint{0.1, a.psi}) == 0.0);
  CHECK(*increment_distance(s, EmbeddedPoint{0.2, Eigen::Vector3d(1, 2, 5)}) == Catch::Approx(2.0));
  try {
    increment_distance(s, EmbeddedPoint{0.15, a.psi});
    FAIL("expected OutOfOrder");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::OutOfOrder);
  }
}

TEST_CASE("property: increment distance is symmetric and obeys the triangle inequality") {
  std::mt19937_64 gen(9);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 200; ++trial) {
    std::array<EmbeddedPoint, 3> p;
    for (int i = 0; i < 3; ++i) p[static_cast<std::size_t>(i)] = {static_cast<double>(i), Eigen::Vector3d(nd(gen), nd(gen), nd(gen))};
    DetectorState fwd, back, skip;
    increment_distance(fwd, p[0]);
    const double d01 = *increment_distance(fwd, p[1]);
    const double d12 = *increment_distance(fwd, p[2]);
    increment_distance(back, EmbeddedPoint{0, p[1].psi});
    const double d10 = *increment_distance(back, EmbeddedPoint{1, p[0].psi});
    increment_distance(skip, p[0]);
    const double d02 = *increment_distance(skip, p[2]);
    CHECK(d01 == Catch::Approx(d10).margin(1e-15));
    CHECK(d02 <= d01 + d12 + 1e-12);
  }
}

TEST_CASE("type-7 quantile") {
  CHECK(quantile({1, 2, 3, 4}, 0.5) == Catch::Approx(2.5));
  CHECK(quantile({4, 1, 3, 2}, 0.25) == Catch::Approx(1.75));
  CHECK(quantile({5}, 0.9) == 5.0);
  CHECK(quantile({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, 0.999) == Catch::Approx(9.991));
  CHECK_THROWS_AS(quantile({}, 0.5), Error);
}

TEST_CASE("calibration on constant statistics returns c times the value") {
  const DiffusionModel m = small_model();
  const Eigen::VectorXd x = Eigen::Vector3d(0.5, 0.5, 0.5);
  std::vector<Observation> holdout;
  for (int i = 0; i < 1200; ++i) holdout.push_back({0.01 * i, x});
  const double v = ManifoldIndex(m).distance(embed(m, x), 5);
  const Thresholds th = calibrate(m, holdout, 0.999, 1.5);
  CHECK(th.k_dist == Catch::Approx(1.5 * v).epsilon(1e-12));
  CHECK(th.k_cont == 1e-12);  // all increments are zero; the floor keeps it positive
  CHECK(th.quantile == 0.999);
  CHECK(th.multiplier == 1.5);
}

TEST_CASE("calibration with c = 1 and q = 0.5 is the median") {
  const DiffusionModel m = small_model();
  const auto holdout = iid_stream(50, 1001, 3);
  const DetectionResult r = detect_stream(m, Thresholds{1e300, 1e300}, holdout);
  std::vector<double> dist, incr;
  for (const auto& row : r.trace) {
    dist.push_back(row.manifold_dist);
    if (row.increment_dist) incr.push_back(*row.increment_dist);
  }
  const Thresholds th = calibrate(m, holdout, 0.5, 1.0);
  std::sort(dist.begin(), dist.end());
  std::sort(incr.begin(), incr.end());
  CHECK(th.k_dist == Catch::Approx(dist[500]).epsilon(1e-12));
  CHECK(th.k_cont == Catch::Approx(0.5 * (incr[499] + incr[500])).epsilon(1e-12));
}

TEST_CASE("calibration preconditions") {
  const DiffusionModel m = small_model();
  const auto short_holdout = iid_stream(51, 999, 3);
  try {
    calibrate(m, short_holdout);
    FAIL("expected InsufficientHoldout");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InsufficientHoldout);
  }
  const auto ok = iid_stream(52, 1000, 3);
  CHECK_THROWS_AS(calibrate(m, ok, 1.0, 1.5), Error);
  CHECK_THROWS_AS(calibrate(m, ok, 0.5, 0.9), Error);
  CHECK_NOTHROW(calibrate(m, ok));
}

TEST_CASE("calibrated thresholds keep the false alarm rate low on fresh ambient data") {
  const DiffusionModel m = small_model(3);
  const Thresholds th = calibrate(m, iid_stream(60, 3000, 3));
  const auto fresh = iid_stream(61, 5000, 3);
  const DetectionResult r = detect_stream(m, th, fresh);
  const double rate = static_cast<double>(r.alerts.size()) / static_cast<double>(2 * fresh.size());
  INFO("alert rate " << rate);
  CHECK(rate <= 0.001);
}

TEST_CASE("raising the threshold never adds alerts") {
  const DiffusionModel m = small_model();
  const auto obs = iid_stream(70, 1500, 3);
  const Thresholds base = calibrate(m, iid_stream(71, 1000, 3), 0.9, 1.0);
  std::size_t previous = std::numeric_limits<std::size_t>::max();
  for (double scale : {0.5, 0.8, 1.0, 1.2, 2.0}) {
    Thresholds th = base;
    th.k_dist *= scale;
    th.k_cont *= scale;
    const std::size_t count = detect_stream(m, th, obs).alerts.size();
    CHECK(count <= previous);
    previous = count;
  }
}

TEST_CASE("detection is online: prefix replay reproduces the trace prefix") {
  const DiffusionModel m = small_model();
  auto obs = iid_stream(80, 400, 3);
  obs[200].x.array() += 3.0;  // an anomaly in the middle
  const Thresholds th = calibrate(m, iid_stream(81, 1000, 3));
  const DetectionResult full = detect_stream(m, th, obs);
  for (std::size_t len : {std::size_t{1}, std::size_t{150}, std::size_t{201}, std::size_t{399}}) {
    const DetectionResult part = detect_stream(m, th, std::span<const Observation>(obs).first(len));
    REQUIRE(part.trace.size() == len);
    for (std::size_t i = 0; i < len; ++i) CHECK(part.trace[i] == full.trace[i]);
  }
  CHECK(full.trace[200].alert_dist);
}

TEST_CASE("empty stream yields empty output") {
  const DiffusionModel m = small_model();
  const DetectionResult r = detect_stream(m, Thresholds{1, 1}, {});
  CHECK(r.trace.empty());
  CHECK(r.alerts.empty());
}

TEST_CASE("unembeddable observations raise an infinite distance alert") {
  const DiffusionModel m = small_model();
  std::vector<Observation> obs = iid_stream(90, 5, 3);
  obs[2].x = Eigen::Vector3d::Constant(1e6);
  const DetectionResult r = detect_stream(m, Thresholds{1, 1}, obs);
  CHECK(r.zero_kernel_rows == 1);
  CHECK(std::isinf(r.trace[2].manifold_dist));
  CHECK(r.trace[2].alert_dist);
  CHECK_FALSE(r.trace[2].increment_dist);
  // the increment skips the unembeddable point
  CHECK(r.trace[3].increment_dist);
}

TEST_CASE("cooldown suppresses repeated alerts of one detector") {
  const DiffusionModel m = small_model();
  const auto obs = iid_stream(95, 200, 3);
  const Thresholds tiny{1e-12, 1e-12};
  const DetectionResult all = detect_stream(m, tiny, obs);
  const DetectionResult cool = detect_stream(m, tiny, obs, DetectOptions{5, 0.5});
  CHECK(all.alerts.size() > cool.alerts.size());
  for (auto kind : {DetectorKind::DistanceToManifold, DetectorKind::IncrementDiscontinuity}) {
    std::optional<double> last;
    for (const Alert& a : cool.alerts) {
      if (a.detector != kind) continue;
      if (last) CHECK(a.time - *last >= 0.5 - 1e-9);
      last = a.time;
    }
  }
  // the trace itself is unaffected
  CHECK(all.trace == cool.trace);
}
