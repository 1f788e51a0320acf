// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only if
// every criterion passes.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "canshape/canshape.hpp"
#include "canshape/cli.hpp"
#include "support/oracles.hpp"

using namespace canshape;
namespace fs = std::filesystem;
using clock_type = std::chrono::steady_clock;

namespace {

double seconds_since(clock_type::time_point t0) { return std::chrono::duration<double>(clock_type::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = fs::temp_directory_path() / ("canshape_accept_" + tag + "_" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

void cli(std::vector<std::string> args) {
  args.insert(args.begin(), "canshape");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) {
    std::string joined;
    for (const auto& a : args) joined += a + " ";
    throw std::runtime_error("command failed (" + std::to_string(code) + "): " + joined + "\n" + err.str());
  }
}

std::string slurp(const std::string& p) { return io::read_file(p); }

std::string fmt(const char* f, auto... v) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, v...);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Markov validity

Outcome markov_validity() {
  const auto t0 = clock_type::now();
  std::mt19937_64 gen(2024);
  double worst_row = 0, worst_oos = 0, worst_resid = 0, worst_proj = 0;
  for (int set = 0; set < 100; ++set) {
    const auto n = static_cast<Eigen::Index>(50 + gen() % 451);
    const auto d = static_cast<Eigen::Index>(2 + gen() % 9);
    const Eigen::MatrixXd x = oracle::random_points(gen(), n, d);
    FitOptions opts;
    opts.landmarks = static_cast<int>(std::min<Eigen::Index>(n, 20 + static_cast<Eigen::Index>(gen() % 131)));
    opts.m = 3;
    opts.gamma = (0.5 + 4.5 * std::uniform_real_distribution<double>()(gen)) * 6.0 / static_cast<double>(d);
    opts.seed = gen();
    const FitResult r = fit(x, opts);
    const DiffusionModel& mdl = r.model;

    const Eigen::MatrixXd p = oracle::markov(oracle::explicit_khat(mdl, x));
    worst_row = std::max(worst_row, (p.rowwise().sum().array() - 1.0).abs().maxCoeff());
    for (int j = 0; j <= mdl.m; ++j) {
      const Eigen::VectorXd xi = mdl.eigvecs.col(j);
      const Eigen::VectorXd factored = r.factor.row_sums.cwiseInverse().cwiseProduct(r.factor.g * (r.factor.g.transpose() * xi));
      worst_resid = std::max(worst_resid, (factored - mdl.eigvals[j] * xi).norm() / xi.norm());
      worst_resid = std::max(worst_resid, (p * xi - mdl.eigvals[j] * xi).norm() / xi.norm());
    }

    // out-of-sample rows: p-hat(x) = a(x) B A^T / sum, built explicitly
    const Eigen::MatrixXd fresh = oracle::random_points(gen(), 5, d);
    Eigen::MatrixXd a_train(n, mdl.landmark_count());
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < mdl.landmark_count(); ++j)
        a_train(i, j) = std::exp(-mdl.gamma * (x.row(i).transpose() - mdl.landmarks.col(j)).squaredNorm());
    for (Eigen::Index i = 0; i < fresh.rows(); ++i) {
      Eigen::RowVectorXd a(mdl.landmark_count());
      for (Eigen::Index j = 0; j < a.size(); ++j) a[j] = std::exp(-mdl.gamma * (fresh.row(i).transpose() - mdl.landmarks.col(j)).squaredNorm());
      const Eigen::RowVectorXd khat = a * mdl.landmark_pinv * a_train.transpose();
      const Eigen::RowVectorXd phat = khat / khat.sum();
      worst_oos = std::max(worst_oos, std::abs(phat.sum() - 1.0));
      // embed() must agree with the explicit p-hat projection
      const EmbeddedPoint e = embed(mdl, fresh.row(i).transpose());
      for (int j = 0; j < mdl.m; ++j) {
        const double want = phat.dot(mdl.eigvecs.col(j + 1));
        worst_proj = std::max(worst_proj, std::abs(e.psi[j] - want) / std::max(1.0, std::abs(want)));
      }
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst_row <= 1e-9 && worst_oos <= 1e-9 && worst_resid <= 1e-6 && worst_proj <= 1e-6 && secs < 60.0;
  o.detail = fmt("100 sets: max |P-hat row sum - 1| %.2e, max |p-hat(x) sum - 1| %.2e, max eigen residual %.2e, "
                 "embed vs explicit projection %.2e, %.1f s",
                 worst_row, worst_oos, worst_resid, worst_proj, secs);
  return o;
}

// ---------------------------------------------------------------------------
// 2. Nystrom exactness

Outcome nystrom_exactness() {
  double worst_k = 0, worst_embed = 0;
  for (std::uint64_t set = 0; set < 20; ++set) {
    const Eigen::MatrixXd x = oracle::random_points(500 + set, 100, 5);
    FitOptions opts;
    opts.landmarks = 100;
    opts.m = 3;
    opts.gamma = 2.0;
    opts.seed = set;
    const FitResult r = fit(x, opts);
    worst_k = std::max(worst_k, (oracle::explicit_khat(r.model, x) - oracle::dense_kernel(x, 2.0)).cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      worst_embed = std::max(worst_embed, (embed(r.model, x.row(i).transpose()).psi - r.model.train_embed.row(i).transpose()).norm());
    }
  }
  return {worst_k <= 1e-6 && worst_embed <= 1e-6,
          fmt("20 sets, k = n = 100: max |K-hat - K| %.2e, max re-embedding error %.2e", worst_k, worst_embed)};
}

// ---------------------------------------------------------------------------
// 3. Co-cluster recovery

Outcome cocluster_recovery() {
  int pure = 0, labeled = 0;
  double min_purity = 1.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const int canonical_block = static_cast<int>(seed % 3);
    const auto p = oracle::planted_blocks(seed, 3, 20, 0.9, 0.05, 0.02, {{"Speed", canonical_block}});
    const CoClusterModel m = spectral_cocluster(p.matrix, 3, CoClusterOptions{100, 300, seed});
    const double purity = oracle::purity(m.assignment, p.block);
    min_purity = std::min(min_purity, purity);
    pure += purity >= 0.95 ? 1 : 0;
    // the label must point at the cluster holding most of the planted block
    const auto c = m.cluster_for("Speed");
    std::map<int, int> votes;
    for (std::size_t i = 0; i < p.block.size(); ++i)
      if (p.block[i] == canonical_block && !m.ids[i].is_canonical()) ++votes[m.assignment[i]];
    const int majority = std::max_element(votes.begin(), votes.end(), [](auto& a, auto& b) { return a.second < b.second; })->first;
    labeled += (c && *c == majority) ? 1 : 0;
  }
  return {pure == 10 && labeled == 10, fmt("purity >= 0.95 on %d/10 seeds (min %.3f), canonical label correct on %d/10", pure, min_purity, labeled)};
}

// ---------------------------------------------------------------------------
// 4 and 5. Simulated attack scenario

const char* kAttack = R"({
 "version": 1, "kind": "injection",
 "targets": [{"id": "0D0:0", "delta_fraction": 0.1}, {"id": "0D0:1", "delta_fraction": 0.1},
             {"id": "0D0:2", "delta_fraction": 0.1}, {"id": "0D0:3", "delta_fraction": 0.1}],
 "windows": [[10, 20], [30, 40], [50, 60]], "frequency_hz": 0,
 "base": {"label": "Speed", "duration": 70, "trajectory": {"speed": [[0, 80]], "throttle": [[0, 0.3]], "brake": [[0, 0]]}}
})";

constexpr int kLandmarks = 1000;

struct TraceCsv {
  std::vector<double> time, dist;
};

TraceCsv read_trace(const std::string& path) {
  std::istringstream in(slurp(path));
  std::string line;
  std::getline(in, line);
  TraceCsv t;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string a, b;
    std::getline(row, a, ',');
    std::getline(row, b, ',');
    t.time.push_back(std::stod(a));
    t.dist.push_back(b == "inf" ? std::numeric_limits<double>::infinity() : std::stod(b));
  }
  return t;
}

std::vector<Alert> read_alerts(const std::string& path) {
  std::vector<Alert> out;
  std::istringstream in(slurp(path));
  std::string line;
  while (std::getline(in, line)) {
    const auto j = io::json::parse(line);
    Alert a;
    a.time = j["time"].get<double>();
    a.detector = j["detector"] == "IncrementDiscontinuity" ? DetectorKind::IncrementDiscontinuity : DetectorKind::DistanceToManifold;
    out.push_back(a);
  }
  return out;
}

/// Runs simulate -> cluster -> train -> calibrate -> attack -> detect in `dir`.
void run_pipeline(const TempDir& dir, std::uint64_t seed) {
  const std::string s = std::to_string(seed);
  cli({"--seed", s, "simulate", "--out-dir", dir / "ambient"});
  cli({"--seed", s, "cluster", "--manifest", dir / "ambient/manifest.json", "--k", "5", "--out", dir / "clusters.json"});
  cli({"--seed", s, "train", "--manifest", dir / "ambient/manifest.json", "--cluster-model", dir / "clusters.json", "--cluster", "Speed",
       "--k", std::to_string(kLandmarks), "--m", "3", "--emit", "rate:100", "--out", dir / "speed.dm.json"});
  cli({"--seed", std::to_string(seed + 1000), "simulate", "--speed", "80", "--duration", "30", "--out", dir / "holdout.log"});
  cli({"calibrate", "--model", dir / "speed.dm.json", "--input", dir / "holdout.log", "--q", "0.999", "--c", "1.5", "--out",
       dir / "thresholds.json"});
  std::ofstream(dir / "attack.json") << kAttack;
  cli({"--seed", s, "simulate", "--attack", dir / "attack.json", "--out", dir / "attack.log", "--truth", dir / "truth.json"});
  cli({"detect", "--model", dir / "speed.dm.json", "--thresholds", dir / "thresholds.json", "--input", dir / "attack.log", "--trace",
       dir / "trace.csv", "--alerts", dir / "alerts.jsonl"});
}

struct ScenarioRun {
  bool detected_all = false;
  double worst_latency = 0;
  double far = 0;
  double ks = 0;
  double median_in = 0, median_out = 0;
  double gap = 0;  // eigenvalue ratio diagnostic
};

ScenarioRun scenario(std::uint64_t seed) {
  TempDir dir("scenario" + std::to_string(seed));
  run_pipeline(dir, seed);
  const TraceCsv trace = read_trace(dir / "trace.csv");
  const std::vector<Alert> alerts = sim::alerts_of(read_alerts(dir / "alerts.jsonl"), DetectorKind::IncrementDiscontinuity);
  const std::vector<sim::Window> windows{{10, 20}, {30, 40}, {50, 60}};
  const sim::Metrics m = sim::evaluate(alerts, windows, trace.time);

  ScenarioRun r;
  r.detected_all = m.detected == windows.size();
  for (const auto& w : m.windows) r.worst_latency = std::max(r.worst_latency, w.latency.value_or(std::numeric_limits<double>::infinity()));
  r.far = m.false_alarm_rate;

  std::vector<double> in, out;
  for (std::size_t i = 0; i < trace.time.size(); ++i) {
    const bool inside = std::any_of(windows.begin(), windows.end(), [&](const sim::Window& w) { return w.contains(trace.time[i]); });
    (inside ? in : out).push_back(trace.dist[i]);
  }
  r.ks = oracle::ks_statistic(in, out);
  r.median_in = quantile(in, 0.5);
  r.median_out = quantile(out, 0.5);
  const auto model = io::diffusion_model_from_json(io::open_envelope(io::read_json(dir / "speed.dm.json"), "model"), "model");
  r.gap = model.eigvals[model.m] / model.eigvals[1];
  return r;
}

struct ScenarioOutcomes {
  Outcome increment, manifold;
};

ScenarioOutcomes attack_scenario() {
  const auto t0 = clock_type::now();
  int ok_inc = 0, ok_ks = 0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const ScenarioRun r = scenario(seed);
    const bool inc = r.detected_all && r.worst_latency <= 1.0 && r.far <= 0.01;
    ok_inc += inc ? 1 : 0;
    ok_ks += r.ks >= 0.5 ? 1 : 0;
    std::cout << fmt("  seed %2llu: windows %s, worst latency %.3f s, false alarm rate %.4f, KS %.3f (median in %.3g, out %.3g), "
                     "lambda_%d/lambda_2 %.3f\n",
                     static_cast<unsigned long long>(seed), r.detected_all ? "3/3" : "<3", r.worst_latency, r.far, r.ks, r.median_in,
                     r.median_out, 4, r.gap);
  }
  const double secs = seconds_since(t0);
  // both criteria share the runs; the 2 minute budget applies to all ten
  ScenarioOutcomes o;
  o.increment = {ok_inc >= 9 && secs < 120.0,
                 fmt("%d/10 seeds with 3/3 windows, latency <= 1 s, false alarm rate <= 1%% (%.1f s for 10 runs)", ok_inc, secs)};
  o.manifold = {ok_ks >= 9, fmt("KS >= 0.5 between in-window and ambient manifold distance on %d/10 seeds", ok_ks)};
  return o;
}

// ---------------------------------------------------------------------------
// 6. Throughput

Outcome throughput() {
  const Eigen::MatrixXd train = oracle::random_points(77, 3000, 70);
  FitOptions opts;
  opts.landmarks = 1000;
  opts.m = 3;
  opts.seed = 77;
  const DiffusionModel model = fit(train, opts).model;
  std::vector<Observation> obs;
  std::mt19937_64 gen(78);
  std::normal_distribution<double> nd(0.0, 0.02);
  for (int i = 0; i < 20000; ++i) {
    Eigen::VectorXd x = train.row(i % train.rows()).transpose();
    for (auto& v : x) v = std::clamp(v + nd(gen), 0.0, 1.0);
    obs.push_back({0.0005 * i, std::move(x)});
  }
  const Thresholds th = calibrate(model, std::span<const Observation>(obs).first(2000));
  const cli::BenchReport r = cli::bench_observations(model, th, obs, 2000.0);
  return {r.observations_per_second >= 2000.0 && r.p99_ms <= 2.0,
          fmt("k = 1000, d = 70, m = 3: %.0f observations/s, p50 %.3f ms, p99 %.3f ms", r.observations_per_second, r.p50_ms, r.p99_ms)};
}

// ---------------------------------------------------------------------------
// 7. Determinism

Outcome determinism() {
  TempDir a("det_a"), b("det_b");
  run_pipeline(a, 42);
  run_pipeline(b, 42);
  bool same = true;
  std::string detail;
  for (const char* f : {"clusters.json", "speed.dm.json", "thresholds.json", "trace.csv", "alerts.jsonl", "attack.log"}) {
    const bool eq = slurp(a / f) == slurp(b / f);
    same = same && eq;
    detail += std::string(f) + (eq ? " identical, " : " DIFFERS, ");
  }
  detail.resize(detail.size() - 2);
  return {same, detail};
}

// ---------------------------------------------------------------------------
// 8. Online causality

Outcome causality() {
  TempDir dir("causal");
  run_pipeline(dir, 9);
  const auto full_lines = [&](const std::string& path) {
    std::vector<std::string> lines;
    std::istringstream in(slurp(path));
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    return lines;
  };
  const std::vector<std::string> full = full_lines(dir / "trace.csv");
  const auto frames = io::read_capture(dir / "attack.log", LogFormat::Candump).frames;
  int ok = 0, total = 0;
  for (double cut : {0.37, 9.999, 10.5, 25.0, 50.0001, 66.6}) {
    std::vector<CanFrame> prefix;
    for (const CanFrame& f : frames)
      if (f.timestamp <= cut) prefix.push_back(f);
    io::write_file_atomic(dir / "prefix.log", io::frames_to_log(prefix));
    cli({"detect", "--model", dir / "speed.dm.json", "--thresholds", dir / "thresholds.json", "--input", dir / "prefix.log", "--trace",
         dir / "prefix.csv"});
    const std::vector<std::string> part = full_lines(dir / "prefix.csv");
    ++total;
    ok += (!part.empty() && part.size() <= full.size() && std::equal(part.begin(), part.end(), full.begin())) ? 1 : 0;
  }
  return {ok == total, fmt("%d/%d prefix replays reproduce the full-stream trace prefix byte for byte", ok, total)};
}

}  // namespace

int main() {
  int failures = 0;
  const auto report = [&](int id, const char* name, const std::function<Outcome()>& f) {
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << o.detail << std::endl;
  };

  report(1, "Markov validity", markov_validity);
  report(2, "Nystrom exactness", nystrom_exactness);
  report(3, "Co-cluster recovery", cocluster_recovery);
  ScenarioOutcomes sc;
  try {
    sc = attack_scenario();
  } catch (const std::exception& e) {
    sc.increment = sc.manifold = {false, std::string("exception: ") + e.what()};
  }
  report(4, "Injection attack, increment detector", [&] { return sc.increment; });
  report(5, "Injection attack, manifold distance separation", [&] { return sc.manifold; });
  report(6, "Throughput", throughput);
  report(7, "Determinism", determinism);
  report(8, "Online causality", causality);
  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
