#pragma once

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "canshape/can_codec.hpp"
#include "canshape/cocluster.hpp"
#include "canshape/detect.hpp"
#include "canshape/diffusion.hpp"
#include "canshape/error.hpp"
#include "canshape/io.hpp"
#include "canshape/signal_pipeline.hpp"
#include "canshape/simulate.hpp"

namespace canshape::cli {

namespace fs = std::filesystem;
using io::json;

struct GlobalOptions {
  std::uint64_t seed = 0;
  std::string format = "candump";
  bool errors_json = false;
};

struct ClusterArgs {
  fs::path manifest;
  int k = 5;
  std::size_t interp_len = 5000;
  fs::path out;
  std::optional<fs::path> heatmap;
};

struct TrainArgs {
  fs::path manifest;
  fs::path cluster_model;
  std::string cluster = "Speed";
  int landmarks = 1000;
  int m = 3;
  std::string gamma = "auto";
  std::string emit = "per-message";
  int gamma_sample = 500;
  fs::path out;
};

struct CalibrateArgs {
  fs::path model;
  fs::path input;
  double q = 0.999;
  double c = 1.5;
  std::size_t neighbors = 5;
  std::optional<std::string> emit;
  fs::path out;
};

struct DetectArgs {
  fs::path model;
  fs::path thresholds;
  fs::path input;
  std::optional<fs::path> trace;
  std::optional<fs::path> alerts;
  std::size_t neighbors = 5;
  double cooldown_ms = 0.0;
  std::optional<std::string> emit;
};

struct SimulateArgs {
  std::string vehicle = "builtin";
  std::optional<fs::path> attack;
  std::optional<fs::path> out;
  std::optional<fs::path> truth;
  std::optional<fs::path> out_dir;
  std::optional<std::string> state;
  std::optional<double> duration;
  std::optional<double> speed;
  std::optional<fs::path> canonical;
  std::optional<fs::path> input;
  std::optional<fs::path> dump_vehicle;
};

struct BenchArgs {
  fs::path model;
  std::optional<fs::path> thresholds;
  std::optional<fs::path> input;
  double bus_rate = 2000.0;
  std::optional<std::string> emit;
  std::size_t neighbors = 5;
};

// ---------------------------------------------------------------------------
// helpers

inline std::string digest(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Input reference for the config echo: file name plus content digest, so the
/// echo does not depend on where the inputs happen to live.
inline json input_ref(const fs::path& path) {
  return json{{"name", path.filename().string()}, {"fnv1a64", digest(io::read_file(path))}};
}

inline json config_echo(std::string_view command, const GlobalOptions& g, json params) {
  json c;
  c["command"] = command;
  c["seed"] = g.seed;
  for (auto& [key, value] : params.items()) c[key] = value;
  return c;
}

inline void write_envelope(const fs::path& path, json config, json payload) {
  io::write_file_atomic(path, io::dump(io::envelope(std::move(config), std::move(payload))));
}

struct LoadedModel {
  DiffusionModel model;
  EmitMode emit;
};

inline LoadedModel load_model(const fs::path& path) {
  const json j = io::read_json(path);
  const json& p = io::open_envelope(j, path.string());
  LoadedModel out{io::diffusion_model_from_json(p, path.string()), EmitMode::per_message()};
  if (p.contains("emit")) out.emit = parse_emit_mode(p.at("emit").get<std::string>());
  return out;
}

inline Thresholds load_thresholds(const fs::path& path) {
  const json j = io::read_json(path);
  return io::thresholds_from_json(io::open_envelope(j, path.string()), path.string());
}

inline CoClusterModel load_cluster_model(const fs::path& path) {
  const json j = io::read_json(path);
  return io::cluster_model_from_json(io::open_envelope(j, path.string()), path.string());
}

struct Corpus {
  std::vector<io::ManifestEntry> entries;
  std::vector<StateCapture> captures;
  std::vector<SeriesMap> series;
  json inputs = json::array();
};

inline Corpus load_corpus(const fs::path& manifest) {
  Corpus c;
  c.entries = io::load_manifest(manifest);
  c.inputs.push_back(input_ref(manifest));
  for (const auto& e : c.entries) {
    c.captures.push_back(io::load_state_capture(e));
    c.inputs.push_back(input_ref(e.path));
    if (e.canonical) c.inputs.push_back(input_ref(*e.canonical));
    try {
      c.series.push_back(extract_series(c.captures.back()));
    } catch (const Error& err) {
      throw Error(err.kind(), e.path.string() + ": " + err.what());
    }
  }
  return c;
}

inline std::vector<Observation> observe(std::span<const CanFrame> frames, const DiffusionModel& model, const EmitMode& mode) {
  ObservationStream stream(model.member_ids, model.scaler, mode);
  std::vector<Observation> out;
  for (const CanFrame& f : frames) stream.push(f, out);
  stream.finish(out);
  return out;
}

inline EmitMode resolve_emit(const std::optional<std::string>& flag, const EmitMode& stored) {
  return flag ? parse_emit_mode(*flag) : stored;
}

// ---------------------------------------------------------------------------
// commands

inline int cmd_cluster(const ClusterArgs& a, const GlobalOptions& g, std::ostream& out, std::ostream& err) {
  if (a.interp_len < 2) throw Error(ErrorKind::InvalidArgument, "--interp-len must be >= 2");
  Corpus corpus = load_corpus(a.manifest);
  const std::set<BytePairId> retained = constant_filter(corpus.series);
  const CorrelationInputs in = build_correlation_inputs(corpus.captures, corpus.series, retained, a.interp_len);

  std::vector<LabeledSeries> labeled;
  for (std::size_t i = 0; i < in.ids.size(); ++i) labeled.push_back({SignalKey{in.ids[i], {}}, in.series[i]});
  const CorrelationMatrix cm = correlation_matrix(labeled, in.canonical);
  CoClusterOptions opts;
  opts.seed = g.seed;
  const CoClusterModel model = spectral_cocluster(cm, a.k, opts);
  for (const auto& w : model.warnings) err << "warning: " << w << "\n";
  for (const auto& s : in.dropped_canonical) err << "warning: canonical series for '" << s << "' is constant and was not used\n";

  json params;
  params["k"] = a.k;
  params["interp_len"] = a.interp_len;
  params["format"] = g.format;
  params["inputs"] = corpus.inputs;
  write_envelope(a.out, config_echo("cluster", g, std::move(params)), io::to_json(model));

  if (a.heatmap) {
    const CorrelationMatrix ordered = reorder(cm, cluster_heatmap_order(model));
    std::string csv = "id";
    for (const auto& id : ordered.ids) csv += "," + to_string(id);
    csv += "\n";
    for (Eigen::Index i = 0; i < ordered.values.rows(); ++i) {
      csv += to_string(ordered.ids[static_cast<std::size_t>(i)]);
      for (Eigen::Index j = 0; j < ordered.values.cols(); ++j) csv += "," + io::format_double(ordered.values(i, j));
      csv += "\n";
    }
    io::write_file_atomic(*a.heatmap, csv);
  }

  json summary;
  summary["signals"] = in.ids.size();
  std::set<BytePairId> seen;
  for (const auto& series : corpus.series)
    for (const auto& [id, _] : series) seen.insert(id);
  summary["constant_dropped"] = seen.size() - retained.size() + in.dropped_constant.size();
  summary["clusters"] = model.cluster_count;
  summary["labels"] = io::to_json(model)["labels"];
  summary["disagreement_count"] = model.disagreement_count;
  out << summary.dump() << "\n";
  return 0;
}

inline int cmd_train(const TrainArgs& a, const GlobalOptions& g, std::ostream& out, std::ostream& err) {
  const EmitMode emit = parse_emit_mode(a.emit);
  const CoClusterModel clusters = load_cluster_model(a.cluster_model);
  int cluster = -1;
  if (const auto c = clusters.cluster_for(a.cluster)) {
    cluster = *c;
  } else {
    try {
      std::size_t pos = 0;
      cluster = std::stoi(a.cluster, &pos);
      if (pos != a.cluster.size()) cluster = -1;
    } catch (const std::exception&) {
      cluster = -1;
    }
    if (cluster < 0 || cluster >= clusters.cluster_count) {
      throw Error(ErrorKind::InvalidArgument, "no cluster labeled or numbered '" + a.cluster + "' in " + a.cluster_model.string());
    }
  }
  std::vector<BytePairId> members;
  for (const SignalKey& key : clusters.members(cluster)) {
    if (!key.is_canonical()) members.push_back(key.pair);
  }
  if (members.empty()) throw Error(ErrorKind::InvalidArgument, "cluster '" + a.cluster + "' has no byte-pair members");
  std::sort(members.begin(), members.end());

  std::optional<double> gamma;
  if (a.gamma != "auto") {
    try {
      gamma = std::stod(a.gamma);
    } catch (const std::exception&) {
      throw Error(ErrorKind::InvalidArgument, "--gamma must be 'auto' or a positive number");
    }
  }

  Corpus corpus = load_corpus(a.manifest);
  const Scaler scaler = fit_scaler(corpus.series, members);
  std::set<BytePairId> known;
  for (const auto& s : corpus.series)
    for (const auto& [id, _] : s) known.insert(id);

  std::vector<Observation> obs;
  for (const StateCapture& cap : corpus.captures) {
    // absent members in one state are legitimate; the stream for that state
    // simply never warms up
    ObservationStream stream(members, scaler, emit);
    std::vector<Observation> part;
    for (const CanFrame& f : cap.frames) stream.push(f, part);
    try {
      stream.finish(part);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::UnknownMember) throw;
      err << "warning: state '" << cap.label << "' lacks some cluster members; no observations taken from it\n";
    }
    obs.insert(obs.end(), part.begin(), part.end());
  }
  if (obs.empty()) throw Error(ErrorKind::EmptyCapture, "no training observations for cluster '" + a.cluster + "'");

  FitOptions fo;
  fo.landmarks = a.landmarks;
  fo.m = a.m;
  fo.gamma = gamma;
  fo.seed = g.seed;
  fo.gamma_sample = a.gamma_sample;
  FitResult fr = fit(stack_observations(obs), fo);
  for (const auto& w : fr.warnings) err << "warning: " << w << "\n";
  DiffusionModel& model = fr.model;
  model.member_ids = members;
  model.scaler = scaler;
  model.known_ids = known;

  json payload = io::to_json(model);
  payload["emit"] = to_string(emit);
  payload["cluster"] = a.cluster;
  if (fr.gamma_selection) {
    const GammaSelection& s = *fr.gamma_selection;
    payload["gamma_selection"] = {{"fallback", s.fallback},
                                  {"segment", json::array({s.segment_begin, s.segment_end})},
                                  {"log_gamma", s.log_gamma},
                                  {"log_sum", s.log_sum}};
  }
  json params;
  params["cluster"] = a.cluster;
  params["k"] = a.landmarks;
  params["m"] = a.m;
  params["gamma"] = a.gamma;
  params["emit"] = to_string(emit);
  params["gamma_sample"] = a.gamma_sample;
  params["format"] = g.format;
  params["inputs"] = corpus.inputs;
  params["inputs"].push_back(input_ref(a.cluster_model));
  write_envelope(a.out, config_echo("train", g, std::move(params)), std::move(payload));

  json summary;
  summary["observations"] = obs.size();
  summary["members"] = members.size();
  summary["gamma"] = model.gamma;
  summary["eigvals"] = io::to_json(model.eigvals);
  out << summary.dump() << "\n";
  return 0;
}

inline int cmd_calibrate(const CalibrateArgs& a, const GlobalOptions& g, std::ostream& out, std::ostream&) {
  const LoadedModel lm = load_model(a.model);
  const EmitMode emit = resolve_emit(a.emit, lm.emit);
  const LogReadResult log = io::read_capture(a.input, parse_log_format(g.format));
  const std::vector<Observation> obs = observe(log.frames, lm.model, emit);
  const Thresholds t = calibrate(lm.model, obs, a.q, a.c, DetectOptions{a.neighbors, 0.0});

  json params;
  params["q"] = a.q;
  params["c"] = a.c;
  params["neighbors"] = a.neighbors;
  params["emit"] = to_string(emit);
  params["format"] = g.format;
  params["inputs"] = json::array({input_ref(a.model), input_ref(a.input)});
  write_envelope(a.out, config_echo("calibrate", g, std::move(params)), io::to_json(t));

  json summary;
  summary["holdout_observations"] = obs.size();
  summary["k_dist"] = t.k_dist;
  summary["k_cont"] = t.k_cont;
  out << summary.dump() << "\n";
  return 0;
}

inline int cmd_detect(const DetectArgs& a, const GlobalOptions& g, std::ostream& out, std::ostream& err) {
  const LoadedModel lm = load_model(a.model);
  const Thresholds th = load_thresholds(a.thresholds);
  const EmitMode emit = resolve_emit(a.emit, lm.emit);
  const LogReadResult log = io::read_capture(a.input, parse_log_format(g.format));

  ObservationStream stream(lm.model.member_ids, lm.model.scaler, emit, lm.model.known_ids);
  Detector det(lm.model, th, DetectOptions{a.neighbors, a.cooldown_ms / 1000.0});
  std::vector<Alert> alerts;
  std::string trace = io::trace_header();
  std::vector<Observation> batch;
  std::size_t observations = 0;
  const auto drain = [&] {
    for (const Observation& o : batch) {
      trace += io::trace_row_csv(det.step(o, &alerts));
      ++observations;
    }
    batch.clear();
  };
  for (const CanFrame& f : log.frames) {
    stream.push(f, batch);
    drain();
  }
  stream.finish(batch);
  drain();

  if (a.trace) io::write_file_atomic(*a.trace, trace);
  if (a.alerts) {
    std::string lines;
    for (const Alert& al : alerts) lines += io::alert_to_jsonl(al) + "\n";
    io::write_file_atomic(*a.alerts, lines);
  }
  if (!stream.unseen_ids().empty()) {
    err << "warning: " << stream.unseen_ids().size() << " byte pairs not seen at training time were ignored\n";
  }
  if (det.zero_kernel_rows() > 0) {
    err << "warning: " << det.zero_kernel_rows() << " observations had no kernel mass on the landmarks (distance reported as inf)\n";
  }
  json summary;
  summary["frames"] = log.frames.size();
  summary["observations"] = observations;
  summary["alerts_dist"] = std::count_if(alerts.begin(), alerts.end(), [](const Alert& x) { return x.detector == DetectorKind::DistanceToManifold; });
  summary["alerts_cont"] = std::count_if(alerts.begin(), alerts.end(), [](const Alert& x) { return x.detector == DetectorKind::IncrementDiscontinuity; });
  summary["remote_dropped"] = log.remote_dropped;
  summary["error_dropped"] = log.error_dropped;
  summary["unseen_ids"] = stream.unseen_ids().size();
  out << summary.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// simulate

inline sim::LatentVehicle load_vehicle(const std::string& spec) {
  if (spec == "builtin") return sim::default_vehicle();
  return io::vehicle_from_json(io::read_json(spec), spec);
}

inline const sim::StateSpec& find_state(const sim::LatentVehicle& v, const std::string& label) {
  for (const auto& s : v.states)
    if (s.label == label) return s;
  throw Error(ErrorKind::InvalidArgument, "vehicle has no state '" + label + "'");
}

inline std::string capture_log(const StateCapture& cap, std::uint64_t seed) {
  return "# canshape " + std::string(io::kToolVersion) + " state=" + cap.label + " seed=" + std::to_string(seed) + "\n" +
         io::frames_to_log(cap.frames);
}

/// Value range of each byte pair over the vehicle's ambient drive cycle.
inline std::map<BytePairId, double> ambient_ranges(const sim::LatentVehicle& v, std::uint64_t seed) {
  std::map<BytePairId, std::pair<double, double>> mm;
  for (const StateCapture& cap : sim::generate_ambient(v, seed)) {
    for (const auto& [id, s] : extract_series(cap)) {
      auto [lo, hi] = std::minmax_element(s.values.begin(), s.values.end());
      auto it = mm.try_emplace(id, *lo, *hi).first;
      it->second.first = std::min(it->second.first, *lo);
      it->second.second = std::max(it->second.second, *hi);
    }
  }
  std::map<BytePairId, double> out;
  for (const auto& [id, r] : mm) out[id] = r.second - r.first;
  return out;
}

inline int cmd_simulate(const SimulateArgs& a, const GlobalOptions& g, std::ostream& out, std::ostream&) {
  const sim::LatentVehicle vehicle = load_vehicle(a.vehicle);
  json summary = json::object();
  bool did = false;

  if (a.dump_vehicle) {
    io::write_file_atomic(*a.dump_vehicle, io::dump(io::to_json(vehicle)));
    did = true;
  }

  if (a.out_dir) {
    fs::create_directories(*a.out_dir);
    std::vector<io::ManifestEntry> entries;
    for (const StateCapture& cap : sim::generate_ambient(vehicle, g.seed)) {
      io::ManifestEntry e;
      e.label = cap.label;
      e.path = cap.label + ".log";
      e.canonical = fs::path(cap.label + ".canonical.csv");
      io::write_file_atomic(*a.out_dir / e.path, capture_log(cap, g.seed));
      io::write_file_atomic(*a.out_dir / *e.canonical, io::canonical_to_csv(*cap.canonical));
      entries.push_back(e);
    }
    io::write_file_atomic(*a.out_dir / "manifest.json", io::dump(io::manifest_to_json(entries)));
    summary["captures"] = entries.size();
    did = true;
  }

  if (a.attack) {
    if (!a.out || !a.truth) throw Error(ErrorKind::InvalidArgument, "--attack needs --out and --truth");
    io::AttackFile af = io::attack_from_json(io::read_json(*a.attack), a.attack->string());
    StateCapture base;
    if (a.input) {
      base.label = a.input->stem().string();
      base.frames = io::read_capture(*a.input, parse_log_format(g.format)).frames;
      base.duration = base.frames.empty() ? 0.0 : base.frames.back().timestamp;
    } else {
      sim::StateSpec spec = af.base ? *af.base : find_state(vehicle, a.state.value_or("Speed"));
      if (a.duration) spec.duration = *a.duration;
      base = sim::generate_state(vehicle, spec, g.seed);
    }
    if (std::any_of(af.delta_fraction.begin(), af.delta_fraction.end(), [](const auto& f) { return f.has_value(); })) {
      const auto ranges = ambient_ranges(vehicle, g.seed);
      for (std::size_t i = 0; i < af.spec.targets.size(); ++i) {
        if (!af.delta_fraction[i]) continue;
        const auto it = ranges.find(af.spec.targets[i].id);
        if (it == ranges.end()) throw Error(ErrorKind::UnknownTarget, to_string(af.spec.targets[i].id) + " is not produced by the vehicle");
        af.spec.targets[i].delta = *af.delta_fraction[i] * it->second;
      }
    }
    const sim::AttackedCapture attacked = sim::inject_attack(base, af.spec, g.seed);
    io::write_file_atomic(*a.out, capture_log(attacked.capture, g.seed));

    json truth;
    truth["kind"] = af.spec.kind == sim::AttackSpec::Kind::Injection ? "injection" : "replay";
    json windows = json::array();
    for (const auto& w : attacked.windows) windows.push_back(io::to_json(w));
    truth["windows"] = std::move(windows);
    json targets = json::array();
    for (const auto& t : af.spec.targets) targets.push_back({{"id", to_string(t.id)}, {"delta", t.delta}});
    truth["targets"] = std::move(targets);
    truth["duration"] = attacked.capture.duration;
    truth["injected_frames"] = attacked.injected_frames;
    json params;
    params["vehicle"] = a.vehicle == "builtin" ? json("builtin") : input_ref(a.vehicle);
    params["attack"] = input_ref(*a.attack);
    if (a.input) params["input"] = input_ref(*a.input);
    if (a.state) params["state"] = *a.state;
    if (a.duration) params["duration"] = *a.duration;
    write_envelope(*a.truth, config_echo("simulate", g, std::move(params)), std::move(truth));
    summary["frames"] = attacked.capture.frames.size();
    summary["injected_frames"] = attacked.injected_frames;
    did = true;
  } else if (a.out) {
    sim::StateSpec spec = a.speed ? sim::constant_speed_state(a.duration.value_or(70.0), *a.speed)
                                  : find_state(vehicle, a.state.value_or("Speed"));
    if (a.duration) spec.duration = *a.duration;
    const StateCapture cap = sim::generate_state(vehicle, spec, g.seed);
    io::write_file_atomic(*a.out, capture_log(cap, g.seed));
    if (a.canonical) io::write_file_atomic(*a.canonical, io::canonical_to_csv(*cap.canonical));
    summary["frames"] = cap.frames.size();
    did = true;
  }
  if (!did) throw Error(ErrorKind::InvalidArgument, "simulate needs --out-dir, --out or --dump-vehicle");
  out << summary.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// bench

struct BenchReport {
  std::size_t frames = 0;
  std::size_t observations = 0;
  double seconds = 0.0;
  double observations_per_second = 0.0;
  double p50_ms = 0.0;
  double p99_ms = 0.0;
  double bus_rate = 2000.0;
  bool meets_bus_rate = false;
};

/// Replays frames through the observation stream and detector as fast as
/// possible, timing each observation's embed + detect step.
inline BenchReport bench_replay(const DiffusionModel& model, const Thresholds& th, std::span<const CanFrame> frames,
                                const EmitMode& emit, double bus_rate = 2000.0, DetectOptions opts = {}) {
  using clock = std::chrono::steady_clock;
  BenchReport r;
  r.frames = frames.size();
  r.bus_rate = bus_rate;
  ObservationStream stream(model.member_ids, model.scaler, emit);
  Detector det(model, th, opts);
  std::vector<Observation> batch;
  std::vector<double> latency;
  latency.reserve(frames.size());
  const auto run = [&] {
    for (const Observation& o : batch) {
      const auto t0 = clock::now();
      (void)det.step(o);
      latency.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
    }
    batch.clear();
  };
  const auto start = clock::now();
  for (const CanFrame& f : frames) {
    stream.push(f, batch);
    run();
  }
  try {
    stream.finish(batch);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::UnknownMember) throw;
  }
  run();
  r.seconds = std::chrono::duration<double>(clock::now() - start).count();
  r.observations = latency.size();
  if (!latency.empty()) {
    r.observations_per_second = static_cast<double>(r.observations) / r.seconds;
    r.p50_ms = quantile(latency, 0.5);
    r.p99_ms = quantile(latency, 0.99);
  }
  r.meets_bus_rate = r.observations > 0 && r.observations_per_second >= bus_rate;
  return r;
}

/// Same timing over ready-made observations.
inline BenchReport bench_observations(const DiffusionModel& model, const Thresholds& th, std::span<const Observation> obs,
                                      double bus_rate = 2000.0, DetectOptions opts = {}) {
  using clock = std::chrono::steady_clock;
  BenchReport r;
  r.bus_rate = bus_rate;
  Detector det(model, th, opts);
  std::vector<double> latency;
  latency.reserve(obs.size());
  const auto start = clock::now();
  for (const Observation& o : obs) {
    const auto t0 = clock::now();
    (void)det.step(o);
    latency.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
  }
  r.seconds = std::chrono::duration<double>(clock::now() - start).count();
  r.observations = obs.size();
  if (!latency.empty()) {
    r.observations_per_second = static_cast<double>(r.observations) / r.seconds;
    r.p50_ms = quantile(latency, 0.5);
    r.p99_ms = quantile(latency, 0.99);
  }
  r.meets_bus_rate = r.observations > 0 && r.observations_per_second >= bus_rate;
  return r;
}

inline json to_json(const BenchReport& r) {
  json j;
  j["frames"] = r.frames;
  j["observations"] = r.observations;
  j["seconds"] = r.seconds;
  j["observations_per_second"] = r.observations_per_second;
  j["p50_ms"] = r.p50_ms;
  j["p99_ms"] = r.p99_ms;
  j["bus_rate"] = r.bus_rate;
  j["meets_bus_rate"] = r.meets_bus_rate;
  return j;
}

inline int cmd_bench(const BenchArgs& a, const GlobalOptions& g, std::ostream& out, std::ostream&) {
  const LoadedModel lm = load_model(a.model);
  const Thresholds th = a.thresholds ? load_thresholds(*a.thresholds)
                                     : Thresholds{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  std::vector<CanFrame> frames;
  if (a.input) frames = io::read_capture(*a.input, parse_log_format(g.format)).frames;
  const BenchReport r = bench_replay(lm.model, th, frames, resolve_emit(a.emit, lm.emit), a.bus_rate, DetectOptions{a.neighbors, 0.0});
  json j = to_json(r);
  j["landmarks"] = lm.model.landmark_count();
  j["dimensions"] = lm.model.input_dim();
  j["m"] = lm.model.m;
  out << j.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// entry point

inline int exit_code_for(ErrorKind kind) { return is_validation_error(kind) ? 1 : 2; }

inline void report_error(std::ostream& err, bool as_json, std::string_view kind, const std::string& message, int code) {
  if (as_json) {
    json j;
    j["error"] = kind;
    j["message"] = message;
    j["exit_code"] = code;
    err << j.dump() << "\n";
  } else {
    err << "error: " << message << "\n";
  }
}

/// Parses argv and runs one subcommand. Returns the process exit status:
/// 0 success, 1 validation error, 2 runtime error.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Learn the geometry of ambient CAN traffic and detect intrusions", "canshape"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(io::kToolVersion));

  GlobalOptions g;
  app.add_option("--seed", g.seed, "run seed for every random choice");
  app.add_option("--format", g.format, "capture format")->check(CLI::IsMember({"candump", "csv"}));
  app.add_flag("--errors-json", g.errors_json, "report errors as JSON on stderr");

  ClusterArgs ca;
  auto* cluster = app.add_subcommand("cluster", "correlate byte pairs and co-cluster them");
  cluster->add_option("--manifest", ca.manifest)->required();
  cluster->add_option("--k", ca.k, "number of clusters");
  cluster->add_option("--interp-len", ca.interp_len, "points per capture after interpolation");
  cluster->add_option("--out", ca.out)->required();
  cluster->add_option("--heatmap", ca.heatmap, "write the cluster-ordered correlation matrix as CSV");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "fit a diffusion map for one cluster");
  train->add_option("--manifest", ta.manifest)->required();
  train->add_option("--cluster-model", ta.cluster_model)->required();
  train->add_option("--cluster", ta.cluster, "state label or cluster index");
  train->add_option("--k", ta.landmarks, "landmark count");
  train->add_option("--m", ta.m, "embedding dimension");
  train->add_option("--gamma", ta.gamma, "'auto' or a kernel bandwidth");
  train->add_option("--gamma-sample", ta.gamma_sample, "observations used to select gamma");
  train->add_option("--emit", ta.emit, "per-message or rate:<hz>");
  train->add_option("--out", ta.out)->required();

  CalibrateArgs cb;
  auto* calib = app.add_subcommand("calibrate", "set thresholds from an ambient holdout capture");
  calib->add_option("--model", cb.model)->required();
  calib->add_option("--input", cb.input)->required();
  calib->add_option("--q", cb.q, "quantile");
  calib->add_option("--c", cb.c, "multiplier");
  calib->add_option("--neighbors", cb.neighbors, "neighbours averaged in the manifold distance");
  calib->add_option("--emit", cb.emit, "override the model's emission mode");
  calib->add_option("--out", cb.out)->required();

  DetectArgs da;
  auto* detect = app.add_subcommand("detect", "score a capture and raise alerts");
  detect->add_option("--model", da.model)->required();
  detect->add_option("--thresholds", da.thresholds)->required();
  detect->add_option("--input", da.input)->required();
  detect->add_option("--trace", da.trace);
  detect->add_option("--alerts", da.alerts);
  detect->add_option("--neighbors", da.neighbors);
  detect->add_option("--cooldown", da.cooldown_ms, "milliseconds between alerts of one kind");
  detect->add_option("--emit", da.emit, "override the model's emission mode");

  SimulateArgs sa;
  auto* simulate = app.add_subcommand("simulate", "generate synthetic captures and attacks");
  simulate->add_option("--vehicle", sa.vehicle, "'builtin' or a vehicle JSON file");
  simulate->add_option("--attack", sa.attack);
  simulate->add_option("--out", sa.out);
  simulate->add_option("--truth", sa.truth);
  simulate->add_option("--out-dir", sa.out_dir, "write one capture per state plus a manifest");
  simulate->add_option("--state", sa.state);
  simulate->add_option("--duration", sa.duration);
  simulate->add_option("--speed", sa.speed, "constant-speed drive at this speed (km/h) instead of a vehicle state");
  simulate->add_option("--canonical", sa.canonical);
  simulate->add_option("--input", sa.input, "attack a recorded capture instead of a generated one");
  simulate->add_option("--dump-vehicle", sa.dump_vehicle);

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "measure embed + detect throughput");
  bench->add_option("--model", ba.model)->required();
  bench->add_option("--thresholds", ba.thresholds);
  bench->add_option("--input", ba.input);
  bench->add_option("--bus-rate", ba.bus_rate, "frames/s to compare against");
  bench->add_option("--emit", ba.emit);
  bench->add_option("--neighbors", ba.neighbors);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return 0;
    }
    report_error(err, g.errors_json, "InvalidArgument", e.what(), 1);
    return 1;
  }

  try {
    if (*cluster) return cmd_cluster(ca, g, out, err);
    if (*train) return cmd_train(ta, g, out, err);
    if (*calib) return cmd_calibrate(cb, g, out, err);
    if (*detect) return cmd_detect(da, g, out, err);
    if (*simulate) return cmd_simulate(sa, g, out, err);
    if (*bench) return cmd_bench(ba, g, out, err);
  } catch (const Error& e) {
    const int code = exit_code_for(e.kind());
    report_error(err, g.errors_json, to_string(e.kind()), e.what(), code);
    return code;
  } catch (const std::exception& e) {
    report_error(err, g.errors_json, "Internal", e.what(), 2);
    return 2;
  }
  return 1;
}

}  // namespace canshape::cli
