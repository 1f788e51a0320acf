#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "canshape/can_codec.hpp"
#include "canshape/cocluster.hpp"
#include "canshape/detect.hpp"
#include "canshape/diffusion.hpp"
#include "canshape/error.hpp"
#include "canshape/signal_pipeline.hpp"
#include "canshape/simulate.hpp"

namespace canshape::io {

using json = nlohmann::ordered_json;

inline constexpr int kArtifactVersion = 1;
inline constexpr const char* kToolVersion = "0.1.0";

// ---------------------------------------------------------------------------
// files

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes through a temporary sibling and renames, so a failed run never
/// leaves a partial file at `path`.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) throw Error(ErrorKind::Io, "write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorKind::Io, "cannot rename into '" + path.string() + "'");
  }
}

inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Schema, what + ": " + e.what());
  }
}

inline json read_json(const std::filesystem::path& path) { return parse_json(read_file(path), path.string()); }

inline std::string dump(const json& j) { return j.dump(1) + "\n"; }

/// Shortest decimal that round-trips.
inline std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename T>
T get_field(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw Error(ErrorKind::Schema, where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Schema, where + ": field '" + key + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// envelope {version, tool_version, config, payload}

inline json envelope(json config, json payload) {
  json j;
  j["version"] = kArtifactVersion;
  j["tool_version"] = kToolVersion;
  j["config"] = std::move(config);
  j["payload"] = std::move(payload);
  return j;
}

inline const json& open_envelope(const json& j, const std::string& where) {
  const int version = get_field<int>(j, "version", where);
  if (version != kArtifactVersion) {
    throw Error(ErrorKind::Schema, where + ": unsupported version " + std::to_string(version));
  }
  if (!j.contains("payload")) throw Error(ErrorKind::Schema, where + ": missing payload");
  return j.at("payload");
}

// ---------------------------------------------------------------------------
// Eigen

inline json to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline Eigen::VectorXd vector_from_json(const json& j, const std::string& where) {
  if (!j.is_array()) throw Error(ErrorKind::Schema, where + ": expected an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw Error(ErrorKind::Schema, where + ": expected numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline Eigen::MatrixXd matrix_from_json(const json& j, const std::string& where) {
  if (!j.is_array()) throw Error(ErrorKind::Schema, where + ": expected an array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const json& r = j[static_cast<std::size_t>(i)];
    if (!r.is_array() || static_cast<Eigen::Index>(r.size()) != cols) throw Error(ErrorKind::Schema, where + ": ragged matrix");
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!r[static_cast<std::size_t>(c)].is_number()) throw Error(ErrorKind::Schema, where + ": expected numbers");
      m(i, c) = r[static_cast<std::size_t>(c)].get<double>();
    }
  }
  return m;
}

inline json ids_to_json(const std::vector<BytePairId>& ids) {
  json a = json::array();
  for (const auto& id : ids) a.push_back(to_string(id));
  return a;
}

inline std::vector<BytePairId> ids_from_json(const json& j, const std::string& where) {
  if (!j.is_array()) throw Error(ErrorKind::Schema, where + ": expected an id array");
  std::vector<BytePairId> out;
  for (const auto& e : j) {
    if (!e.is_string()) throw Error(ErrorKind::Schema, where + ": ids must be strings");
    out.push_back(parse_byte_pair_id(e.get<std::string>()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// capture manifest

struct ManifestEntry {
  std::string label;
  std::filesystem::path path;
  LogFormat format = LogFormat::Candump;
  std::optional<std::filesystem::path> canonical;
};

inline std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  const json j = read_json(path);
  const std::string where = path.string();
  const int version = get_field<int>(j, "version", where);
  if (version != kArtifactVersion) throw Error(ErrorKind::Schema, where + ": unsupported manifest version");
  const json& caps = j.contains("captures") ? j.at("captures") : json();
  if (!caps.is_array() || caps.empty()) throw Error(ErrorKind::Schema, where + ": 'captures' must be a non-empty array");
  const auto base = path.parent_path();
  std::vector<ManifestEntry> out;
  std::set<std::string> labels;
  for (const json& c : caps) {
    ManifestEntry e;
    e.label = get_field<std::string>(c, "label", where);
    if (!labels.insert(e.label).second) throw Error(ErrorKind::Schema, where + ": duplicate label '" + e.label + "'");
    e.path = base / get_field<std::string>(c, "path", where);
    if (c.contains("format")) e.format = parse_log_format(c.at("format").get<std::string>());
    if (c.contains("canonical_series") && !c.at("canonical_series").is_null()) {
      e.canonical = base / c.at("canonical_series").get<std::string>();
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline json manifest_to_json(const std::vector<ManifestEntry>& entries) {
  json caps = json::array();
  for (const auto& e : entries) {
    json c;
    c["label"] = e.label;
    c["path"] = e.path.generic_string();
    c["format"] = e.format == LogFormat::Candump ? "candump" : "csv";
    if (e.canonical) c["canonical_series"] = e.canonical->generic_string();
    caps.push_back(std::move(c));
  }
  json j;
  j["version"] = kArtifactVersion;
  j["captures"] = std::move(caps);
  return j;
}

/// CSV of "time,value" with an optional header.
inline CanonicalSeries read_canonical_csv(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  CanonicalSeries s;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view t = detail::trim(line);
    if (t.empty() || t.front() == '#' || t.starts_with("time")) continue;
    const auto comma = t.find(',');
    double a = 0, b = 0;
    bool ok = comma != std::string_view::npos;
    if (ok) {
      const auto ta = detail::trim(t.substr(0, comma));
      const auto tb = detail::trim(t.substr(comma + 1));
      ok = std::from_chars(ta.data(), ta.data() + ta.size(), a).ec == std::errc{} &&
           std::from_chars(tb.data(), tb.data() + tb.size(), b).ec == std::errc{};
    }
    if (!ok) throw Error(ErrorKind::Schema, path.string() + ":" + std::to_string(lineno) + ": expected 'time,value'");
    s.times.push_back(a);
    s.values.push_back(b);
  }
  return s;
}

inline std::string canonical_to_csv(const CanonicalSeries& s) {
  std::string out = "time,value\n";
  for (std::size_t i = 0; i < s.times.size(); ++i) out += format_double(s.times[i]) + "," + format_double(s.values[i]) + "\n";
  return out;
}

inline LogReadResult read_capture(const std::filesystem::path& path, LogFormat format) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open capture '" + path.string() + "'");
  try {
    return read_log(in, format);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

inline std::string frames_to_log(std::span<const CanFrame> frames, LogFormat format = LogFormat::Candump) {
  std::string out;
  out.reserve(frames.size() * 40);
  if (format == LogFormat::Csv) out += "timestamp,aid_hex,data_hex\n";
  for (const CanFrame& f : frames) {
    out += format_log_line(f, format);
    out += '\n';
  }
  return out;
}

/// Capture duration when read back from a log: the last timestamp.
inline StateCapture load_state_capture(const ManifestEntry& e) {
  StateCapture cap;
  cap.label = e.label;
  cap.frames = read_capture(e.path, e.format).frames;
  cap.duration = cap.frames.empty() ? 0.0 : cap.frames.back().timestamp;
  if (e.canonical) cap.canonical = read_canonical_csv(*e.canonical);
  return cap;
}

// ---------------------------------------------------------------------------
// cluster model

inline json to_json(const CoClusterModel& m) {
  json p;
  p["k"] = m.cluster_count;
  json ids = json::array();
  for (const auto& id : m.ids) ids.push_back(to_string(id));
  p["ids"] = std::move(ids);
  p["assignment"] = m.assignment;
  json labels = json::object();
  for (const auto& [c, states] : m.labels) labels[std::to_string(c)] = states;
  p["labels"] = std::move(labels);
  p["disagreement_count"] = m.disagreement_count;
  p["converged"] = m.converged;
  return p;
}

inline CoClusterModel cluster_model_from_json(const json& p, const std::string& where) {
  CoClusterModel m;
  m.cluster_count = get_field<int>(p, "k", where);
  for (const auto& s : get_field<std::vector<std::string>>(p, "ids", where)) m.ids.push_back(parse_signal_key(s));
  m.assignment = get_field<std::vector<int>>(p, "assignment", where);
  if (m.assignment.size() != m.ids.size()) throw Error(ErrorKind::Schema, where + ": assignment length differs from ids");
  for (int a : m.assignment) {
    if (a < 0 || a >= m.cluster_count) throw Error(ErrorKind::Schema, where + ": cluster index out of range");
  }
  if (p.contains("labels")) {
    for (const auto& [key, states] : p.at("labels").items()) {
      m.labels[std::stoi(key)] = states.get<std::vector<std::string>>();
    }
  }
  m.disagreement_count = p.value("disagreement_count", 0);
  m.converged = p.value("converged", true);
  return m;
}

// ---------------------------------------------------------------------------
// diffusion model

inline json to_json(const DiffusionModel& m) {
  json p;
  p["gamma"] = m.gamma;
  p["m"] = m.m;
  p["k"] = static_cast<std::int64_t>(m.landmark_count());
  p["member_ids"] = ids_to_json(m.member_ids);
  json sc;
  sc["min"] = to_json(m.scaler.min);
  sc["max"] = to_json(m.scaler.max);
  p["scaler"] = std::move(sc);
  p["known_ids"] = ids_to_json(std::vector<BytePairId>(m.known_ids.begin(), m.known_ids.end()));
  p["landmark_indices"] = m.landmark_indices;
  p["landmarks"] = matrix_to_json(m.landmarks.transpose());
  p["pinv"] = matrix_to_json(m.landmark_pinv);
  p["eigvals"] = to_json(m.eigvals);
  p["eigvecs"] = matrix_to_json(m.eigvecs);
  p["train_embed"] = matrix_to_json(m.train_embed);
  p["projection_cache"] = matrix_to_json(m.projection_cache);
  return p;
}

inline DiffusionModel diffusion_model_from_json(const json& p, const std::string& where) {
  DiffusionModel m;
  m.gamma = get_field<double>(p, "gamma", where);
  m.m = get_field<int>(p, "m", where);
  m.member_ids = ids_from_json(p.at("member_ids"), where + ".member_ids");
  const json& sc = p.at("scaler");
  m.scaler.min = vector_from_json(sc.at("min"), where + ".scaler.min");
  m.scaler.max = vector_from_json(sc.at("max"), where + ".scaler.max");
  if (p.contains("known_ids")) {
    for (const auto& id : ids_from_json(p.at("known_ids"), where + ".known_ids")) m.known_ids.insert(id);
  }
  if (p.contains("landmark_indices")) m.landmark_indices = p.at("landmark_indices").get<std::vector<std::size_t>>();
  m.landmarks = matrix_from_json(p.at("landmarks"), where + ".landmarks").transpose();
  m.landmark_pinv = matrix_from_json(p.at("pinv"), where + ".pinv");
  m.eigvals = vector_from_json(p.at("eigvals"), where + ".eigvals");
  m.eigvecs = matrix_from_json(p.at("eigvecs"), where + ".eigvecs");
  m.train_embed = matrix_from_json(p.at("train_embed"), where + ".train_embed");
  m.projection_cache = matrix_from_json(p.at("projection_cache"), where + ".projection_cache");

  const auto k = m.landmarks.cols();
  const auto d = static_cast<Eigen::Index>(m.member_ids.size());
  if (!(m.gamma > 0.0) || m.m < 1) throw Error(ErrorKind::Schema, where + ": gamma and m must be positive");
  if (m.landmarks.rows() != d || m.scaler.min.size() != d || m.scaler.max.size() != d) {
    throw Error(ErrorKind::Schema, where + ": member, scaler and landmark dimensions disagree");
  }
  if (m.landmark_pinv.rows() != k || m.landmark_pinv.cols() != k || m.projection_cache.rows() != k ||
      m.projection_cache.cols() != m.m + 1 || m.eigvals.size() != m.m + 1 || m.train_embed.cols() != m.m ||
      m.eigvecs.cols() != m.m + 1 || m.eigvecs.rows() != m.train_embed.rows()) {
    throw Error(ErrorKind::Schema, where + ": inconsistent model array shapes");
  }
  if (p.contains("k") && p.at("k").get<std::int64_t>() != k) throw Error(ErrorKind::Schema, where + ": k disagrees with landmarks");
  return m;
}

// ---------------------------------------------------------------------------
// thresholds, alerts, traces

inline json to_json(const Thresholds& t) {
  json p;
  p["k_dist"] = t.k_dist;
  p["k_cont"] = t.k_cont;
  p["calibration"] = {{"quantile", t.quantile}, {"multiplier", t.multiplier}};
  return p;
}

inline Thresholds thresholds_from_json(const json& p, const std::string& where) {
  Thresholds t;
  t.k_dist = get_field<double>(p, "k_dist", where);
  t.k_cont = get_field<double>(p, "k_cont", where);
  if (p.contains("calibration")) {
    t.quantile = p.at("calibration").value("quantile", t.quantile);
    t.multiplier = p.at("calibration").value("multiplier", t.multiplier);
  }
  if (!(t.k_dist > 0.0) || !(t.k_cont > 0.0)) throw Error(ErrorKind::Schema, where + ": thresholds must be positive");
  return t;
}

inline std::string alert_to_jsonl(const Alert& a) {
  json j;
  j["time"] = a.time;
  j["detector"] = std::string(to_string(a.detector));
  if (std::isfinite(a.statistic)) {
    j["statistic"] = a.statistic;
  } else {
    j["statistic"] = "inf";
  }
  j["threshold"] = a.threshold;
  j["observation_index"] = a.observation_index;
  return j.dump();
}

inline std::string trace_header() { return "time,manifold_dist,increment_dist,alert_dist,alert_cont\n"; }

inline std::string trace_row_csv(const TraceRow& r) {
  std::string s = format_double(r.time);
  s += ',';
  s += format_double(r.manifold_dist);
  s += ',';
  if (r.increment_dist) s += format_double(*r.increment_dist);
  s += r.alert_dist ? ",1" : ",0";
  s += r.alert_cont ? ",1\n" : ",0\n";
  return s;
}

inline std::string trace_to_csv(std::span<const TraceRow> trace) {
  std::string out = trace_header();
  for (const TraceRow& r : trace) out += trace_row_csv(r);
  return out;
}

// ---------------------------------------------------------------------------
// simulator specs

inline json to_json(const sim::Trajectory& t) {
  json a = json::array();
  for (const auto& k : t) a.push_back(json::array({k.t, k.value}));
  return a;
}

inline sim::Trajectory trajectory_from_json(const json& j, const std::string& where) {
  sim::Trajectory t;
  if (!j.is_array()) throw Error(ErrorKind::Schema, where + ": trajectory must be [[t, value], ...]");
  for (const json& k : j) {
    if (!k.is_array() || k.size() != 2) throw Error(ErrorKind::Schema, where + ": knot must be [t, value]");
    t.push_back({k[0].get<double>(), k[1].get<double>()});
  }
  return t;
}

inline json to_json(const sim::StateSpec& s) {
  json j;
  j["label"] = s.label;
  j["duration"] = s.duration;
  json traj = json::object();
  for (const auto& [name, t] : s.trajectory) traj[name] = to_json(t);
  j["trajectory"] = std::move(traj);
  j["canonical_latent"] = s.canonical_latent;
  return j;
}

inline sim::StateSpec state_spec_from_json(const json& j, const std::string& where) {
  sim::StateSpec s;
  s.label = get_field<std::string>(j, "label", where);
  s.duration = get_field<double>(j, "duration", where);
  if (j.contains("trajectory")) {
    for (const auto& [name, t] : j.at("trajectory").items()) s.trajectory[name] = trajectory_from_json(t, where + "." + name);
  }
  s.canonical_latent = j.value("canonical_latent", std::string("speed"));
  return s;
}

inline std::string hex_aid(std::uint32_t aid) {
  char buf[16];
  std::snprintf(buf, sizeof buf, aid > kMaxStandardAid ? "%08X" : "%03X", aid);
  return buf;
}

inline json to_json(const sim::LatentVehicle& v) {
  json j;
  j["version"] = kArtifactVersion;
  j["latent"] = v.latent_names;
  json states = json::array();
  for (const auto& s : v.states) states.push_back(to_json(s));
  j["states"] = std::move(states);
  json sensors = json::array();
  for (const auto& s : v.sensors) {
    json e;
    e["id"] = to_string(s.id);
    e["weights"] = s.weights;
    e["shape"] = std::string(sim::to_string(s.shape));
    e["offset"] = s.offset;
    e["scale"] = s.scale;
    e["noise"] = s.noise;
    sensors.push_back(std::move(e));
  }
  j["sensors"] = std::move(sensors);
  json aids = json::array();
  for (const auto& a : v.aids) {
    json e;
    e["aid"] = hex_aid(a.aid);
    e["period_ms"] = a.period_ms;
    e["length"] = a.length;
    std::string fill;
    for (std::size_t b = 0; b < a.length; ++b) {
      char h[3];
      std::snprintf(h, sizeof h, "%02X", a.fill[b]);
      fill += h;
    }
    e["fill"] = fill;
    aids.push_back(std::move(e));
  }
  j["aids"] = std::move(aids);
  j["jitter_fraction"] = v.jitter_fraction;
  j["canonical_rate_hz"] = v.canonical_rate_hz;
  j["canonical_noise"] = v.canonical_noise;
  j["channel"] = v.channel;
  return j;
}

inline sim::LatentVehicle vehicle_from_json(const json& j, const std::string& where) {
  if (get_field<int>(j, "version", where) != kArtifactVersion) throw Error(ErrorKind::Schema, where + ": unsupported vehicle version");
  sim::LatentVehicle v;
  v.latent_names = get_field<std::vector<std::string>>(j, "latent", where);
  for (const json& s : j.at("states")) v.states.push_back(state_spec_from_json(s, where + ".states"));
  for (const json& e : j.at("sensors")) {
    sim::SensorSpec s;
    s.id = parse_byte_pair_id(get_field<std::string>(e, "id", where));
    s.weights = get_field<std::vector<double>>(e, "weights", where);
    s.shape = sim::parse_sensor_shape(e.value("shape", std::string("linear")));
    s.offset = e.value("offset", 0.0);
    s.scale = e.value("scale", 1.0);
    s.noise = e.value("noise", 0.0);
    v.sensors.push_back(std::move(s));
  }
  for (const json& e : j.at("aids")) {
    sim::AidSpec a;
    a.aid = detail::parse_hex_u32(get_field<std::string>(e, "aid", where), ErrorKind::Schema, "aid");
    a.period_ms = get_field<double>(e, "period_ms", where);
    a.length = static_cast<std::uint8_t>(e.value("length", 8));
    if (a.length > kMaxPayload) throw Error(ErrorKind::Schema, where + ": AID payload length exceeds 8");
    CanFrame tmp;
    detail::parse_payload(e.value("fill", std::string()), tmp);
    a.fill = tmp.data;
    v.aids.push_back(a);
  }
  v.jitter_fraction = j.value("jitter_fraction", v.jitter_fraction);
  v.canonical_rate_hz = j.value("canonical_rate_hz", v.canonical_rate_hz);
  v.canonical_noise = j.value("canonical_noise", v.canonical_noise);
  v.channel = j.value("channel", v.channel);
  v.validate();
  return v;
}

inline json to_json(const sim::Window& w) { return json::array({w.start, w.end}); }

inline sim::Window window_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2) throw Error(ErrorKind::Schema, where + ": window must be [start, end]");
  return {j[0].get<double>(), j[1].get<double>()};
}

struct AttackFile {
  sim::AttackSpec spec;
  std::optional<sim::StateSpec> base;        // state to generate and attack
  std::vector<std::optional<double>> delta_fraction;  // per target; overrides delta once resolved
};

inline AttackFile attack_from_json(const json& j, const std::string& where) {
  if (get_field<int>(j, "version", where) != kArtifactVersion) throw Error(ErrorKind::Schema, where + ": unsupported attack version");
  AttackFile f;
  const std::string kind = j.value("kind", std::string("injection"));
  if (kind == "injection") {
    f.spec.kind = sim::AttackSpec::Kind::Injection;
  } else if (kind == "replay") {
    f.spec.kind = sim::AttackSpec::Kind::Replay;
    f.spec.replay_source = window_from_json(j.at("replay_source"), where + ".replay_source");
  } else {
    throw Error(ErrorKind::Schema, where + ": unknown attack kind '" + kind + "'");
  }
  for (const json& t : j.at("targets")) {
    sim::AttackTarget tgt;
    tgt.id = parse_byte_pair_id(get_field<std::string>(t, "id", where));
    tgt.delta = t.value("delta", 0.0);
    f.spec.targets.push_back(tgt);
    f.delta_fraction.push_back(t.contains("delta_fraction") ? std::optional<double>(t.at("delta_fraction").get<double>())
                                                            : std::nullopt);
    if (!t.contains("delta") && !t.contains("delta_fraction")) {
      throw Error(ErrorKind::Schema, where + ": target needs 'delta' or 'delta_fraction'");
    }
  }
  for (const json& w : j.at("windows")) f.spec.windows.push_back(window_from_json(w, where + ".windows"));
  f.spec.frequency_hz = j.value("frequency_hz", 0.0);
  if (j.contains("base")) f.base = state_spec_from_json(j.at("base"), where + ".base");
  return f;
}

inline json to_json(const AttackFile& f) {
  json j;
  j["version"] = kArtifactVersion;
  j["kind"] = f.spec.kind == sim::AttackSpec::Kind::Injection ? "injection" : "replay";
  json targets = json::array();
  for (std::size_t i = 0; i < f.spec.targets.size(); ++i) {
    const auto& t = f.spec.targets[i];
    json e;
    e["id"] = to_string(t.id);
    if (i < f.delta_fraction.size() && f.delta_fraction[i]) {
      e["delta_fraction"] = *f.delta_fraction[i];
    } else {
      e["delta"] = t.delta;
    }
    targets.push_back(std::move(e));
  }
  j["targets"] = std::move(targets);
  json windows = json::array();
  for (const auto& w : f.spec.windows) windows.push_back(to_json(w));
  j["windows"] = std::move(windows);
  j["frequency_hz"] = f.spec.frequency_hz;
  if (f.spec.kind == sim::AttackSpec::Kind::Replay) j["replay_source"] = to_json(f.spec.replay_source);
  if (f.base) j["base"] = to_json(*f.base);
  return j;
}

}  // namespace canshape::io
