#pragma once

// Serialization of configurations, run records and campaign summaries.
// Numeric tables are comma-separated text with a header row; every double is
// printed with 17 significant digits so that parse -> print is the identity.

#include "quadem/harness.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace quadem::io {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

class IoError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Numbers and tables

inline std::string format_double(double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf, static_cast<std::size_t>(n));
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end)
    throw IoError("malformed number '" + std::string(s) + "'");
  return v;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw IoError("table has no column '" + name + "'");
  }
};

inline std::string to_csv(const Table& t) {
  std::string out;
  for (std::size_t i = 0; i < t.header.size(); ++i) {
    if (i) out += ',';
    out += t.header[i];
  }
  out += '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += format_double(row[i]);
    }
    out += '\n';
  }
  return out;
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline Table parse_csv(std::string_view text) {
  Table t;
  std::size_t pos = 0;
  bool first = true;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (first) {
      for (auto c : cells) t.header.emplace_back(c);
      first = false;
      continue;
    }
    if (cells.size() != t.header.size())
      throw IoError("row has " + std::to_string(cells.size()) + " cells, header has " +
                    std::to_string(t.header.size()));
    std::vector<double> row;
    row.reserve(cells.size());
    for (auto c : cells) row.push_back(parse_double(c));
    t.rows.push_back(std::move(row));
  }
  if (first) throw IoError("empty table");
  return t;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << content;
  if (!out) throw IoError("write failed for " + p.string());
}

// ---------------------------------------------------------------------------
// Record tables

inline const std::vector<std::string>& state_columns() {
  static const std::vector<std::string> c = {"step", "t",   "x",     "y",   "z",  "vx", "vy",
                                             "vz",   "phi", "theta", "psi", "wx", "wy", "wz"};
  return c;
}

inline Table state_table(const std::vector<Vec12>& states, double dt) {
  Table t;
  t.header = state_columns();
  t.rows.reserve(states.size());
  for (std::size_t k = 0; k < states.size(); ++k) {
    std::vector<double> row = {static_cast<double>(k), static_cast<double>(k) * dt};
    row.insert(row.end(), states[k].data(), states[k].data() + 12);
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline std::vector<Vec12> states_from(const Table& t) {
  if (t.header != state_columns()) throw IoError("not a state table");
  std::vector<Vec12> out;
  out.reserve(t.rows.size());
  for (const auto& row : t.rows) out.push_back(Eigen::Map<const Vec12>(row.data() + 2));
  return out;
}

inline Table control_table(const std::vector<ControlInput>& controls, double dt) {
  Table t;
  t.header = {"step", "t", "F", "Mx", "My", "Mz"};
  for (std::size_t k = 0; k < controls.size(); ++k) {
    const auto& c = controls[k];
    t.rows.push_back({static_cast<double>(k), static_cast<double>(k) * dt, c.thrust, c.torque[0],
                      c.torque[1], c.torque[2]});
  }
  return t;
}

inline Table trace_table(const EstimateTrace& trace) {
  Table t;
  t.header = {"iter", "m", "Ixx", "Iyy", "Izz", "sim_step", "guarded", "window"};
  for (const auto& e : trace.entries) {
    t.rows.push_back({static_cast<double>(e.iteration), e.mass, e.inertia[0], e.inertia[1],
                      e.inertia[2], static_cast<double>(e.sim_step), e.guarded ? 1.0 : 0.0,
                      static_cast<double>(e.window)});
  }
  return t;
}

inline EstimateTrace trace_from(const Table& t) {
  const std::size_t ci = t.column("iter"), cm = t.column("m"), cx = t.column("Ixx"),
                    cy = t.column("Iyy"), cz = t.column("Izz");
  EstimateTrace trace;
  for (const auto& row : t.rows) {
    TraceEntry e;
    e.iteration = static_cast<int>(row[ci]);
    e.mass = row[cm];
    e.inertia = Vec3(row[cx], row[cy], row[cz]);
    if (t.header.size() > 5) {
      e.sim_step = static_cast<long>(row[t.column("sim_step")]);
      e.guarded = row[t.column("guarded")] != 0.0;
      e.window = static_cast<std::size_t>(row[t.column("window")]);
    }
    trace.entries.push_back(e);
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Configuration

inline json vec_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

template <int N>
Eigen::Matrix<double, N, 1> vec_from(const json& j, const std::string& field) {
  if (!j.is_array() || j.size() != static_cast<std::size_t>(N))
    throw ConfigError(field + ": expected an array of " + std::to_string(N) + " numbers");
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) {
    if (!j[i].is_number()) throw ConfigError(field + ": entries must be numbers");
    v[i] = j[i].get<double>();
  }
  return v;
}

/// A square matrix may be given as a scalar (times identity), a diagonal
/// array, or a full array of rows.
inline Mat12 mat12_from(const json& j, const std::string& field) {
  if (j.is_number()) return Mat12::Identity() * j.get<double>();
  if (j.is_array() && j.size() == 12 && j[0].is_number()) return vec_from<12>(j, field).asDiagonal();
  if (j.is_array() && j.size() == 12) {
    Mat12 m;
    for (int r = 0; r < 12; ++r) m.row(r) = vec_from<12>(j[r], field).transpose();
    return m;
  }
  throw ConfigError(field + ": expected a scalar, 12 diagonal entries or a 12x12 array");
}

inline json mat12_json(const Mat12& m) {
  const Mat12 diag = Mat12(m.diagonal().asDiagonal());
  if (m == diag) {
    if ((m.diagonal().array() == m(0, 0)).all()) return m(0, 0);
    return vec_json(m.diagonal());
  }
  json rows = json::array();
  for (int r = 0; r < 12; ++r) rows.push_back(vec_json(m.row(r).transpose()));
  return rows;
}

inline json to_json(const SimulationConfig& c) {
  json j;
  json mission;
  mission["start"] = vec_json(c.mission.start);
  json wps = json::array();
  for (const auto& w : c.mission.waypoints) wps.push_back(vec_json(w));
  mission["waypoints"] = wps;
  mission["arrival_radius"] = c.mission.arrival_radius;
  mission["max_steps"] = c.mission.max_steps;
  mission["divergence_radius"] = c.mission.divergence_radius;
  j["mission"] = mission;

  j["params"] = {{"mass", c.params.mass},
                 {"inertia", vec_json(c.params.inertia)},
                 {"gravity", c.params.gravity},
                 {"arm_length", c.params.arm_length}};
  j["process_noise"] = {{"sigma_thrust", c.process.sigma_thrust},
                        {"sigma_torque", c.process.sigma_torque},
                        {"dt", c.process.dt}};
  j["sensor_noise"] = {{"position", c.sensor.position},
                       {"velocity", c.sensor.velocity},
                       {"acceleration", c.sensor.acceleration},
                       {"euler", c.sensor.euler},
                       {"rate", c.sensor.rate}};
  j["controller"] = {{"state_weights", vec_json(c.controller.weights.state)},
                     {"input_weights", vec_json(c.controller.weights.input)},
                     {"k_theta", c.controller.k_theta},
                     {"yaw_ref", c.controller.yaw_ref},
                     {"carrot_distance", c.controller.carrot_distance},
                     {"max_horizontal_accel", c.controller.max_horizontal_accel}};
  j["flight_filter"] = {{"q", vec_json(c.flight_filter.q_diag)},
                        {"p0", c.flight_filter.p0},
                        {"use_commanded_rate", c.flight_filter.use_commanded_rate}};
  j["em"] = {{"max_iterations", c.em.max_iterations},
             {"tolerance", c.em.tolerance},
             {"delta", c.em.delta},
             {"window_size", c.em.window_size},
             {"cadence", c.em.cadence},
             {"P0", mat12_json(c.em.filter.P0)},
             {"Q0", mat12_json(c.em.filter.Q)},
             {"R0", mat12_json(c.em.filter.R)}};
  j["theta0"] = {{"mass", c.theta0.mass}, {"inertia", vec_json(c.theta0.inertia)}};
  j["smooth_flight"] = c.smooth_flight;
  return j;
}

namespace detail {

/// Reads optional fields and rejects unknown keys so that typos surface.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }
  ~Reader() = default;

  bool has(const std::string& k) {
    seen_.push_back(k);
    return j_.contains(k);
  }
  const json& at(const std::string& k) const { return j_.at(k); }
  std::string field(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

  double number(const std::string& k, double fallback) {
    if (!has(k)) return fallback;
    if (!j_[k].is_number()) throw ConfigError(field(k) + ": expected a number");
    return j_[k].get<double>();
  }
  long integer(const std::string& k, long fallback) {
    if (!has(k)) return fallback;
    if (!j_[k].is_number_integer()) throw ConfigError(field(k) + ": expected an integer");
    return j_[k].get<long>();
  }
  bool boolean(const std::string& k, bool fallback) {
    if (!has(k)) return fallback;
    if (!j_[k].is_boolean()) throw ConfigError(field(k) + ": expected true/false");
    return j_[k].get<bool>();
  }
  template <int N>
  Eigen::Matrix<double, N, 1> vec(const std::string& k, const Eigen::Matrix<double, N, 1>& fallback) {
    if (!has(k)) return fallback;
    return vec_from<N>(j_[k], field(k));
  }
  Mat12 mat(const std::string& k, const Mat12& fallback) {
    if (!has(k)) return fallback;
    return mat12_from(j_[k], field(k));
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end())
        throw ConfigError(field(it.key()) + ": unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::vector<std::string> seen_;
};

}  // namespace detail

/// Builds a configuration from defaults overlaid with `j`, then validates it.
/// Validation errors name the offending field.
inline SimulationConfig config_from_json(const json& j) {
  SimulationConfig c;
  detail::Reader root(j, "");
  if (root.has("mission")) {
    detail::Reader r(root.at("mission"), "mission");
    c.mission.start = r.vec<3>("start", c.mission.start);
    if (r.has("waypoints")) {
      const json& w = r.at("waypoints");
      if (!w.is_array()) throw ConfigError("mission.waypoints: expected an array");
      c.mission.waypoints.clear();
      for (std::size_t i = 0; i < w.size(); ++i)
        c.mission.waypoints.push_back(vec_from<3>(w[i], "mission.waypoints[" + std::to_string(i) + "]"));
    }
    c.mission.arrival_radius = r.number("arrival_radius", c.mission.arrival_radius);
    c.mission.max_steps = r.integer("max_steps", c.mission.max_steps);
    c.mission.divergence_radius = r.number("divergence_radius", c.mission.divergence_radius);
    r.finish();
  }
  if (root.has("params")) {
    detail::Reader r(root.at("params"), "params");
    c.params.mass = r.number("mass", c.params.mass);
    c.params.inertia = r.vec<3>("inertia", c.params.inertia);
    c.params.gravity = r.number("gravity", c.params.gravity);
    c.params.arm_length = r.number("arm_length", c.params.arm_length);
    r.finish();
  }
  if (root.has("process_noise")) {
    detail::Reader r(root.at("process_noise"), "process_noise");
    c.process.sigma_thrust = r.number("sigma_thrust", c.process.sigma_thrust);
    c.process.sigma_torque = r.number("sigma_torque", c.process.sigma_torque);
    c.process.dt = r.number("dt", c.process.dt);
    r.finish();
  }
  c.em.filter.dt = c.process.dt;
  if (root.has("sensor_noise")) {
    detail::Reader r(root.at("sensor_noise"), "sensor_noise");
    c.sensor.position = r.number("position", c.sensor.position);
    c.sensor.velocity = r.number("velocity", c.sensor.velocity);
    c.sensor.acceleration = r.number("acceleration", c.sensor.acceleration);
    c.sensor.euler = r.number("euler", c.sensor.euler);
    c.sensor.rate = r.number("rate", c.sensor.rate);
    r.finish();
  }
  if (root.has("controller")) {
    detail::Reader r(root.at("controller"), "controller");
    c.controller.weights.state = r.vec<12>("state_weights", c.controller.weights.state);
    c.controller.weights.input = r.vec<6>("input_weights", c.controller.weights.input);
    c.controller.k_theta = r.number("k_theta", c.controller.k_theta);
    c.controller.yaw_ref = r.number("yaw_ref", c.controller.yaw_ref);
    c.controller.carrot_distance = r.number("carrot_distance", c.controller.carrot_distance);
    c.controller.max_horizontal_accel = r.number("max_horizontal_accel", c.controller.max_horizontal_accel);
    r.finish();
  }
  if (root.has("flight_filter")) {
    detail::Reader r(root.at("flight_filter"), "flight_filter");
    c.flight_filter.q_diag = r.vec<12>("q", c.flight_filter.q_diag);
    c.flight_filter.p0 = r.number("p0", c.flight_filter.p0);
    c.flight_filter.use_commanded_rate = r.boolean("use_commanded_rate", c.flight_filter.use_commanded_rate);
    r.finish();
  }
  if (root.has("em")) {
    detail::Reader r(root.at("em"), "em");
    c.em.max_iterations = static_cast<int>(r.integer("max_iterations", c.em.max_iterations));
    c.em.tolerance = r.number("tolerance", c.em.tolerance);
    c.em.delta = r.number("delta", c.em.delta);
    c.em.window_size = static_cast<int>(r.integer("window_size", c.em.window_size));
    c.em.cadence = static_cast<int>(r.integer("cadence", c.em.cadence));
    c.em.filter.P0 = r.mat("P0", c.em.filter.P0);
    c.em.filter.Q = r.mat("Q0", c.em.filter.Q);
    c.em.filter.R = r.mat("R0", c.em.filter.R);
    r.finish();
  }
  if (root.has("theta0")) {
    detail::Reader r(root.at("theta0"), "theta0");
    c.theta0.mass = r.number("mass", c.theta0.mass);
    c.theta0.inertia = r.vec<3>("inertia", c.theta0.inertia);
    r.finish();
  }
  c.smooth_flight = root.boolean("smooth_flight", c.smooth_flight);
  root.finish();
  c.validate();
  return c;
}

/// Campaign-level settings: which pipeline, which observation record, which seeds.
struct CampaignSettings {
  Mode mode = Mode::Offline;
  ObservationSource source = ObservationSource::Ekf;
  int seeds = 20;
  std::uint64_t first_seed = 1;
  unsigned workers = 0;  // 0: one per hardware thread

  std::vector<std::uint64_t> seed_list() const {
    std::vector<std::uint64_t> out;
    for (int i = 0; i < seeds; ++i) out.push_back(first_seed + static_cast<std::uint64_t>(i));
    return out;
  }

  void validate() const {
    if (seeds < 1) throw ConfigError("campaign.seeds must be >= 1");
  }
};

inline json to_json(const CampaignSettings& s) {
  return {{"mode", to_string(s.mode)},
          {"sensor", to_string(s.source)},
          {"seeds", s.seeds},
          {"first_seed", s.first_seed},
          {"workers", s.workers}};
}

struct RunConfig {
  SimulationConfig sim;
  CampaignSettings campaign;
};

/// Splits a configuration document into its "campaign" block and the
/// simulation configuration.
inline RunConfig run_config_from_json(json j) {
  RunConfig rc;
  if (j.is_object() && j.contains("campaign")) {
    detail::Reader r(j["campaign"], "campaign");
    if (r.has("mode")) {
      if (!r.at("mode").is_string()) throw ConfigError("campaign.mode: expected a string");
      rc.campaign.mode = parse_mode(r.at("mode").get<std::string>());
    }
    if (r.has("sensor")) {
      if (!r.at("sensor").is_string()) throw ConfigError("campaign.sensor: expected a string");
      rc.campaign.source = parse_source(r.at("sensor").get<std::string>());
    }
    rc.campaign.seeds = static_cast<int>(r.integer("seeds", rc.campaign.seeds));
    const long first = r.integer("first_seed", static_cast<long>(rc.campaign.first_seed));
    if (first < 0) throw ConfigError("campaign.first_seed must be >= 0");
    rc.campaign.first_seed = static_cast<std::uint64_t>(first);
    const long workers = r.integer("workers", 0);
    if (workers < 0) throw ConfigError("campaign.workers must be >= 0");
    rc.campaign.workers = static_cast<unsigned>(workers);
    r.finish();
    j.erase("campaign");
  }
  rc.campaign.validate();
  rc.sim = config_from_json(j);
  return rc;
}

inline json parse_json_file(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::parse_error& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

inline RunConfig load_run_config(const fs::path& p) { return run_config_from_json(parse_json_file(p)); }

inline SimulationConfig load_config(const fs::path& p) { return load_run_config(p).sim; }

/// 64-bit FNV-1a of the canonical configuration text, as 16 hex digits.
inline std::string config_hash(const SimulationConfig& c) {
  const std::string text = to_json(c).dump();
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Run directories

inline std::string run_dir_name(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

inline json manifest_json(const SimulationConfig& c, const RunRecord& r) {
  json m;
  m["config_hash"] = config_hash(c);
  m["seed"] = r.seed;
  m["mode"] = to_string(r.mode);
  m["sensor"] = to_string(r.source);
  m["dt"] = r.dt;
  m["steps"] = r.truth.size();
  m["completed"] = r.completed;
  m["diverged"] = r.diverged;
  m["failure"] = r.failure;
  m["converged"] = r.trace.converged;
  m["guard_count"] = r.guard_count;
  json wps = json::array();
  for (std::size_t i = 0; i < r.waypoint_steps.size(); ++i)
    wps.push_back({{"reached_step", r.waypoint_steps[i]},
                   {"min_distance", r.waypoint_min_distance[i]}});
  m["waypoints"] = wps;
  return m;
}

inline void write_run(const fs::path& dir, const SimulationConfig& c, const RunRecord& r) {
  fs::create_directories(dir);
  write_file(dir / "manifest.json", manifest_json(c, r).dump(2) + "\n");
  write_file(dir / "trajectory.csv", to_csv(state_table(r.truth, r.dt)));
  write_file(dir / "estimates.csv", to_csv(state_table(r.estimates, r.dt)));
  write_file(dir / "controls.csv", to_csv(control_table(r.controls, r.dt)));
  write_file(dir / "trace.csv", to_csv(trace_table(r.trace)));
}

/// Rebuilds the summary inputs of one run from its directory.
inline RunDigest read_digest(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.json";
  if (!fs::exists(manifest)) throw IoError(dir.string() + ": missing manifest.json");
  json m;
  try {
    m = json::parse(read_file(manifest));
  } catch (const json::parse_error& e) {
    throw IoError(manifest.string() + ": " + e.what());
  }
  if (!m.contains("seed") || !m["seed"].is_number_unsigned())
    throw IoError(manifest.string() + ": corrupt manifest");
  const auto truth = states_from(parse_csv(read_file(dir / "trajectory.csv")));
  const auto est = states_from(parse_csv(read_file(dir / "estimates.csv")));
  const auto trace = trace_from(parse_csv(read_file(dir / "trace.csv")));

  RunDigest d;
  d.seed = m["seed"].get<std::uint64_t>();
  if (!trace.entries.empty()) {
    d.has_estimate = true;
    d.mass = trace.final().mass;
    d.inertia = trace.final().inertia;
  }
  d.position_error = estimation_error(truth, est, block::kPosition);
  d.euler_error = estimation_error(truth, est, block::kEuler);
  d.steps = std::min(truth.size(), est.size());
  return d;
}

// ---------------------------------------------------------------------------
// Summaries

inline json summary_json(const CampaignSummary& s, const std::string& mode, const std::string& sensor,
                         const std::string& hash) {
  auto range = [](const Range& r) { return json{{"min", r.min}, {"max", r.max}}; };
  auto stats = [](const ErrorStats& e) {
    return json{{"mean", e.mean}, {"std", e.std}, {"max", e.max}};
  };
  json j;
  j["mode"] = mode;
  j["sensor"] = sensor;
  j["config_hash"] = hash;
  j["runs"] = s.runs;
  j["estimated_runs"] = s.estimated_runs;
  j["mass"] = range(s.mass);
  j["Ixx"] = range(s.inertia[0]);
  j["Iyy"] = range(s.inertia[1]);
  j["Izz"] = range(s.inertia[2]);
  j["position_error"] = stats(s.position_error);
  j["euler_error"] = stats(s.euler_error);
  return j;
}

/// Human-readable mass and inertia tables plus the pose-error line.
inline std::string summary_text(const CampaignSummary& s, const QuadParams& truth,
                                 const std::string& mode, const std::string& sensor) {
  auto fmt = [](const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return std::string(buf);
  };
  auto range = [&](const Range& r, const char* f) {
    return "(" + fmt(f, r.min) + ", " + fmt(f, r.max) + ")";
  };
  std::string label = sensor == "ekf"    ? "State estimation from EKF"
                      : sensor == "full" ? "Full state observation"
                                         : "Partial state observation";
  std::ostringstream o;
  o << "Campaign: " << mode << ", " << s.runs << " runs (" << s.estimated_runs
    << " with estimates)\n\n";
  o << "Estimated mass\n";
  o << "  " << std::left;
  char line[256];
  std::snprintf(line, sizeof line, "%-28s %s\n", "", "mass (kg)");
  o << line;
  std::snprintf(line, sizeof line, "  %-28s %s\n", "True value", fmt("%.4f", truth.mass).c_str());
  o << line;
  std::snprintf(line, sizeof line, "  %-28s %s\n", label.c_str(), range(s.mass, "%.4f").c_str());
  o << line << "\n";
  o << "Estimated inertia matrix\n";
  std::snprintf(line, sizeof line, "  %-28s %-24s %-24s %s\n", "", "Ixx (kg m^2)", "Iyy (kg m^2)",
                "Izz (kg m^2)");
  o << line;
  std::snprintf(line, sizeof line, "  %-28s %-24s %-24s %s\n", "True value",
                fmt("%.4e", truth.inertia[0]).c_str(), fmt("%.4e", truth.inertia[1]).c_str(),
                fmt("%.4e", truth.inertia[2]).c_str());
  o << line;
  std::snprintf(line, sizeof line, "  %-28s %-24s %-24s %s\n", label.c_str(),
                range(s.inertia[0], "%.4e").c_str(), range(s.inertia[1], "%.4e").c_str(),
                range(s.inertia[2], "%.4e").c_str());
  o << line << "\n";
  o << "Pose estimation error (flight EKF)\n";
  std::snprintf(line, sizeof line, "  position: mean %.3e m, std %.3e m, max %.3e m\n",
                s.position_error.mean, s.position_error.std, s.position_error.max);
  o << line;
  std::snprintf(line, sizeof line, "  euler:    mean %.3e rad, std %.3e rad, max %.3e rad\n",
                s.euler_error.mean, s.euler_error.std, s.euler_error.max);
  o << line;
  return o.str();
}

// ---------------------------------------------------------------------------
// Campaign directories

inline std::string campaign_dir_name(const CampaignSettings& s) {
  return to_string(s.mode) + "_" + to_string(s.source);
}

/// Writes every run, the effective configuration and the summary under
/// `root/<mode>_<sensor>/`. Returns that directory.
inline fs::path write_campaign(const fs::path& root, const RunConfig& rc,
                               const std::vector<RunRecord>& records) {
  const fs::path dir = root / campaign_dir_name(rc.campaign);
  fs::create_directories(dir);
  json cfg = to_json(rc.sim);
  cfg["campaign"] = to_json(rc.campaign);
  write_file(dir / "config.json", cfg.dump(2) + "\n");
  for (const auto& r : records) write_run(dir / run_dir_name(r.seed), rc.sim, r);
  const auto summary = summarize_campaign(records);
  const std::string mode = to_string(rc.campaign.mode), sensor = to_string(rc.campaign.source);
  write_file(dir / "summary.json",
             summary_json(summary, mode, sensor, config_hash(rc.sim)).dump(2) + "\n");
  write_file(dir / "summary.txt", summary_text(summary, rc.sim.params, mode, sensor));
  return dir;
}

struct LoadedSummary {
  CampaignSummary summary;
  std::string mode, sensor, hash;
  QuadParams params;
};

/// Collects run directories from the given paths (each either a run
/// directory or a directory of run directories) and summarizes them.
inline LoadedSummary summarize_directories(const std::vector<fs::path>& paths) {
  std::vector<fs::path> runs;
  for (const auto& p : paths) {
    if (!fs::is_directory(p)) throw IoError(p.string() + ": not a directory");
    if (fs::exists(p / "manifest.json")) {
      runs.push_back(p);
      continue;
    }
    std::vector<fs::path> found;
    for (const auto& e : fs::directory_iterator(p))
      if (e.is_directory() && fs::exists(e.path() / "manifest.json")) found.push_back(e.path());
    std::sort(found.begin(), found.end());
    runs.insert(runs.end(), found.begin(), found.end());
  }
  if (runs.empty()) throw IoError("no run records found");

  // Restore the in-memory order: ascending seed.
  std::vector<std::pair<std::uint64_t, RunDigest>> digests;
  LoadedSummary out;
  for (const auto& r : runs) {
    auto d = read_digest(r);  // validates the manifest, so the parse below cannot fail
    const json m = json::parse(read_file(r / "manifest.json"));
    if (out.mode.empty()) {
      out.mode = m.value("mode", "");
      out.sensor = m.value("sensor", "");
      out.hash = m.value("config_hash", "");
      const fs::path cfg = r.parent_path() / "config.json";
      if (fs::exists(cfg)) out.params = load_run_config(cfg).sim.params;
    }
    digests.emplace_back(d.seed, d);
  }
  std::stable_sort(digests.begin(), digests.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<RunDigest> ds;
  for (auto& [seed, d] : digests) ds.push_back(d);
  out.summary = summarize_campaign(ds);
  return out;
}

}  // namespace quadem::io
