#pragma once

#include "quadem/control.hpp"
#include "quadem/dynamics.hpp"
#include "quadem/em.hpp"
#include "quadem/estimation.hpp"
#include "quadem/sensors.hpp"
#include "quadem/types.hpp"

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace quadem {

enum class Mode { Offline, Online };

/// Which record the identifier consumes: the flight EKF estimates, sensor B
/// (full state) or sensor C (no Euler angles).
enum class ObservationSource { Ekf, Full, Partial };

inline std::string to_string(Mode m) { return m == Mode::Offline ? "offline" : "online"; }

inline std::string to_string(ObservationSource s) {
  switch (s) {
    case ObservationSource::Ekf: return "ekf";
    case ObservationSource::Full: return "full";
    case ObservationSource::Partial: return "partial";
  }
  return "?";
}

inline Mode parse_mode(const std::string& s) {
  if (s == "offline") return Mode::Offline;
  if (s == "online") return Mode::Online;
  throw ConfigError("mode must be 'offline' or 'online', got '" + s + "'");
}

inline ObservationSource parse_source(const std::string& s) {
  if (s == "ekf") return ObservationSource::Ekf;
  if (s == "full") return ObservationSource::Full;
  if (s == "partial") return ObservationSource::Partial;
  throw ConfigError("sensor must be 'ekf', 'full' or 'partial', got '" + s + "'");
}

struct MissionSpec {
  Vec3 start = Vec3(0.5, 1.0, 0.0);
  std::vector<Vec3> waypoints = {Vec3(4, 3, 3), Vec3(3, 5, 4), Vec3(6, 4, 5), Vec3(4, 3, 4),
                                 Vec3(2, 1, 5)};
  double arrival_radius = 0.1;
  long max_steps = 20000;
  double divergence_radius = 1000.0;

  void validate() const {
    if (waypoints.empty()) throw ConfigError("mission.waypoints must contain at least one point");
    if (!(arrival_radius > 0.0)) throw ConfigError("mission.arrival_radius must be > 0");
    if (max_steps < 1) throw ConfigError("mission.max_steps must be >= 1");
    if (!(divergence_radius > 0.0)) throw ConfigError("mission.divergence_radius must be > 0");
    if (!start.allFinite()) throw ConfigError("mission.start must be finite");
    for (const auto& w : waypoints)
      if (!w.allFinite()) throw ConfigError("mission.waypoints must be finite");
  }
};

/// In-flight EKF (sensor A). R defaults to the sensor noise covariance.
struct FlightFilterSpec {
  Vec12 q_diag = (Vec12() << Vec3::Constant(1e-8), Vec3::Constant(1e-7), Vec3::Constant(1e-7),
                  Vec3::Constant(1e-4))
                     .finished();
  double p0 = 1e-4;
  /// Feed the commanded angular acceleration into the rate prediction.
  bool use_commanded_rate = true;

  void validate() const {
    if (!(q_diag.array() >= 0.0).all()) throw ConfigError("flight_filter.q must be >= 0");
    if (!(p0 >= 0.0)) throw ConfigError("flight_filter.p0 must be >= 0");
  }
};

struct SimulationConfig {
  MissionSpec mission;
  QuadParams params;
  ProcessNoiseSpec process;
  SensorNoiseSpec sensor;
  ControllerConfig controller;
  FlightFilterSpec flight_filter;
  EmConfig em;
  ThetaEstimate theta0;
  /// Keep the flight EKF's predictions and run an RTS pass over the flight.
  bool smooth_flight = false;

  SimulationConfig() {
    // Rate weight well above the others: with the k_theta rate command on top
    // of the LQR law the attitude loop is otherwise barely damped at dt = 0.01.
    controller.weights.state << Vec3::Constant(10.0), Vec3::Constant(1.0), Vec3::Constant(1.0),
        Vec3::Constant(1600.0);
  }

  void validate() const {
    mission.validate();
    params.validate();
    process.validate();
    sensor.validate();
    controller.validate();
    flight_filter.validate();
    em.validate();
    if (!theta0.positive()) throw ConfigError("theta0 components must be > 0");
    if (std::abs(em.filter.dt - process.dt) > 1e-15)
      throw ConfigError("em.filter.dt must equal process_noise.dt");
  }

  FilterConfig flight_filter_config() const {
    FilterConfig fc;
    fc.dt = process.dt;
    fc.Q = flight_filter.q_diag.asDiagonal();
    fc.R = measurement_covariance(sensor);
    fc.P0 = Mat12::Identity() * flight_filter.p0;
    return fc;
  }
};

/// Per-seed random streams. Each consumer gets its own engine seeded from
/// (seed, stream id), so enabling one sensor never shifts another's draws.
namespace stream {
inline constexpr std::uint32_t kPlant = 1;
inline constexpr std::uint32_t kSensorA = 2;
inline constexpr std::uint32_t kSensorB = 3;
inline constexpr std::uint32_t kSensorC = 4;
}  // namespace stream

inline std::mt19937_64 make_stream(std::uint64_t seed, std::uint32_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32), id};
  return std::mt19937_64(seq);
}

struct BlockErrors {
  Eigen::Vector4d rmse = Eigen::Vector4d::Zero();  // position, velocity, euler, rate
};

struct RunRecord {
  std::uint64_t seed = 0;
  Mode mode = Mode::Offline;
  ObservationSource source = ObservationSource::Ekf;
  double dt = 0.01;

  std::vector<Vec12> truth;       // true state at every logged step
  std::vector<Vec12> estimates;   // flight EKF posterior mean
  std::vector<Vec12> database;    // identifier observations, padded to 12
  Mat12 H = Mat12::Identity();
  std::vector<ControlInput> controls;  // controls[k] applied between step k and k+1

  EstimateTrace trace;
  int guard_count = 0;

  std::vector<long> waypoint_steps;     // step at which each waypoint was reached
  std::vector<double> waypoint_min_distance;  // closest true approach per waypoint
  bool completed = false;
  bool diverged = false;
  std::string failure;

  // Filled only when SimulationConfig::smooth_flight is set.
  BlockErrors filter_errors;
  BlockErrors smoother_errors;

  std::size_t steps() const { return truth.size(); }
};

struct ErrorStats {
  double mean = 0.0, std = 0.0, max = 0.0;
};

/// Euclidean position and Euler-angle error of the flight estimates.
inline ErrorStats estimation_error(const std::vector<Vec12>& truth, const std::vector<Vec12>& est,
                                   int block_start) {
  ErrorStats s;
  const std::size_t n = std::min(truth.size(), est.size());
  if (n == 0) return s;
  double sum = 0.0, sq = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double e = (truth[k].segment<3>(block_start) - est[k].segment<3>(block_start)).norm();
    sum += e;
    sq += e * e;
    s.max = std::max(s.max, e);
  }
  s.mean = sum / static_cast<double>(n);
  s.std = std::sqrt(std::max(0.0, sq / static_cast<double>(n) - s.mean * s.mean));
  return s;
}

namespace detail {

inline Eigen::Vector4d block_rmse(const std::vector<Vec12>& truth, const std::vector<Vec12>& est) {
  Eigen::Vector4d acc = Eigen::Vector4d::Zero();
  const std::size_t n = std::min(truth.size(), est.size());
  for (std::size_t k = 0; k < n; ++k) {
    const Vec12 e = truth[k] - est[k];
    for (int b = 0; b < 4; ++b) acc[b] += e.segment<3>(3 * b).squaredNorm();
  }
  if (n > 0) acc = (acc / static_cast<double>(n)).cwiseSqrt();
  return acc;
}

inline Mat12 source_matrix(ObservationSource s) {
  switch (s) {
    case ObservationSource::Ekf: return Mat12::Identity();
    case ObservationSource::Full: return measurement_matrix(SensorKind::B);
    case ObservationSource::Partial: return measurement_matrix(SensorKind::C);
  }
  return Mat12::Identity();
}

}  // namespace detail

/// Closed-loop flight. Offline: the controller uses the true parameters and
/// EM runs on the recorded database afterwards. Online: the controller starts
/// from theta0 and the identifier runs every `cadence` steps on the most
/// recent `window_size` observations, publishing its estimate to the
/// controller. The plant always uses the true parameters.
inline RunRecord run_mission(const SimulationConfig& cfg, Mode mode, ObservationSource source,
                             std::uint64_t seed) {
  cfg.validate();
  const double dt = cfg.process.dt;
  const FilterConfig flight_fc = cfg.flight_filter_config();
  const LqgController controller(cfg.controller);

  auto plant_rng = make_stream(seed, stream::kPlant);
  auto sensor_a_rng = make_stream(seed, stream::kSensorA);
  auto sensor_b_rng = make_stream(seed, stream::kSensorB);
  auto sensor_c_rng = make_stream(seed, stream::kSensorC);

  RunRecord rec;
  rec.seed = seed;
  rec.mode = mode;
  rec.source = source;
  rec.dt = dt;
  rec.H = detail::source_matrix(source);
  rec.waypoint_steps.assign(cfg.mission.waypoints.size(), -1);
  rec.waypoint_min_distance.assign(cfg.mission.waypoints.size(),
                                   std::numeric_limits<double>::infinity());

  const long reserve = std::min<long>(cfg.mission.max_steps + 1, 1 << 16);
  rec.truth.reserve(reserve);
  rec.estimates.reserve(reserve);
  rec.database.reserve(reserve);
  rec.controls.reserve(reserve);

  StateVector12 x = make_state(cfg.mission.start, Vec3::Zero(), Vec3::Zero(), Vec3::Zero());
  GaussianBelief init;
  init.mean = x;
  init.cov = flight_fc.P0;
  ExtendedKalmanFilter ekf(init, flight_fc);

  ThetaEstimate theta = mode == Mode::Offline ? ThetaEstimate::from(cfg.params) : cfg.theta0;
  if (mode == Mode::Online) {
    rec.trace.entries.push_back({0, 0, theta.mass, theta.inertia, false, 0});
  }

  std::vector<GaussianBelief> flight_filtered;
  std::vector<Prediction<12>> flight_predictions;

  const Mat12 h_a = measurement_matrix(SensorKind::A);
  Vec3 last_accel = Vec3(0.0, 0.0, -cfg.params.gravity);
  Vec3 last_wdot = Vec3::Zero();
  std::size_t wp = 0;
  int tick = 0;

  try {
    for (long k = 0;; ++k) {
      // Sense. The accelerometer reports the acceleration realised over the
      // step that just ended.
      const Observation obs_a = observe(SensorKind::A, x, last_accel, cfg.sensor, sensor_a_rng, k);
      if (k > 0) {
        PredictionInput in;
        in.accel = accelerometer(obs_a);
        if (cfg.flight_filter.use_commanded_rate) in.angular_accel = last_wdot;
        ekf.predict(in);
        if (cfg.smooth_flight) flight_predictions.push_back(ekf.last_prediction());
      }
      ekf.correct(measurement_vector(obs_a), h_a);
      if (cfg.smooth_flight) flight_filtered.push_back(ekf.belief());
      const StateVector12 xhat = ekf.belief().mean;

      rec.truth.push_back(x);
      rec.estimates.push_back(xhat);
      switch (source) {
        case ObservationSource::Ekf:
          rec.database.push_back(xhat);
          break;
        case ObservationSource::Full:
          rec.database.push_back(measurement_vector(
              observe(SensorKind::B, x, std::nullopt, cfg.sensor, sensor_b_rng, k)));
          break;
        case ObservationSource::Partial:
          rec.database.push_back(measurement_vector(
              observe(SensorKind::C, x, std::nullopt, cfg.sensor, sensor_c_rng, k)));
          break;
      }

      // Waypoint bookkeeping on the estimate; closest approach on the truth.
      {
        const double true_d = (position(x) - cfg.mission.waypoints[wp]).norm();
        rec.waypoint_min_distance[wp] = std::min(rec.waypoint_min_distance[wp], true_d);
        if ((position(xhat) - cfg.mission.waypoints[wp]).norm() < cfg.mission.arrival_radius) {
          rec.waypoint_steps[wp] = k;
          ++wp;
          if (wp == cfg.mission.waypoints.size()) {
            rec.completed = true;
            break;
          }
        }
      }
      if (k >= cfg.mission.max_steps) {
        rec.failure = "mission timeout";
        break;
      }

      // Identify.
      if (mode == Mode::Online && k % cfg.em.cadence == 0 && rec.database.size() >= 2) {
        const std::size_t n = rec.database.size();
        const std::size_t w = std::min<std::size_t>(n, cfg.em.window_size);
        EmData window;
        window.y = std::span<const Vec12>(rec.database).subspan(n - w, w);
        window.controls = std::span<const ControlInput>(rec.controls).subspan(n - w, w - 1);
        window.H = rec.H;
        window.gravity = cfg.params.gravity;
        const auto res = em_online_tick(window, theta, cfg.em);
        theta = res.theta;
        theta.iteration = ++tick;
        if (res.guarded) ++rec.guard_count;
        rec.trace.entries.push_back({tick, k, theta.mass, theta.inertia, res.guarded, w});
      }

      // Control with the current parameter belief, then advance the plant.
      const QuadParams est = theta.applied_to(cfg.params);
      const ControlOutput out = controller.compute(xhat, cfg.mission.waypoints[wp], est);
      rec.controls.push_back(out.input);
      last_wdot = out.u.tail<3>();

      const StateVector12 next = step_sde(x, out.input, cfg.params, cfg.process, plant_rng);
      last_accel = realised_acceleration(x, next, dt);
      x = next;
      if (!(position(x).norm() <= cfg.mission.divergence_radius)) {
        rec.diverged = true;
        rec.failure = "divergence guard: |r| > " + std::to_string(cfg.mission.divergence_radius);
        break;
      }
    }
  } catch (const Error& e) {
    rec.diverged = true;
    rec.failure = e.what();
  }
  // The record ends on an observation; drop a trailing control if the loop
  // stopped after applying it.
  if (rec.controls.size() >= rec.database.size() && !rec.database.empty())
    rec.controls.resize(rec.database.size() - 1);

  if (cfg.smooth_flight && !flight_filtered.empty()) {
    flight_predictions.resize(flight_filtered.size() - 1);
    const auto smoothed = rts_smooth(flight_filtered, flight_predictions);
    std::vector<Vec12> means(smoothed.size());
    for (std::size_t k = 0; k < smoothed.size(); ++k) means[k] = smoothed[k].mean;
    rec.filter_errors.rmse = detail::block_rmse(rec.truth, rec.estimates);
    rec.smoother_errors.rmse = detail::block_rmse(rec.truth, means);
  }

  if (mode == Mode::Offline && !rec.diverged && rec.database.size() >= 2) {
    EmData data;
    data.y = rec.database;
    data.controls = rec.controls;
    data.H = rec.H;
    data.gravity = cfg.params.gravity;
    try {
      rec.trace = em_offline(data, cfg.theta0, cfg.em);
      for (const auto& e : rec.trace.entries)
        if (e.guarded) ++rec.guard_count;
    } catch (const Error& e) {
      rec.failure = std::string("identification failed: ") + e.what();
    }
  }
  return rec;
}

inline RunRecord run_offline(const SimulationConfig& cfg, ObservationSource source, std::uint64_t seed) {
  return run_mission(cfg, Mode::Offline, source, seed);
}

inline RunRecord run_online(const SimulationConfig& cfg, ObservationSource source, std::uint64_t seed) {
  return run_mission(cfg, Mode::Online, source, seed);
}

/// Runs every seed, in parallel when more than one worker is allowed. Output
/// order follows `seeds` regardless of scheduling.
inline std::vector<RunRecord> run_campaign(const SimulationConfig& cfg, Mode mode,
                                           ObservationSource source,
                                           const std::vector<std::uint64_t>& seeds,
                                           unsigned workers = 0) {
  cfg.validate();
  std::vector<RunRecord> out(seeds.size());
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(seeds.size(), 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < seeds.size(); ++i) out[i] = run_mission(cfg, mode, source, seeds[i]);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < seeds.size(); i = next++)
        out[i] = run_mission(cfg, mode, source, seeds[i]);
    });
  }
  for (auto& t : pool) t.join();
  return out;
}

// ---------------------------------------------------------------------------
// Campaign summary

struct Range {
  double min = std::numeric_limits<double>::infinity();
  double max = -std::numeric_limits<double>::infinity();

  void add(double v) {
    min = std::min(min, v);
    max = std::max(max, v);
  }
  double width() const { return max - min; }
};

/// What the summary needs from one run; extractable from a record on disk.
struct RunDigest {
  std::uint64_t seed = 0;
  bool has_estimate = false;
  double mass = 0.0;
  Vec3 inertia = Vec3::Zero();
  ErrorStats position_error;
  ErrorStats euler_error;
  std::size_t steps = 0;
};

inline RunDigest digest(const RunRecord& r) {
  RunDigest d;
  d.seed = r.seed;
  if (!r.trace.entries.empty()) {
    d.has_estimate = true;
    d.mass = r.trace.final().mass;
    d.inertia = r.trace.final().inertia;
  }
  d.position_error = estimation_error(r.truth, r.estimates, block::kPosition);
  d.euler_error = estimation_error(r.truth, r.estimates, block::kEuler);
  d.steps = std::min(r.truth.size(), r.estimates.size());
  return d;
}

struct CampaignSummary {
  std::size_t runs = 0;
  std::size_t estimated_runs = 0;
  Range mass;
  Range inertia[3];
  ErrorStats position_error;  // pooled over every step of every run
  ErrorStats euler_error;
};

inline CampaignSummary summarize_campaign(const std::vector<RunDigest>& runs) {
  if (runs.empty()) throw Error("summarize_campaign: no runs");
  CampaignSummary s;
  s.runs = runs.size();
  double n = 0.0;
  double pos_sum = 0.0, pos_sq = 0.0, eul_sum = 0.0, eul_sq = 0.0;
  for (const auto& r : runs) {
    if (r.has_estimate) {
      ++s.estimated_runs;
      s.mass.add(r.mass);
      for (int i = 0; i < 3; ++i) s.inertia[i].add(r.inertia[i]);
    }
    const double w = static_cast<double>(r.steps);
    n += w;
    pos_sum += r.position_error.mean * w;
    pos_sq += (r.position_error.std * r.position_error.std +
               r.position_error.mean * r.position_error.mean) * w;
    eul_sum += r.euler_error.mean * w;
    eul_sq += (r.euler_error.std * r.euler_error.std + r.euler_error.mean * r.euler_error.mean) * w;
    s.position_error.max = std::max(s.position_error.max, r.position_error.max);
    s.euler_error.max = std::max(s.euler_error.max, r.euler_error.max);
  }
  if (n > 0) {
    s.position_error.mean = pos_sum / n;
    s.position_error.std = std::sqrt(std::max(0.0, pos_sq / n - s.position_error.mean * s.position_error.mean));
    s.euler_error.mean = eul_sum / n;
    s.euler_error.std = std::sqrt(std::max(0.0, eul_sq / n - s.euler_error.mean * s.euler_error.mean));
  }
  return s;
}

inline CampaignSummary summarize_campaign(const std::vector<RunRecord>& records) {
  std::vector<RunDigest> d;
  d.reserve(records.size());
  for (const auto& r : records) d.push_back(digest(r));
  return summarize_campaign(d);
}

}  // namespace quadem
