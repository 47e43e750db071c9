#pragma once

#include "quadem/dynamics.hpp"
#include "quadem/estimation.hpp"
#include "quadem/types.hpp"

#include <optional>
#include <span>
#include <vector>

namespace quadem {

/// Current identification estimate theta = (m, Ixx, Iyy, Izz).
struct ThetaEstimate {
  double mass = 0.001;
  Vec3 inertia = Vec3(1e-4, 2e-4, 1e-4);
  int iteration = 0;

  static ThetaEstimate from(const QuadParams& p) { return {p.mass, p.inertia, 0}; }

  /// `base` with mass and inertia replaced by the estimate.
  QuadParams applied_to(QuadParams base) const {
    base.mass = mass;
    base.inertia = inertia;
    return base;
  }

  bool positive() const {
    return mass > 0.0 && std::isfinite(mass) && (inertia.array() > 0.0).all() && inertia.allFinite();
  }
};

struct EmConfig {
  int max_iterations = 50;
  double tolerance = 1e-6;
  /// Transition-noise scale of the identification model. It scales the
  /// expected log-likelihood but drops out of the maximizers.
  double delta = 1.0;
  int window_size = 800;
  int cadence = 4;
  FilterConfig filter = FilterConfig::identification_defaults();

  void validate() const {
    if (max_iterations < 1) throw ConfigError("em.max_iterations must be >= 1");
    if (!(tolerance > 0.0)) throw ConfigError("em.tolerance must be > 0");
    if (!(delta > 0.0)) throw ConfigError("em.delta must be > 0");
    if (window_size < 2) throw ConfigError("em.window_size must be > 1");
    if (cadence < 1) throw ConfigError("em.cadence must be >= 1");
    filter.validate();
  }
};

/// Observation record handed to the identifier. `y[k]` is laid out on the
/// 12-dim state grid (zeros on rows H does not measure) and `controls[k]`
/// acts between `y[k]` and `y[k+1]`.
struct EmData {
  std::span<const Vec12> y;
  Mat12 H = Mat12::Identity();
  std::span<const ControlInput> controls;
  double gravity = 9.81;

  std::size_t size() const { return y.size(); }

  void validate() const {
    if (y.empty()) throw Error("EmData: no observations");
    if (controls.size() + 1 < y.size()) throw Error("EmData: need one control per transition");
  }
};

// ---------------------------------------------------------------------------
// E-step

/// Prediction inputs implied by the model with parameters theta at belief x.
inline PredictionInput model_inputs(const StateVector12& x, const ControlInput& u,
                                    const ThetaEstimate& theta, double gravity) {
  PredictionInput in;
  in.accel = Vec3(0.0, 0.0, -gravity) +
             rotation_body_to_earth(euler(x)).col(2) * (u.thrust / theta.mass);
  const Vec3 omega = body_rate(x);
  in.angular_accel =
      (u.torque - omega.cross(theta.inertia.cwiseProduct(omega))).cwiseQuotient(theta.inertia);
  return in;
}

struct EStepResult {
  std::vector<GaussianBelief> filtered;
  std::vector<Prediction<12>> predictions;
  std::vector<GaussianBelief> smoothed;
};

/// Forward EKF under the theta-parameterized model followed by the RTS pass.
/// The initial mean is the first (padded) observation with covariance P0.
inline EStepResult e_step_full(const EmData& data, const ThetaEstimate& theta, const EmConfig& cfg) {
  data.validate();
  if (!theta.positive()) throw Error("e_step: theta must be strictly positive");
  const std::size_t n = data.size();
  const FilterConfig& fc = cfg.filter;

  EStepResult out;
  out.filtered.reserve(n);
  out.predictions.reserve(n - 1);

  GaussianBelief b;
  b.mean = data.y[0];
  b.cov = fc.P0;
  out.filtered.push_back(correct(b, data.y[0], data.H, fc));
  for (std::size_t k = 1; k < n; ++k) {
    const auto& prev = out.filtered.back();
    const auto in = model_inputs(prev.mean, data.controls[k - 1], theta, data.gravity);
    out.predictions.push_back(predict(prev, in, fc));
    out.filtered.push_back(correct(out.predictions.back().belief, data.y[k], data.H, fc));
  }
  out.smoothed = rts_smooth(out.filtered, out.predictions);
  return out;
}

inline std::vector<GaussianBelief> e_step(const EmData& data, const ThetaEstimate& theta,
                                          const EmConfig& cfg) {
  return e_step_full(data, theta, cfg).smoothed;
}

// ---------------------------------------------------------------------------
// M-step closed forms

namespace detail {
inline bool degenerate_ratio(double num, double den, double den_scale) {
  return den == 0.0 || num == 0.0 || !std::isfinite(den) || std::abs(den) <= 1e-14 * den_scale;
}
}  // namespace detail

/// Expected complete-data log-likelihood of the vertical-velocity transitions
/// (up to a theta-free constant) with plug-in means.
inline double mass_objective(double m, std::span<const double> vz, std::span<const double> thrust,
                             std::span<const double> r, double dt, double gravity, double delta) {
  double s = 0.0;
  for (std::size_t k = 1; k < vz.size(); ++k) {
    const double e = vz[k] - vz[k - 1] - (-gravity + thrust[k - 1] * r[k - 1] / m) * dt;
    s += e * e;
  }
  return -s / (2.0 * delta * delta * dt);
}

/// m = sum (r F)^2 dt / sum [r F g dt + (v_k - v_{k-1}) r F], all r, F at k-1.
inline double m_step_mass(std::span<const double> vz, std::span<const double> thrust,
                          std::span<const double> r, double dt, double gravity = 9.81) {
  if (vz.size() < 2) throw Error("m_step_mass: need at least two samples");
  if (thrust.size() + 1 < vz.size() || r.size() + 1 < vz.size())
    throw Error("m_step_mass: sequences are not aligned");
  double num = 0.0, den = 0.0, scale = 0.0;
  for (std::size_t k = 1; k < vz.size(); ++k) {
    const double rf = r[k - 1] * thrust[k - 1];
    num += rf * rf * dt;
    const double term = rf * gravity * dt + (vz[k] - vz[k - 1]) * rf;
    den += term;
    scale += std::abs(term);
  }
  if (detail::degenerate_ratio(num, den, scale))
    throw DegenerateExcitationError("m_step_mass: no thrust excitation", -1);
  return num / den;
}

/// Expected log-likelihood of the body-rate transitions for one axis.
inline double inertia_objective(int axis, double value, std::span<const Vec3> omega,
                                std::span<const Vec3> torque, const Vec3& others, double dt,
                                double delta) {
  const int a = axis, b = (axis + 1) % 3, c = (axis + 2) % 3;
  const double coupling = others[b] - others[c];
  double s = 0.0;
  for (std::size_t k = 1; k < omega.size(); ++k) {
    const Vec3& w = omega[k - 1];
    const double wdot = (torque[k - 1][a] + coupling * w[b] * w[c]) / value;
    const double e = omega[k][a] - w[a] - wdot * dt;
    s += e * e;
  }
  return -s / (2.0 * delta * delta * dt);
}

namespace detail {
/// Closed form for one inertia axis; nullopt when the data carry no excitation.
inline std::optional<double> inertia_axis(int a, std::span<const Vec3> omega,
                                          std::span<const Vec3> torque, const Vec3& previous,
                                          double dt) {
  const int b = (a + 1) % 3, c = (a + 2) % 3;
  const double coupling = previous[b] - previous[c];
  double num = 0.0, den = 0.0, scale = 0.0;
  for (std::size_t k = 1; k < omega.size(); ++k) {
    const Vec3& w = omega[k - 1];
    const double mx = torque[k - 1][a];
    const double ww = w[b] * w[c];
    num += (mx * mx + 2.0 * coupling * mx * ww + coupling * coupling * ww * ww) * dt;
    const double term = (omega[k][a] - w[a]) * (mx + coupling * ww);
    den += term;
    scale += std::abs(term);
  }
  if (degenerate_ratio(num, den, scale)) return std::nullopt;
  return num / den;
}
}  // namespace detail

/// One Jacobi sweep of the three inertia closed forms. Axis a uses the
/// previous values of the other two: with (a, b, c) cyclic,
/// I_a = sum (M_a + (I_b - I_c) w_b w_c)^2 dt / sum dw_a (M_a + (I_b - I_c) w_b w_c).
/// Throws DegenerateExcitationError naming the first degenerate axis.
inline Vec3 m_step_inertia(std::span<const Vec3> omega, std::span<const Vec3> torque,
                           const Vec3& previous, double dt) {
  if (omega.size() < 2) throw Error("m_step_inertia: need at least two samples");
  if (torque.size() + 1 < omega.size()) throw Error("m_step_inertia: sequences are not aligned");
  Vec3 out;
  for (int a = 0; a < 3; ++a) {
    const auto v = detail::inertia_axis(a, omega, torque, previous, dt);
    if (!v)
      throw DegenerateExcitationError("m_step_inertia: no excitation on axis " + std::to_string(a), a);
    out[a] = *v;
  }
  return out;
}

/// Outcome of one guarded M-step: components that came out non-positive,
/// non-finite or degenerate keep their previous value.
struct MStepResult {
  ThetaEstimate theta;
  bool mass_retained = false;
  bool inertia_retained[3] = {false, false, false};

  bool any_retained() const {
    return mass_retained || inertia_retained[0] || inertia_retained[1] || inertia_retained[2];
  }
};

inline MStepResult m_step(const std::vector<GaussianBelief>& smoothed,
                          std::span<const ControlInput> controls, const ThetaEstimate& previous,
                          double dt, double gravity) {
  const std::size_t n = smoothed.size();
  std::vector<double> vz(n), r(n), thrust(n);
  std::vector<Vec3> omega(n), torque(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& x = smoothed[k].mean;
    vz[k] = x[block::kVelocity + 2];
    r[k] = std::cos(x[block::kEuler]) * std::cos(x[block::kEuler + 1]);
    omega[k] = body_rate(x);
    if (k + 1 < n) {
      thrust[k] = controls[k].thrust;
      torque[k] = controls[k].torque;
    } else {
      thrust[k] = 0.0;
      torque[k].setZero();
    }
  }

  MStepResult res;
  res.theta = previous;
  res.theta.iteration = previous.iteration + 1;

  try {
    const double m = m_step_mass(vz, thrust, r, dt, gravity);
    if (m > 0.0 && std::isfinite(m))
      res.theta.mass = m;
    else
      res.mass_retained = true;
  } catch (const DegenerateExcitationError&) {
    res.mass_retained = true;
  }

  // Per-axis guard: a degenerate axis keeps its value, the others still update.
  for (int a = 0; a < 3; ++a) {
    const auto v = detail::inertia_axis(a, omega, torque, previous.inertia, dt);
    if (v && *v > 0.0 && std::isfinite(*v))
      res.theta.inertia[a] = *v;
    else
      res.inertia_retained[a] = true;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Drivers

struct TraceEntry {
  int iteration = 0;
  long sim_step = -1;  // online: simulation step of the tick; offline: -1
  double mass = 0.0;
  Vec3 inertia = Vec3::Zero();
  bool guarded = false;
  std::size_t window = 0;  // observations the E-step consumed
};

struct EstimateTrace {
  std::vector<TraceEntry> entries;
  bool converged = false;

  const TraceEntry& final() const {
    if (entries.empty()) throw Error("EstimateTrace: empty trace");
    return entries.back();
  }
  ThetaEstimate final_theta() const {
    const auto& e = final();
    return {e.mass, e.inertia, e.iteration};
  }
};

inline bool relative_change_below(const ThetaEstimate& a, const ThetaEstimate& b, double tol) {
  auto rel = [](double x, double y) { return std::abs(x - y) / std::max(std::abs(y), 1e-300); };
  if (rel(a.mass, b.mass) >= tol) return false;
  for (int i = 0; i < 3; ++i)
    if (rel(a.inertia[i], b.inertia[i]) >= tol) return false;
  return true;
}

/// Offline EM: alternate the E-step on the full record with the guarded
/// M-step until every component changes by less than the relative tolerance.
/// Entry 0 of the trace is theta0.
inline EstimateTrace em_offline(const EmData& data, const ThetaEstimate& theta0, const EmConfig& cfg) {
  cfg.validate();
  if (!theta0.positive()) throw Error("em_offline: theta0 must be strictly positive");
  EstimateTrace trace;
  trace.entries.push_back({0, -1, theta0.mass, theta0.inertia, false, 0});
  ThetaEstimate theta = theta0;
  theta.iteration = 0;
  for (int it = 1; it <= cfg.max_iterations; ++it) {
    const auto smoothed = e_step(data, theta, cfg);
    const auto res = m_step(smoothed, data.controls, theta, cfg.filter.dt, data.gravity);
    const bool done = relative_change_below(res.theta, theta, cfg.tolerance);
    theta = res.theta;
    theta.iteration = it;
    trace.entries.push_back({it, -1, theta.mass, theta.inertia, res.any_retained(), data.size()});
    if (done) {
      trace.converged = true;
      break;
    }
  }
  return trace;
}

struct OnlineTickResult {
  ThetaEstimate theta;
  bool guarded = false;
};

/// One E-step plus one M-step on a window, warm-started from the previous
/// estimate. Degenerate or invalid components keep their previous values.
inline OnlineTickResult em_online_tick(const EmData& window, const ThetaEstimate& previous,
                                       const EmConfig& cfg) {
  if (window.size() < 2) throw Error("em_online_tick: window needs at least two observations");
  const auto smoothed = e_step(window, previous, cfg);
  const auto res = m_step(smoothed, window.controls, previous, cfg.filter.dt, window.gravity);
  return {res.theta, res.any_retained()};
}

}  // namespace quadem
