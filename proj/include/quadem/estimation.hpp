#pragma once

#include "quadem/dynamics.hpp"
#include "quadem/types.hpp"

#include <numbers>
#include <vector>

namespace quadem {

template <int N>
using VecN = Eigen::Matrix<double, N, 1>;
template <int N>
using MatN = Eigen::Matrix<double, N, N>;

/// Gaussian posterior/prior: mean and symmetric PSD covariance.
template <int N>
struct Belief {
  VecN<N> mean = VecN<N>::Zero();
  MatN<N> cov = MatN<N>::Identity();
};

using GaussianBelief = Belief<12>;

/// One-step prediction plus the transition Jacobian that produced it.
/// The smoother needs both.
template <int N>
struct Prediction {
  Belief<N> belief;
  MatN<N> jacobian = MatN<N>::Identity();
};

struct FilterConfig {
  Mat12 Q = Mat12::Identity() * 0.0707;
  Mat12 R = Mat12::Identity() * 0.00707;
  Mat12 P0 = Mat12::Identity();
  double dt = 0.01;

  /// Q0, R0, P0 of the parameter-estimation filter.
  static FilterConfig identification_defaults(double dt = 0.01) {
    FilterConfig c;
    c.dt = dt;
    return c;
  }

  void validate() const;
};

namespace detail {

template <int N>
void symmetrize(MatN<N>& m) {
  m = 0.5 * (m + m.transpose()).eval();
}

template <int N>
bool is_symmetric_psd(const MatN<N>& m, double tol = 1e-9) {
  if (!m.allFinite()) return false;
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > tol * std::max(1.0, m.cwiseAbs().maxCoeff()))
    return false;
  Eigen::SelfAdjointEigenSolver<MatN<N>> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff() >= -tol;
}

template <int N>
void check_covariance(const MatN<N>& p, const char* where) {
  if (!p.allFinite()) throw NumericalError(std::string(where) + ": non-finite covariance");
  for (int i = 0; i < N; ++i) {
    if (p(i, i) < -1e-9) throw NumericalError(std::string(where) + ": covariance lost positivity");
  }
}

}  // namespace detail

inline void FilterConfig::validate() const {
  if (!(dt > 0.0)) throw ConfigError("filter.dt must be > 0");
  if (!detail::is_symmetric_psd<12>(Q)) throw ConfigError("filter.Q must be symmetric PSD");
  if (!detail::is_symmetric_psd<12>(R)) throw ConfigError("filter.R must be symmetric PSD");
  if (!detail::is_symmetric_psd<12>(P0)) throw ConfigError("filter.P0 must be symmetric PSD");
}

/// Exogenous inputs of the discrete prediction model: the acceleration that
/// drives the velocity rows and the angular acceleration that drives the rate
/// rows (zero gives the constant-rate model).
struct PredictionInput {
  Vec3 accel = Vec3::Zero();
  Vec3 angular_accel = Vec3::Zero();
};

/// r += dt v;  v += dt f;  theta += dt E^-1(theta) omega;  omega += dt alpha.
inline StateVector12 propagate_mean(const StateVector12& x, const PredictionInput& in, double dt) {
  StateVector12 next = x;
  position(next) += dt * velocity(x);
  velocity(next) += dt * in.accel;
  euler(next) += dt * (euler_rate_matrix_inv(euler(x)) * body_rate(x));
  body_rate(next) += dt * in.angular_accel;
  return next;
}

/// Transition Jacobian of propagate_mean with the inputs held fixed.
inline Mat12 prediction_jacobian(const StateVector12& x, double dt) {
  const double phi = x[block::kEuler], theta = x[block::kEuler + 1];
  check_gimbal(theta);
  const double wy = x[block::kRate + 1], wz = x[block::kRate + 2];
  const double sph = std::sin(phi), cph = std::cos(phi);
  const double cth = std::cos(theta), tth = std::tan(theta), sth = std::sin(theta);
  const double sec2 = 1.0 / (cth * cth);

  Mat12 f = Mat12::Identity();
  f.block<3, 3>(block::kPosition, block::kVelocity) = Mat3::Identity() * dt;

  constexpr int e = block::kEuler, w = block::kRate;
  // roll row
  f(e, e) = 1.0 + dt * (cph * tth * wy - sph * tth * wz);
  f(e, e + 1) = dt * (sph * sec2 * wy + cph * sec2 * wz);
  f(e, w) = dt;
  f(e, w + 1) = dt * sph * tth;
  f(e, w + 2) = dt * cph * tth;
  // pitch row
  f(e + 1, e) = dt * (-sph * wy - cph * wz);
  f(e + 1, w + 1) = dt * cph;
  f(e + 1, w + 2) = -sph * dt;
  // yaw row
  f(e + 2, e) = dt * (cph / cth * wy - sph / cth * wz);
  f(e + 2, e + 1) = dt * (sph * sth * sec2 * wy + cph * sth * sec2 * wz);
  f(e + 2, w + 1) = dt * sph / cth;
  f(e + 2, w + 2) = dt * cph / cth;
  return f;
}

/// EKF time update: mean through propagate_mean, covariance Phi P Phi^T + Q.
inline Prediction<12> predict(const GaussianBelief& belief, const PredictionInput& in,
                              const FilterConfig& cfg) {
  Prediction<12> out;
  out.jacobian = prediction_jacobian(belief.mean, cfg.dt);
  out.belief.mean = propagate_mean(belief.mean, in, cfg.dt);
  out.belief.cov = out.jacobian * belief.cov * out.jacobian.transpose() + cfg.Q;
  detail::symmetrize<12>(out.belief.cov);
  if (!out.belief.mean.allFinite()) throw NumericalError("predict: non-finite mean");
  detail::check_covariance<12>(out.belief.cov, "predict");
  return out;
}

/// Time update for a linear model x' = F x + b.
template <int N>
Prediction<N> predict_linear(const Belief<N>& belief, const MatN<N>& transition,
                             const VecN<N>& offset, const MatN<N>& q) {
  Prediction<N> out;
  out.jacobian = transition;
  out.belief.mean = transition * belief.mean + offset;
  out.belief.cov = transition * belief.cov * transition.transpose() + q;
  detail::symmetrize<N>(out.belief.cov);
  return out;
}

namespace detail {

template <int N>
using ActiveRows = Eigen::Matrix<double, Eigen::Dynamic, N, Eigen::RowMajor, N, N>;
template <int N>
using ActiveSquare = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, N, N>;
template <int N>
using ActiveVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, N, 1>;

/// Rows of H that measure something, with the matching slices of y and R.
template <int N>
struct ActiveMeasurement {
  ActiveRows<N> h;
  ActiveSquare<N> r;
  ActiveVec<N> y;
};

template <int N>
ActiveMeasurement<N> active_rows(const VecN<N>& y, const MatN<N>& h, const MatN<N>& r) {
  int idx[N];
  int m = 0;
  for (int i = 0; i < N; ++i) {
    if (h.row(i).cwiseAbs().maxCoeff() > 0.0) idx[m++] = i;
  }
  ActiveMeasurement<N> a;
  a.h.resize(m, N);
  a.r.resize(m, m);
  a.y.resize(m);
  for (int i = 0; i < m; ++i) {
    a.h.row(i) = h.row(idx[i]);
    a.y[i] = y[idx[i]];
    for (int j = 0; j < m; ++j) a.r(i, j) = r(idx[i], idx[j]);
  }
  return a;
}

}  // namespace detail

/// EKF measurement update with gain K = P H^T (H P H^T + R)^-1, Joseph-form
/// covariance and symmetrization. Rows of H that are entirely zero carry no
/// measurement and are skipped, so R only needs to be invertible on the rows
/// that are measured.
template <int N>
Belief<N> correct(const Belief<N>& prior, const VecN<N>& y, const MatN<N>& h, const MatN<N>& r) {
  const auto a = detail::active_rows<N>(y, h, r);
  if (a.h.rows() == 0) return prior;

  const detail::ActiveSquare<N> s = a.h * prior.cov * a.h.transpose() + a.r;
  Eigen::LDLT<detail::ActiveSquare<N>> ldlt(s);
  const double scale = std::max(1e-300, s.cwiseAbs().maxCoeff());
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= 1e-14 * scale)
    throw SingularMatrixError("correct: innovation covariance is singular");

  // K^T = S^-1 H P  (P, S symmetric)
  const Eigen::Matrix<double, Eigen::Dynamic, N, 0, N, N> kt = ldlt.solve(a.h * prior.cov);
  const Eigen::Matrix<double, N, Eigen::Dynamic, 0, N, N> k = kt.transpose();

  Belief<N> post;
  post.mean = prior.mean + k * (a.y - a.h * prior.mean);
  const MatN<N> ikh = MatN<N>::Identity() - k * a.h;
  post.cov = ikh * prior.cov * ikh.transpose() + k * a.r * k.transpose();
  detail::symmetrize<N>(post.cov);
  return post;
}

inline GaussianBelief correct(const GaussianBelief& prior, const Vec12& y, const Mat12& h,
                              const FilterConfig& cfg) {
  auto post = correct<12>(prior, y, h, cfg.R);
  detail::check_covariance<12>(post.cov, "correct");
  return post;
}

/// log N(y_active; H mean, H P H^T + R) of the prior predictive; summed over a
/// filter run this is the exact marginal log-likelihood for linear-Gaussian models.
template <int N>
double innovation_log_likelihood(const Belief<N>& prior, const VecN<N>& y, const MatN<N>& h,
                                 const MatN<N>& r) {
  const auto a = detail::active_rows<N>(y, h, r);
  if (a.h.rows() == 0) return 0.0;
  const detail::ActiveSquare<N> s = a.h * prior.cov * a.h.transpose() + a.r;
  Eigen::LLT<detail::ActiveSquare<N>> llt(s);
  if (llt.info() != Eigen::Success)
    throw SingularMatrixError("innovation_log_likelihood: singular innovation covariance");
  const detail::ActiveVec<N> nu = a.y - a.h * prior.mean;
  const detail::ActiveVec<N> white = llt.matrixL().solve(nu);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (white.squaredNorm() + logdet +
                 static_cast<double>(a.h.rows()) * std::log(2.0 * std::numbers::pi));
}

/// Rauch-Tung-Striebel backward pass.
///
/// `filtered[k]` is the posterior at step k; `predictions[k]` is the one-step
/// prediction from `filtered[k]` into step k+1 together with its Jacobian, so
/// predictions.size() == filtered.size() - 1. The smoother gain is
/// C_k = P_k Phi_k^T Pp_{k+1}^-1. The last smoothed belief equals the last
/// filtered one.
template <int N>
std::vector<Belief<N>> rts_smooth(const std::vector<Belief<N>>& filtered,
                                  const std::vector<Prediction<N>>& predictions) {
  if (filtered.empty()) throw Error("rts_smooth: empty sequence");
  if (predictions.size() + 1 != filtered.size())
    throw Error("rts_smooth: predictions must have one fewer entry than filtered");

  std::vector<Belief<N>> smoothed(filtered.size());
  smoothed.back() = filtered.back();
  for (int k = static_cast<int>(filtered.size()) - 2; k >= 0; --k) {
    const auto& f = filtered[k];
    const auto& p = predictions[k];
    Eigen::LLT<MatN<N>> llt(p.belief.cov);
    MatN<N> gain;
    if (llt.info() == Eigen::Success) {
      gain = llt.solve(p.jacobian * f.cov).transpose();
    } else {
      Eigen::FullPivLU<MatN<N>> lu(p.belief.cov);
      if (!lu.isInvertible()) throw SingularMatrixError("rts_smooth: predicted covariance is singular");
      gain = lu.solve(p.jacobian * f.cov).transpose();
    }
    auto& s = smoothed[k];
    s.mean = f.mean + gain * (smoothed[k + 1].mean - p.belief.mean);
    s.cov = f.cov + gain * (smoothed[k + 1].cov - p.belief.cov) * gain.transpose();
    detail::symmetrize<N>(s.cov);
  }
  return smoothed;
}

/// Recursive filter used in flight: predict with sensor/commanded inputs,
/// correct with the zero-padded measurement.
class ExtendedKalmanFilter {
 public:
  ExtendedKalmanFilter(const GaussianBelief& initial, FilterConfig cfg)
      : belief_(initial), cfg_(std::move(cfg)) {}

  const GaussianBelief& belief() const { return belief_; }
  const FilterConfig& config() const { return cfg_; }
  const Prediction<12>& last_prediction() const { return last_prediction_; }

  const Prediction<12>& predict(const PredictionInput& in) {
    last_prediction_ = quadem::predict(belief_, in, cfg_);
    belief_ = last_prediction_.belief;
    return last_prediction_;
  }

  const GaussianBelief& correct(const Vec12& y, const Mat12& h) {
    belief_ = quadem::correct(belief_, y, h, cfg_);
    return belief_;
  }

 private:
  GaussianBelief belief_;
  FilterConfig cfg_;
  Prediction<12> last_prediction_;
};

}  // namespace quadem
