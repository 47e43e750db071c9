#pragma once

#include "quadem/dynamics.hpp"
#include "quadem/types.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <string>

namespace quadem {

using Vec6Ctrl = Eigen::Matrix<double, 6, 1>;
using GainMatrix = Eigen::Matrix<double, 6, 12>;

class NotStabilizableError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// Thrust direction undefined: ||[ax, ay, az + g]|| vanishes.
class DegenerateThrustError : public Error {
 public:
  using Error::Error;
};

/// Heading axis parallel to the thrust axis, or cos(pitch) cos(roll) ~ 0.
class AttitudeSingularityError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Linear-quadratic regulator

/// Constant small-angle model used for gain design. States are the usual 12;
/// inputs are (ua_x, ua_y, ua_z, wdot_x, wdot_y, wdot_z).
struct LinearModel {
  Mat12 A;
  Eigen::Matrix<double, 12, 6> B;
};

inline LinearModel linearized_ab() {
  LinearModel m;
  m.A.setZero();
  m.A.block<3, 3>(block::kPosition, block::kVelocity).setIdentity();
  m.A.block<3, 3>(block::kEuler, block::kRate).setIdentity();
  m.B.setZero();
  m.B.block<3, 3>(block::kVelocity, 0).setIdentity();
  m.B.block<3, 3>(block::kRate, 3).setIdentity();
  return m;
}

struct CareOptions {
  int max_iterations = 100;
  double tolerance = 1e-8;
};

struct CareSolution {
  Eigen::MatrixXd P;
  Eigen::MatrixXd K;
  double residual = 0.0;
  int iterations = 0;
};

/// Solves A X + X A^T = C for X by vectorisation. Only meant for the small
/// systems of this library (n <= ~20).
inline Eigen::MatrixXd solve_lyapunov(const Eigen::MatrixXd& a, const Eigen::MatrixXd& c) {
  const Eigen::Index n = a.rows();
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd m(n * n, n * n);
  m.setZero();
  // vec(A X) = (I (x) A) vec X ; vec(X A^T) = (A (x) I) vec X
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      m.block(i * n, j * n, n, n) += a(i, j) * id;
      if (i == j) m.block(i * n, i * n, n, n) += a;
    }
  }
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(m);
  const Eigen::VectorXd x = lu.solve(Eigen::Map<const Eigen::VectorXd>(c.data(), n * n));
  Eigen::MatrixXd out = Eigen::Map<const Eigen::MatrixXd>(x.data(), n, n);
  return 0.5 * (out + out.transpose());
}

inline double care_residual(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                            const Eigen::MatrixXd& q, const Eigen::MatrixXd& r,
                            const Eigen::MatrixXd& p) {
  const Eigen::MatrixXd rinv_bt = r.ldlt().solve(b.transpose());
  return (a.transpose() * p + p * a - p * b * rinv_bt * p + q).norm();
}

inline bool is_hurwitz(const Eigen::MatrixXd& m) {
  return m.eigenvalues().real().maxCoeff() < 0.0;
}

/// Stabilizing solution of A^T P + P A - P B R^-1 B^T P + Q = 0 by
/// Newton-Kleinman iteration. The initial gain is zero when A is already
/// Hurwitz, otherwise it comes from the Bass shift: with beta > ||A||,
/// (A + beta I) Z + Z (A + beta I)^T = 2 B B^T gives K0 = B^T Z^-1.
inline CareSolution solve_care(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                               const Eigen::MatrixXd& q, const Eigen::MatrixXd& r,
                               const CareOptions& opts = {}) {
  const Eigen::Index n = a.rows(), mi = b.cols();
  if (a.cols() != n || b.rows() != n || q.rows() != n || q.cols() != n || r.rows() != mi ||
      r.cols() != mi)
    throw Error("solve_care: inconsistent matrix shapes");
  Eigen::LLT<Eigen::MatrixXd> rllt(r);
  if (rllt.info() != Eigen::Success) throw Error("solve_care: input weight must be positive definite");

  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(mi, n);
  if (!is_hurwitz(a)) {
    const double beta = a.norm() + 1.0;
    const Eigen::MatrixXd shifted = a + beta * Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd z = solve_lyapunov(shifted, 2.0 * b * b.transpose());
    Eigen::LLT<Eigen::MatrixXd> zllt(z);
    const double zscale = std::max(1.0, z.cwiseAbs().maxCoeff());
    if (zllt.info() != Eigen::Success ||
        zllt.matrixL().toDenseMatrix().diagonal().minCoeff() < 1e-10 * std::sqrt(zscale))
      throw NotStabilizableError("solve_care: (A, B) is not stabilizable");
    k = b.transpose() * zllt.solve(Eigen::MatrixXd::Identity(n, n));
    if (!is_hurwitz(a - b * k)) throw NotStabilizableError("solve_care: no stabilizing initial gain");
  }

  CareSolution sol;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    const Eigen::MatrixXd ac = a - b * k;
    // Ac^T P + P Ac = -(Q + K^T R K)
    const Eigen::MatrixXd p = solve_lyapunov(ac.transpose(), -(q + k.transpose() * r * k));
    if (!p.allFinite()) throw ConvergenceError("solve_care: non-finite iterate");
    const Eigen::MatrixXd k_next = rllt.solve(b.transpose() * p);
    const double step = (k_next - k).norm();
    k = k_next;
    sol.P = p;
    sol.iterations = it;
    sol.residual = care_residual(a, b, q, r, p);
    if (sol.residual < opts.tolerance && step <= 1e-12 * std::max(1.0, k.norm())) break;
    if (sol.residual < opts.tolerance * 1e-3) break;
  }
  sol.K = k;
  if (!(sol.residual < opts.tolerance))
    throw ConvergenceError("solve_care: residual " + std::to_string(sol.residual) +
                           " above tolerance after " + std::to_string(sol.iterations) +
                           " iterations");
  if (!is_hurwitz(a - b * sol.K)) throw ConvergenceError("solve_care: closed loop is not Hurwitz");
  return sol;
}

struct LqrWeights {
  Vec12 state = Vec12::Ones();
  Vec6Ctrl input = Vec6Ctrl::Ones();

  void validate() const {
    if (!(state.array() >= 0.0).all()) throw ConfigError("lqr.state_weights must be >= 0");
    if (!(input.array() > 0.0).all()) throw ConfigError("lqr.input_weights must be > 0");
  }
};

inline GainMatrix lqr_gain(const LqrWeights& w) {
  const auto lin = linearized_ab();
  const Eigen::MatrixXd q = w.state.asDiagonal();
  const Eigen::MatrixXd r = w.input.asDiagonal();
  return solve_care(lin.A, lin.B, q, r).K;
}

// ---------------------------------------------------------------------------
// Differential-flatness reference

struct ReferenceState {
  Vec3 pos = Vec3::Zero();
  Vec3 vel = Vec3::Zero();
  Vec3 theta = Vec3::Zero();
  Vec3 omega = Vec3::Zero();

  StateVector12 vector() const { return make_state(pos, vel, theta, omega); }
};

struct FlatInput {
  Vec3 accel_ref = Vec3::Zero();
  double yaw_ref = 0.0;
  Vec3 pos_ref = Vec3::Zero();
  Vec3 vel_ref = Vec3::Zero();
};

struct FlatOutput {
  ReferenceState ref;
  Mat3 attitude = Mat3::Identity();  // [x_B y_B z_B]
  double thrust_accel = 0.0;         // ||t||; the thrust is mass * ||t||

  double thrust(double mass) const { return mass * thrust_accel; }
};

/// Reference attitude from a desired acceleration and yaw, and the rate
/// command omega_ref = E(theta) * (-k_theta (theta - theta_ref)).
inline FlatOutput flat_reference(const FlatInput& fi, const Vec3& current_theta,
                                 double gravity = 9.81, double k_theta = 40.0) {
  constexpr double eps = 1e-9;
  const Vec3 t(fi.accel_ref[0], fi.accel_ref[1], fi.accel_ref[2] + gravity);
  const double tn = t.norm();
  if (!(tn > eps)) throw DegenerateThrustError("flat_reference: thrust direction undefined");
  const Vec3 zb = t / tn;
  const double cps = std::cos(fi.yaw_ref), sps = std::sin(fi.yaw_ref);
  const Vec3 yc(-sps, cps, 0.0);
  const Vec3 xb_raw = yc.cross(zb);
  if (!(xb_raw.norm() > eps))
    throw AttitudeSingularityError("flat_reference: heading axis parallel to thrust");
  const Vec3 xb = xb_raw.normalized();
  const Vec3 yb = zb.cross(xb).normalized();

  FlatOutput out;
  out.attitude.col(0) = xb;
  out.attitude.col(1) = yb;
  out.attitude.col(2) = zb;
  out.thrust_accel = tn;

  const Mat3& r = out.attitude;
  const double pitch = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
  const double cth = std::cos(pitch);
  if (std::abs(cth) < kGimbalGuard)
    throw AttitudeSingularityError("flat_reference: reference pitch at +-pi/2");
  const double roll = std::atan2(r(2, 1) / cth, r(2, 2) / cth);
  const double yaw = std::atan2(r(1, 0) / cth, r(0, 0) / cth);

  out.ref.pos = fi.pos_ref;
  out.ref.vel = fi.vel_ref;
  out.ref.theta = Vec3(roll, pitch, yaw);
  const Vec3 theta_dot = -k_theta * (current_theta - out.ref.theta);
  out.ref.omega = euler_rate_matrix(current_theta) * theta_dot;
  return out;
}

// ---------------------------------------------------------------------------
// LQG law and actuation recovery

/// u = -K (xhat - x_ref) = [ua; wdot_cmd].
inline Vec6Ctrl lqg_control(const StateVector12& xhat, const ReferenceState& ref, const GainMatrix& k) {
  return -k * (xhat - ref.vector());
}

/// Physical thrust and torque from the virtual input, using the controller's
/// current parameter estimates. Thrust is clamped at zero.
inline ControlInput recover_thrust_torque(const Vec6Ctrl& u, const StateVector12& xhat,
                                          const QuadParams& est) {
  const double phi = xhat[block::kEuler], theta = xhat[block::kEuler + 1];
  const double tilt = std::cos(theta) * std::cos(phi);
  if (std::abs(tilt) < kGimbalGuard)
    throw AttitudeSingularityError("recover_thrust_torque: cos(pitch) cos(roll) ~ 0");
  ControlInput c;
  c.thrust = std::max(0.0, (u[2] + est.gravity) * est.mass / tilt);
  const Vec3 omega = body_rate(xhat);
  const Vec3 wdot = u.tail<3>();
  const Vec3 inertia = est.inertia;
  c.torque = inertia.cwiseProduct(wdot) + omega.cross(inertia.cwiseProduct(omega));
  return c;
}

struct ControllerConfig {
  LqrWeights weights;
  double k_theta = 40.0;
  double yaw_ref = 0.0;
  /// Position targets further than this are pulled in along the line of sight.
  double carrot_distance = 1.0;
  /// Horizontal reference acceleration limit (m/s^2); keeps reference tilt bounded.
  double max_horizontal_accel = 5.0;

  void validate() const {
    weights.validate();
    if (!(k_theta > 0.0)) throw ConfigError("controller.k_theta must be > 0");
    if (!(carrot_distance > 0.0)) throw ConfigError("controller.carrot_distance must be > 0");
    if (!(max_horizontal_accel > 0.0)) throw ConfigError("controller.max_horizontal_accel must be > 0");
  }
};

struct ControlOutput {
  ControlInput input;
  Vec6Ctrl u = Vec6Ctrl::Zero();
  ReferenceState ref;
};

/// Waypoint-tracking LQG controller. The translational rows of the LQR law
/// act on the error to a (clamped) target point and provide the desired
/// acceleration for the flatness reference; the full law then yields the
/// virtual input, converted to thrust/torque with the estimated parameters.
class LqgController {
 public:
  explicit LqgController(ControllerConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    gain_ = lqr_gain(cfg_.weights);
  }
  LqgController(ControllerConfig cfg, const GainMatrix& gain) : cfg_(std::move(cfg)), gain_(gain) {
    cfg_.validate();
  }

  const GainMatrix& gain() const { return gain_; }
  const ControllerConfig& config() const { return cfg_; }

  ControlOutput compute(const StateVector12& xhat, const Vec3& target, const QuadParams& est) const {
    Vec3 to_target = target - position(xhat);
    const double d = to_target.norm();
    if (d > cfg_.carrot_distance) to_target *= cfg_.carrot_distance / d;
    const Vec3 carrot = position(xhat) + to_target;

    StateVector12 trans_err = StateVector12::Zero();
    position(trans_err) = position(xhat) - carrot;
    velocity(trans_err) = velocity(xhat);
    Vec3 accel = (-gain_ * trans_err).head<3>();
    const double h = accel.head<2>().norm();
    if (h > cfg_.max_horizontal_accel) accel.head<2>() *= cfg_.max_horizontal_accel / h;

    FlatInput fi;
    fi.accel_ref = accel;
    fi.yaw_ref = cfg_.yaw_ref;
    fi.pos_ref = carrot;
    fi.vel_ref = Vec3::Zero();
    const FlatOutput flat = flat_reference(fi, euler(xhat), est.gravity, cfg_.k_theta);

    ControlOutput out;
    out.ref = flat.ref;
    out.u = lqg_control(xhat, out.ref, gain_);
    out.input = recover_thrust_torque(out.u, xhat, est);
    return out;
  }

 private:
  ControllerConfig cfg_;
  GainMatrix gain_;
};

}  // namespace quadem
