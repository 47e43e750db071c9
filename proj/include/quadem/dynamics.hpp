#pragma once

#include "quadem/types.hpp"

#include <random>

namespace quadem {

/// Thrust / torque noise injected into the plant, and the integration step.
/// Per-step injected noise is G * n * sqrt(dt), n ~ N(0, diag(sigma^2)).
struct ProcessNoiseSpec {
  double sigma_thrust = 0.01;
  double sigma_torque = 1e-5;
  double dt = 0.01;

  void validate() const {
    if (!(dt > 0.0)) throw ConfigError("process_noise.dt must be > 0");
    if (!(sigma_thrust >= 0.0) || !(sigma_torque >= 0.0))
      throw ConfigError("process_noise sigmas must be >= 0");
  }
};

/// Body-to-earth rotation, ZYX: R = Rz(psi) * Ry(theta) * Rx(phi).
inline Mat3 rotation_body_to_earth(const Vec3& euler_angles) {
  const double cph = std::cos(euler_angles[0]), sph = std::sin(euler_angles[0]);
  const double cth = std::cos(euler_angles[1]), sth = std::sin(euler_angles[1]);
  const double cps = std::cos(euler_angles[2]), sps = std::sin(euler_angles[2]);
  Mat3 r;
  r << cth * cps, sph * sth * cps - cph * sps, cph * sth * cps + sph * sps,
      cth * sps, sph * sth * sps + cph * cps, cph * sth * sps - sph * cps,
      -sth, sph * cth, cph * cth;
  return r;
}

/// Forward Euler-rate matrix E(theta_B): omega_B = E * d(theta_B)/dt.
inline Mat3 euler_rate_matrix(const Vec3& euler_angles) {
  const double cph = std::cos(euler_angles[0]), sph = std::sin(euler_angles[0]);
  const double cth = std::cos(euler_angles[1]), sth = std::sin(euler_angles[1]);
  Mat3 e;
  e << 1.0, 0.0, -sth,
      0.0, cph, cth * sph,
      0.0, -sph, cth * cph;
  return e;
}

inline void check_gimbal(double pitch) {
  if (std::abs(std::cos(pitch)) < kGimbalGuard)
    throw GimbalLockError("Euler-rate matrix singular: |cos(pitch)| < 1e-6");
}

/// Inverse Euler-rate matrix: d(theta_B)/dt = E^-1 * omega_B.
inline Mat3 euler_rate_matrix_inv(const Vec3& euler_angles) {
  check_gimbal(euler_angles[1]);
  const double cph = std::cos(euler_angles[0]), sph = std::sin(euler_angles[0]);
  const double cth = std::cos(euler_angles[1]), tth = std::tan(euler_angles[1]);
  Mat3 e;
  e << 1.0, sph * tth, cph * tth,
      0.0, cph, -sph,
      0.0, sph / cth, cph / cth;
  return e;
}

/// Deterministic drift f(x, u) of the rigid-body model.
inline Vec12 drift(const StateVector12& x, const ControlInput& u, const QuadParams& p) {
  const Vec3 theta = euler(x);
  const Vec3 omega = body_rate(x);
  const Vec3 inertia = p.inertia;

  Vec12 dx;
  position(dx) = velocity(x);
  velocity(dx) = Vec3(0.0, 0.0, -p.gravity) +
                 rotation_body_to_earth(theta) * Vec3(0.0, 0.0, u.thrust / p.mass);
  euler(dx) = euler_rate_matrix_inv(theta) * omega;
  const Vec3 momentum = inertia.cwiseProduct(omega);
  body_rate(dx) = (u.torque - omega.cross(momentum)).cwiseQuotient(inertia);
  return dx;
}

/// Noise input matrix G (12x4): column 0 carries thrust noise, columns 1..3 torque noise.
inline Eigen::Matrix<double, 12, 4> noise_matrix(const StateVector12& x, const QuadParams& p) {
  Eigen::Matrix<double, 12, 4> g = Eigen::Matrix<double, 12, 4>::Zero();
  g.block<3, 1>(block::kVelocity, 0) = rotation_body_to_earth(euler(x)).col(2) / p.mass;
  g.block<3, 3>(block::kRate, 1) = p.inertia.cwiseInverse().asDiagonal();
  return g;
}

/// One Euler-Maruyama step of dx = f dt + G dw. Always consumes four normal
/// draws so that streams stay aligned whether or not the sigmas are zero.
template <typename Rng>
StateVector12 step_sde(const StateVector12& x, const ControlInput& u, const QuadParams& p,
                       const ProcessNoiseSpec& noise, Rng& rng) {
  if (!(noise.dt > 0.0)) throw ConfigError("step_sde: dt must be > 0");
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Vector4d n;
  n[0] = noise.sigma_thrust * normal(rng);
  for (int i = 1; i < 4; ++i) n[i] = noise.sigma_torque * normal(rng);

  StateVector12 next = x + drift(x, u, p) * noise.dt;
  if (noise.sigma_thrust != 0.0 || noise.sigma_torque != 0.0)
    next += noise_matrix(x, p) * n * std::sqrt(noise.dt);
  if (!next.allFinite()) throw NumericalError("step_sde produced a non-finite state");
  return next;
}

/// World-frame acceleration realised over one Euler-Maruyama step from x to next.
inline Vec3 realised_acceleration(const StateVector12& x, const StateVector12& next, double dt) {
  return (velocity(next) - velocity(x)) / dt;
}

}  // namespace quadem
