#pragma once

#include "quadem/types.hpp"

#include <optional>
#include <random>
#include <string_view>

namespace quadem {

/// A: position + world acceleration + body rate.
/// B: full 12-dim state.
/// C: position + velocity + body rate (no Euler angles).
enum class SensorKind { A, B, C };

inline constexpr std::string_view to_string(SensorKind k) {
  switch (k) {
    case SensorKind::A: return "A";
    case SensorKind::B: return "B";
    case SensorKind::C: return "C";
  }
  return "?";
}

inline constexpr int observation_dim(SensorKind k) { return k == SensorKind::B ? 12 : 9; }

/// Additive white-noise standard deviations per channel family.
struct SensorNoiseSpec {
  double position = 0.02;      // m
  double velocity = 0.02;      // m/s
  double acceleration = 0.02;  // m/s^2
  double euler = 0.02;         // rad
  double rate = 0.02;          // rad/s

  static SensorNoiseSpec uniform(double sigma) { return {sigma, sigma, sigma, sigma, sigma}; }

  void validate() const {
    if (!(position >= 0.0) || !(velocity >= 0.0) || !(acceleration >= 0.0) || !(euler >= 0.0) ||
        !(rate >= 0.0))
      throw ConfigError("sensor_noise standard deviations must be >= 0");
  }
};

struct Observation {
  SensorKind kind = SensorKind::B;
  Eigen::VectorXd values;
  long step = 0;
};

class MissingAccelerationError : public Error {
 public:
  MissingAccelerationError() : Error("sensor A needs the true world-frame acceleration") {}
};

namespace detail {
template <typename Rng>
Vec3 noisy(const Vec3& v, double sigma, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec3 out;
  for (int i = 0; i < 3; ++i) out[i] = v[i] + sigma * normal(rng);
  return out;
}
}  // namespace detail

/// Sample one observation. For kind A, `true_accel` is the world-frame
/// acceleration the vehicle actually experienced (gravity included).
template <typename Rng>
Observation observe(SensorKind kind, const StateVector12& x, const std::optional<Vec3>& true_accel,
                    const SensorNoiseSpec& noise, Rng& rng, long step = 0) {
  Observation obs;
  obs.kind = kind;
  obs.step = step;
  obs.values.resize(observation_dim(kind));
  switch (kind) {
    case SensorKind::A:
      if (!true_accel) throw MissingAccelerationError();
      obs.values << detail::noisy(position(x), noise.position, rng),
          detail::noisy(*true_accel, noise.acceleration, rng),
          detail::noisy(body_rate(x), noise.rate, rng);
      break;
    case SensorKind::B:
      obs.values << detail::noisy(position(x), noise.position, rng),
          detail::noisy(velocity(x), noise.velocity, rng),
          detail::noisy(euler(x), noise.euler, rng), detail::noisy(body_rate(x), noise.rate, rng);
      break;
    case SensorKind::C:
      obs.values << detail::noisy(position(x), noise.position, rng),
          detail::noisy(velocity(x), noise.velocity, rng),
          detail::noisy(body_rate(x), noise.rate, rng);
      break;
  }
  return obs;
}

/// Diagonal selector H (12x12) of the state channels each sensor measures.
/// Sensor A's accelerometer is a prediction input, not a measurement row.
inline Mat12 measurement_matrix(SensorKind kind) {
  Vec12 d = Vec12::Ones();
  switch (kind) {
    case SensorKind::A:
      d.segment<6>(block::kVelocity).setZero();
      break;
    case SensorKind::B:
      break;
    case SensorKind::C:
      d.segment<3>(block::kEuler).setZero();
      break;
  }
  return d.asDiagonal();
}

/// Observation laid out on the 12-dim state grid, zeros where H has no row.
inline Vec12 measurement_vector(const Observation& obs) {
  Vec12 y = Vec12::Zero();
  switch (obs.kind) {
    case SensorKind::A:
      y.segment<3>(block::kPosition) = obs.values.segment<3>(0);
      y.segment<3>(block::kRate) = obs.values.segment<3>(6);
      break;
    case SensorKind::B:
      y = obs.values;
      break;
    case SensorKind::C:
      y.segment<6>(0) = obs.values.segment<6>(0);
      y.segment<3>(block::kRate) = obs.values.segment<3>(6);
      break;
  }
  return y;
}

/// Accelerometer reading of a sensor-A observation.
inline Vec3 accelerometer(const Observation& obs) {
  if (obs.kind != SensorKind::A) throw Error("accelerometer(): only sensor A measures acceleration");
  return obs.values.segment<3>(3);
}

/// Measurement noise covariance on the 12-dim grid (entries on unmeasured rows are
/// unused by the filter but kept positive).
inline Mat12 measurement_covariance(const SensorNoiseSpec& n) {
  Vec12 d;
  d << Vec3::Constant(n.position * n.position), Vec3::Constant(n.velocity * n.velocity),
      Vec3::Constant(n.euler * n.euler), Vec3::Constant(n.rate * n.rate);
  return d.asDiagonal();
}

}  // namespace quadem
