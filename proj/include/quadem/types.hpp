#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace quadem {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec12 = Eigen::Matrix<double, 12, 1>;
using Mat12 = Eigen::Matrix<double, 12, 12>;

/// Rigid-body state [r, v, theta_B, omega_B]:
/// position (m), velocity (m/s), Euler angles roll/pitch/yaw (rad),
/// body angular velocity (rad/s).
using StateVector12 = Vec12;

namespace block {
inline constexpr int kPosition = 0;
inline constexpr int kVelocity = 3;
inline constexpr int kEuler = 6;
inline constexpr int kRate = 9;
}  // namespace block

template <typename Derived>
auto position(Eigen::MatrixBase<Derived>& x) { return x.template segment<3>(block::kPosition); }
template <typename Derived>
auto position(const Eigen::MatrixBase<Derived>& x) { return x.template segment<3>(block::kPosition); }
template <typename Derived>
auto velocity(Eigen::MatrixBase<Derived>& x) { return x.template segment<3>(block::kVelocity); }
template <typename Derived>
auto velocity(const Eigen::MatrixBase<Derived>& x) { return x.template segment<3>(block::kVelocity); }
template <typename Derived>
auto euler(Eigen::MatrixBase<Derived>& x) { return x.template segment<3>(block::kEuler); }
template <typename Derived>
auto euler(const Eigen::MatrixBase<Derived>& x) { return x.template segment<3>(block::kEuler); }
template <typename Derived>
auto body_rate(Eigen::MatrixBase<Derived>& x) { return x.template segment<3>(block::kRate); }
template <typename Derived>
auto body_rate(const Eigen::MatrixBase<Derived>& x) { return x.template segment<3>(block::kRate); }

inline StateVector12 make_state(const Vec3& r, const Vec3& v, const Vec3& theta, const Vec3& omega) {
  StateVector12 x;
  x << r, v, theta, omega;
  return x;
}

/// Collective thrust along body +z (N) and body torque (N m).
struct ControlInput {
  double thrust = 0.0;
  Vec3 torque = Vec3::Zero();
};

// ---------------------------------------------------------------------------
// Errors. Everything thrown by the library derives from quadem::Error.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Euler-rate matrix is singular (|cos(pitch)| below the guard).
class GimbalLockError : public Error {
 public:
  using Error::Error;
};

/// A state, covariance or result left the finite / PSD domain.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A matrix that must be inverted (innovation or predicted covariance) is singular.
class SingularMatrixError : public Error {
 public:
  using Error::Error;
};

/// A closed-form ratio has a vanishing denominator: the data carry no excitation.
class DegenerateExcitationError : public Error {
 public:
  DegenerateExcitationError(const std::string& what, int axis = -1) : Error(what), axis_(axis) {}
  /// -1 for mass, 0/1/2 for Ixx/Iyy/Izz.
  int axis() const noexcept { return axis_; }

 private:
  int axis_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

inline constexpr double kGimbalGuard = 1e-6;

/// Physical parameters of the vehicle. Arm length is carried for completeness;
/// the plant takes thrust and torque directly, so nothing consumes it.
struct QuadParams {
  double mass = 0.18;
  Vec3 inertia = Vec3(2.5e-4, 3.1e-4, 2e-4);
  double gravity = 9.81;
  double arm_length = 0.086;

  Mat3 inertia_matrix() const { return inertia.asDiagonal(); }

  void validate() const {
    if (!(mass > 0.0) || !std::isfinite(mass)) throw ConfigError("params.mass must be > 0");
    for (int i = 0; i < 3; ++i) {
      if (!(inertia[i] > 0.0) || !std::isfinite(inertia[i]))
        throw ConfigError("params.inertia components must be > 0");
    }
    if (!(gravity > 0.0) || !std::isfinite(gravity)) throw ConfigError("params.gravity must be > 0");
  }
};

inline bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) { return m.allFinite(); }

}  // namespace quadem
