#include "quadem/sensors.hpp"

#include <gtest/gtest.h>

#include <random>

namespace quadem {
namespace {

StateVector12 sample_state() {
  return make_state(Vec3(1.0, -2.0, 3.0), Vec3(0.1, 0.2, -0.3), Vec3(0.05, -0.1, 0.7),
                    Vec3(0.4, -0.5, 0.6));
}

TEST(Observe, FullStateWithoutNoiseIsExact) {
  std::mt19937_64 rng(1);
  const auto x = sample_state();
  const auto obs = observe(SensorKind::B, x, std::nullopt, SensorNoiseSpec::uniform(0.0), rng, 17);
  EXPECT_EQ(obs.values.size(), 12);
  EXPECT_EQ(Vec12(obs.values), x);
  EXPECT_EQ(obs.step, 17);
}

TEST(Observe, PartialHasNoEulerAngles) {
  std::mt19937_64 rng(1);
  const auto x = sample_state();
  const auto obs = observe(SensorKind::C, x, std::nullopt, SensorNoiseSpec::uniform(0.0), rng);
  ASSERT_EQ(obs.values.size(), 9);
  EXPECT_EQ(obs.values.segment<3>(0), position(x));
  EXPECT_EQ(obs.values.segment<3>(3), velocity(x));
  EXPECT_EQ(obs.values.segment<3>(6), body_rate(x));
  EXPECT_EQ(observation_dim(SensorKind::C), 9);
}

TEST(Observe, SensorARequiresAcceleration) {
  std::mt19937_64 rng(1);
  EXPECT_THROW(observe(SensorKind::A, sample_state(), std::nullopt, SensorNoiseSpec{}, rng),
               MissingAccelerationError);
}

TEST(Observe, SensorAWithoutNoiseReportsAcceleration) {
  std::mt19937_64 rng(1);
  const auto x = sample_state();
  const Vec3 a(0.3, -0.1, -9.5);
  const auto obs = observe(SensorKind::A, x, a, SensorNoiseSpec::uniform(0.0), rng);
  ASSERT_EQ(obs.values.size(), 9);
  EXPECT_EQ(accelerometer(obs), a);
  EXPECT_EQ(obs.values.segment<3>(0), position(x));
  EXPECT_EQ(obs.values.segment<3>(6), body_rate(x));
}

TEST(Observe, SensorAVarianceMatchesFilterNoise) {
  std::mt19937_64 rng(2024);
  const auto noise = SensorNoiseSpec::uniform(0.0841);
  const auto x = sample_state();
  const Vec3 a(0.0, 0.0, -9.81);
  const int n = 100000;
  Eigen::Matrix<double, 9, 1> sum = Eigen::Matrix<double, 9, 1>::Zero(), sq = sum;
  Eigen::Matrix<double, 9, 1> truth;
  truth << position(x), a, body_rate(x);
  for (int i = 0; i < n; ++i) {
    const Eigen::Matrix<double, 9, 1> e = observe(SensorKind::A, x, a, noise, rng).values - truth;
    sum += e;
    sq += e.cwiseProduct(e);
  }
  for (int c = 0; c < 9; ++c) {
    const double mean = sum[c] / n;
    const double var = sq[c] / n - mean * mean;
    EXPECT_NEAR(var, 0.00707, 0.02 * 0.00707) << "channel " << c;
  }
}

TEST(Observe, EveryChannelIsUnbiasedWithSpecifiedSpread) {
  SensorNoiseSpec noise{0.01, 0.02, 0.03, 0.04, 0.05};
  const auto x = sample_state();
  const Vec3 a(0.2, 0.1, -9.0);
  const int n = 20000;
  for (SensorKind kind : {SensorKind::A, SensorKind::B, SensorKind::C}) {
    std::mt19937_64 rng(static_cast<int>(kind) + 10);
    const auto clean = observe(kind, x, a, SensorNoiseSpec::uniform(0.0), rng).values;
    std::vector<double> sigma;
    switch (kind) {
      case SensorKind::A: sigma = {0.01, 0.01, 0.01, 0.03, 0.03, 0.03, 0.05, 0.05, 0.05}; break;
      case SensorKind::B:
        sigma = {0.01, 0.01, 0.01, 0.02, 0.02, 0.02, 0.04, 0.04, 0.04, 0.05, 0.05, 0.05};
        break;
      case SensorKind::C: sigma = {0.01, 0.01, 0.01, 0.02, 0.02, 0.02, 0.05, 0.05, 0.05}; break;
    }
    const int d = observation_dim(kind);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(d), sq = Eigen::VectorXd::Zero(d);
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd e = observe(kind, x, a, noise, rng).values - clean;
      sum += e;
      sq += e.cwiseProduct(e);
    }
    // Sixty moment checks in total, so each gets a 4-sigma band.
    for (int c = 0; c < d; ++c) {
      const double s = sigma[c];
      EXPECT_NEAR(sum[c] / n, 0.0, 4.0 * s / std::sqrt(n)) << to_string(kind) << " channel " << c;
      EXPECT_NEAR(sq[c] / n, s * s, 4.0 * s * s * std::sqrt(2.0 / n)) << to_string(kind) << " channel " << c;
    }
  }
}

TEST(MeasurementMatrix, SensorA) {
  Vec12 d;
  d << 1, 1, 1, 0, 0, 0, 0, 0, 0, 1, 1, 1;
  EXPECT_EQ(measurement_matrix(SensorKind::A), Mat12(d.asDiagonal()));
}

TEST(MeasurementMatrix, SensorBIsIdentity) {
  EXPECT_EQ(measurement_matrix(SensorKind::B), Mat12::Identity());
}

TEST(MeasurementMatrix, SensorCDropsEulerRows) {
  Vec12 d;
  d << 1, 1, 1, 1, 1, 1, 0, 0, 0, 1, 1, 1;
  EXPECT_EQ(measurement_matrix(SensorKind::C), Mat12(d.asDiagonal()));
}

TEST(MeasurementVector, ZeroNoiseObservationIsSelectorTimesState) {
  const auto x = sample_state();
  for (SensorKind kind : {SensorKind::A, SensorKind::B, SensorKind::C}) {
    std::mt19937_64 rng(0);
    const auto obs = observe(kind, x, Vec3(1, 2, 3), SensorNoiseSpec::uniform(0.0), rng);
    EXPECT_EQ(measurement_vector(obs), Vec12(measurement_matrix(kind) * x)) << to_string(kind);
  }
}

TEST(Observe, DeterministicForFixedSeed) {
  std::mt19937_64 a(99), b(99);
  const auto x = sample_state();
  for (int i = 0; i < 10; ++i) {
    EXPECT_EQ(observe(SensorKind::B, x, std::nullopt, SensorNoiseSpec{}, a).values,
              observe(SensorKind::B, x, std::nullopt, SensorNoiseSpec{}, b).values);
  }
}

TEST(SensorNoise, RejectsNegativeStd) {
  SensorNoiseSpec n;
  n.euler = -0.1;
  EXPECT_THROW(n.validate(), ConfigError);
}

TEST(SensorNoise, CovarianceIsDiagonalOfSquares) {
  SensorNoiseSpec n{0.1, 0.2, 0.3, 0.4, 0.5};
  const Mat12 r = measurement_covariance(n);
  EXPECT_DOUBLE_EQ(r(0, 0), 0.01);
  EXPECT_DOUBLE_EQ(r(4, 4), 0.04);
  EXPECT_DOUBLE_EQ(r(7, 7), 0.16);
  EXPECT_DOUBLE_EQ(r(11, 11), 0.25);
  EXPECT_EQ((r - Mat12(r.diagonal().asDiagonal())).norm(), 0.0);
}

}  // namespace
}  // namespace quadem
