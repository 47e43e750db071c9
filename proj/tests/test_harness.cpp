#include "quadem/harness.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <climits>
#include <random>

namespace quadem {
namespace {

SimulationConfig noiseless_config() {
  SimulationConfig cfg;
  cfg.process.sigma_thrust = 0.0;
  cfg.process.sigma_torque = 0.0;
  cfg.sensor = SensorNoiseSpec::uniform(0.0);
  cfg.em.filter.R.setZero();
  return cfg;
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

void expect_recovered(const RunRecord& r, double tol) {
  ASSERT_FALSE(r.trace.entries.empty()) << r.failure;
  const auto th = r.trace.final_theta();
  const QuadParams truth;
  EXPECT_LT(rel(th.mass, truth.mass), tol);
  for (int a = 0; a < 3; ++a) EXPECT_LT(rel(th.inertia[a], truth.inertia[a]), tol) << "axis " << a;
}

TEST(RunOffline, NoiselessFlightIsTrackedExactlyAndIdentified) {
  const auto cfg = noiseless_config();
  const auto r = run_offline(cfg, ObservationSource::Ekf, 1);
  ASSERT_TRUE(r.completed) << r.failure;
  EXPECT_FALSE(r.diverged);
  EXPECT_LT(estimation_error(r.truth, r.estimates, block::kPosition).max, 1e-9);
  EXPECT_LT(estimation_error(r.truth, r.estimates, block::kEuler).max, 1e-9);
  EXPECT_TRUE(r.trace.converged);
  expect_recovered(r, 1e-6);
  EXPECT_EQ(r.guard_count, 0);
}

TEST(RunOffline, NoiselessFullObservationsIdentifyParameters) {
  const auto r = run_offline(noiseless_config(), ObservationSource::Full, 1);
  ASSERT_TRUE(r.completed) << r.failure;
  expect_recovered(r, 1e-6);
}

TEST(RunOffline, RecordLengthsAreAligned) {
  const auto r = run_offline(SimulationConfig{}, ObservationSource::Partial, 3);
  ASSERT_TRUE(r.completed) << r.failure;
  EXPECT_EQ(r.truth.size(), r.estimates.size());
  EXPECT_EQ(r.truth.size(), r.database.size());
  EXPECT_EQ(r.controls.size() + 1, r.database.size());
  EXPECT_EQ(r.H, measurement_matrix(SensorKind::C));
  // Partial observations leave the Euler rows empty.
  for (const auto& y : r.database) ASSERT_EQ(y.segment<3>(block::kEuler), Vec3::Zero());
}

TEST(RunOffline, ReachesEveryWaypointWithTrueParameters) {
  const SimulationConfig cfg;
  for (std::uint64_t seed : {1u, 2u}) {
    const auto r = run_offline(cfg, ObservationSource::Ekf, seed);
    ASSERT_TRUE(r.completed) << r.failure;
    for (std::size_t w = 0; w < cfg.mission.waypoints.size(); ++w) {
      EXPECT_LE(r.waypoint_min_distance[w], 0.15) << "seed " << seed << " waypoint " << w;
      EXPECT_GE(r.waypoint_steps[w], 0);
    }
    EXPECT_TRUE(std::is_sorted(r.waypoint_steps.begin(), r.waypoint_steps.end()));
  }
}

TEST(RunOffline, SingleSeedMassIsNearTruth) {
  const auto r = run_offline(SimulationConfig{}, ObservationSource::Ekf, 5);
  ASSERT_TRUE(r.completed) << r.failure;
  EXPECT_GT(r.trace.final().mass, 0.175);
  EXPECT_LT(r.trace.final().mass, 0.185);
}

TEST(RunMission, ReplayIsBitIdentical) {
  const SimulationConfig cfg;
  const auto a = run_offline(cfg, ObservationSource::Full, 11);
  const auto b = run_offline(cfg, ObservationSource::Full, 11);
  ASSERT_EQ(a.truth.size(), b.truth.size());
  for (std::size_t k = 0; k < a.truth.size(); ++k) {
    ASSERT_EQ(a.truth[k], b.truth[k]);
    ASSERT_EQ(a.estimates[k], b.estimates[k]);
    ASSERT_EQ(a.database[k], b.database[k]);
  }
  ASSERT_EQ(a.trace.entries.size(), b.trace.entries.size());
  for (std::size_t i = 0; i < a.trace.entries.size(); ++i) {
    EXPECT_EQ(a.trace.entries[i].mass, b.trace.entries[i].mass);
    EXPECT_EQ(a.trace.entries[i].inertia, b.trace.entries[i].inertia);
  }
}

TEST(RunMission, DifferentSeedsDiffer) {
  const SimulationConfig cfg;
  const auto a = run_offline(cfg, ObservationSource::Ekf, 1);
  const auto b = run_offline(cfg, ObservationSource::Ekf, 2);
  EXPECT_NE(a.truth[10], b.truth[10]);
}

TEST(RunMission, ObservationSourceDoesNotPerturbTheFlight) {
  const SimulationConfig cfg;
  const auto ekf = run_offline(cfg, ObservationSource::Ekf, 4);
  const auto full = run_offline(cfg, ObservationSource::Full, 4);
  const auto partial = run_offline(cfg, ObservationSource::Partial, 4);
  ASSERT_EQ(ekf.truth.size(), full.truth.size());
  ASSERT_EQ(ekf.truth.size(), partial.truth.size());
  for (std::size_t k = 0; k < ekf.truth.size(); ++k) {
    ASSERT_EQ(ekf.truth[k], full.truth[k]);
    ASSERT_EQ(ekf.truth[k], partial.truth[k]);
    ASSERT_EQ(ekf.estimates[k], partial.estimates[k]);
  }
}

TEST(RunOnline, WithoutTicksAndTrueStartItFliesTheOfflineMission) {
  SimulationConfig cfg;
  cfg.em.cadence = INT_MAX;
  cfg.theta0 = ThetaEstimate::from(cfg.params);
  const auto online = run_online(cfg, ObservationSource::Ekf, 6);
  const auto offline = run_offline(cfg, ObservationSource::Ekf, 6);
  ASSERT_TRUE(online.completed) << online.failure;
  ASSERT_EQ(online.truth.size(), offline.truth.size());
  for (std::size_t k = 0; k < online.truth.size(); ++k) {
    ASSERT_EQ(online.truth[k], offline.truth[k]) << "step " << k;
    ASSERT_EQ(online.controls.size() > k ? online.controls[k].thrust : 0.0,
              offline.controls.size() > k ? offline.controls[k].thrust : 0.0);
  }
  EXPECT_EQ(online.trace.entries.size(), 1u);
}

TEST(RunOnline, EstimatorSeesTheMostRecentWindow) {
  SimulationConfig cfg;
  cfg.mission.max_steps = 240;
  cfg.em.window_size = 50;
  cfg.em.cadence = 4;
  const auto r = run_online(cfg, ObservationSource::Ekf, 2);
  EXPECT_EQ(r.failure, "mission timeout");
  // Entry 0 is theta0; ticks run at steps 4, 8, ..., 236 and the timeout
  // ends the loop at step 240 before another tick.
  ASSERT_EQ(r.trace.entries.size(), 1u + 59u);
  for (std::size_t i = 1; i < r.trace.entries.size(); ++i) {
    const auto& e = r.trace.entries[i];
    EXPECT_EQ(e.sim_step, static_cast<long>(4 * i));
    EXPECT_EQ(e.window, std::min<std::size_t>(static_cast<std::size_t>(e.sim_step) + 1, 50));
    EXPECT_EQ(e.iteration, static_cast<int>(i));
  }
}

TEST(RunOnline, StartsFromTinyMassAndCompletes) {
  const auto r = run_online(SimulationConfig{}, ObservationSource::Ekf, 1);
  ASSERT_TRUE(r.completed) << r.failure;
  EXPECT_FALSE(r.diverged);
  EXPECT_EQ(r.trace.entries.front().mass, 0.001);
  EXPECT_NEAR(r.trace.final().mass, 0.18, 0.005);
}

TEST(RunMission, TimeoutIsRecordedAndStillIdentified) {
  SimulationConfig cfg;
  cfg.mission.max_steps = 150;
  const auto r = run_offline(cfg, ObservationSource::Ekf, 1);
  EXPECT_FALSE(r.completed);
  EXPECT_FALSE(r.diverged);
  EXPECT_EQ(r.failure, "mission timeout");
  EXPECT_EQ(r.truth.size(), 151u);
  EXPECT_FALSE(r.trace.entries.empty());
}

TEST(RunMission, DivergenceGuardStopsTheRun) {
  SimulationConfig cfg;
  cfg.mission.divergence_radius = 1.0;  // the start point is already 1.118 m out
  const auto r = run_online(cfg, ObservationSource::Ekf, 1);
  EXPECT_TRUE(r.diverged);
  EXPECT_FALSE(r.completed);
  EXPECT_NE(r.failure.find("divergence guard"), std::string::npos);
  EXPECT_EQ(r.truth.size(), 1u);
}

TEST(RunMission, SmoothedFlightErrorIsNoWorseThanFiltered) {
  SimulationConfig cfg;
  cfg.smooth_flight = true;
  const auto r = run_offline(cfg, ObservationSource::Ekf, 1);
  ASSERT_TRUE(r.completed) << r.failure;
  for (int b = 0; b < 4; ++b) {
    EXPECT_GT(r.filter_errors.rmse[b], 0.0);
    EXPECT_LE(r.smoother_errors.rmse[b], r.filter_errors.rmse[b]) << "block " << b;
  }
}

TEST(SimulationConfig, RejectsMismatchedStep) {
  SimulationConfig cfg;
  cfg.em.filter.dt = 0.02;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = SimulationConfig{};
  cfg.mission.waypoints.clear();
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = SimulationConfig{};
  cfg.theta0.mass = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(ParseEnums, RoundTripAndReject) {
  for (Mode m : {Mode::Offline, Mode::Online}) EXPECT_EQ(parse_mode(to_string(m)), m);
  for (auto s : {ObservationSource::Ekf, ObservationSource::Full, ObservationSource::Partial})
    EXPECT_EQ(parse_source(to_string(s)), s);
  EXPECT_THROW(parse_mode("sideways"), ConfigError);
  EXPECT_THROW(parse_source("B"), ConfigError);
}

TEST(MakeStream, StreamsAreIndependentPerIdAndSeed) {
  auto a = make_stream(1, stream::kPlant), b = make_stream(1, stream::kSensorA);
  auto c = make_stream(2, stream::kPlant), d = make_stream(1, stream::kPlant);
  const auto va = a();
  EXPECT_NE(va, b());
  EXPECT_NE(va, c());
  EXPECT_EQ(va, d());
  auto hi = make_stream(1ull << 32, stream::kPlant);
  EXPECT_NE(make_stream(0, stream::kPlant)(), hi());
}

// ---------------------------------------------------------------------------
// Campaigns and summaries

TEST(RunCampaign, ParallelMatchesSerial) {
  SimulationConfig cfg;
  cfg.mission.max_steps = 300;
  const std::vector<std::uint64_t> seeds{3, 1, 2};
  const auto serial = run_campaign(cfg, Mode::Offline, ObservationSource::Full, seeds, 1);
  const auto parallel = run_campaign(cfg, Mode::Offline, ObservationSource::Full, seeds, 3);
  ASSERT_EQ(serial.size(), 3u);
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    EXPECT_EQ(serial[i].seed, seeds[i]);
    EXPECT_EQ(parallel[i].seed, seeds[i]);
    EXPECT_EQ(serial[i].truth.back(), parallel[i].truth.back());
    EXPECT_EQ(serial[i].trace.final().mass, parallel[i].trace.final().mass);
  }
}

TEST(SummarizeCampaign, SingleRunIsAPoint) {
  RunDigest d;
  d.has_estimate = true;
  d.mass = 0.18;
  d.inertia = Vec3(1, 2, 3);
  d.steps = 10;
  const auto s = summarize_campaign(std::vector<RunDigest>{d});
  EXPECT_EQ(s.mass.min, s.mass.max);
  EXPECT_EQ(s.mass.width(), 0.0);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(s.inertia[i].min, s.inertia[i].max);
  EXPECT_EQ(s.runs, 1u);
  EXPECT_EQ(s.estimated_runs, 1u);
}

TEST(SummarizeCampaign, RangesMatchSortOracle) {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<RunDigest> runs(1 + trial % 20);
    std::vector<double> masses, ixx;
    for (auto& r : runs) {
      r.has_estimate = true;
      r.mass = 0.18 + 0.01 * n(rng);
      r.inertia = Vec3(2.5e-4 + 1e-5 * n(rng), 3e-4, 2e-4);
      r.steps = 5;
      masses.push_back(r.mass);
      ixx.push_back(r.inertia[0]);
    }
    std::sort(masses.begin(), masses.end());
    std::sort(ixx.begin(), ixx.end());
    const auto s = summarize_campaign(runs);
    EXPECT_EQ(s.mass.min, masses.front());
    EXPECT_EQ(s.mass.max, masses.back());
    EXPECT_EQ(s.inertia[0].min, ixx.front());
    EXPECT_EQ(s.inertia[0].max, ixx.back());
    EXPECT_LE(s.mass.min, s.mass.max);
  }
}

TEST(SummarizeCampaign, PoolsErrorStatisticsOverSteps) {
  // Two synthetic runs with known per-step errors; the pooled figures must
  // equal those of the concatenated error sequence.
  std::vector<Vec12> truth_a(3, Vec12::Zero()), est_a(3, Vec12::Zero());
  std::vector<Vec12> truth_b(5, Vec12::Zero()), est_b(5, Vec12::Zero());
  std::vector<double> all;
  for (int k = 0; k < 3; ++k) {
    est_a[k][0] = 0.1 * (k + 1);
    all.push_back(0.1 * (k + 1));
  }
  for (int k = 0; k < 5; ++k) {
    est_b[k][1] = 0.05 * (k + 2);
    all.push_back(0.05 * (k + 2));
  }
  RunRecord a, b;
  a.truth = truth_a;
  a.estimates = est_a;
  b.truth = truth_b;
  b.estimates = est_b;
  const auto s = summarize_campaign(std::vector<RunRecord>{a, b});
  double mean = 0.0, sq = 0.0;
  for (double e : all) mean += e;
  mean /= all.size();
  for (double e : all) sq += (e - mean) * (e - mean);
  EXPECT_NEAR(s.position_error.mean, mean, 1e-15);
  EXPECT_NEAR(s.position_error.std, std::sqrt(sq / all.size()), 1e-12);
  EXPECT_DOUBLE_EQ(s.position_error.max, *std::max_element(all.begin(), all.end()));
  EXPECT_EQ(s.estimated_runs, 0u);
}

TEST(SummarizeCampaign, EmptyInputIsAnError) {
  EXPECT_THROW(summarize_campaign(std::vector<RunDigest>{}), Error);
}

}  // namespace
}  // namespace quadem
