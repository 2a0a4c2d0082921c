#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <vector>

#include "aquadrift/error.hpp"
#include "aquadrift/evalrun.hpp"
#include "oracles.hpp"

using namespace aquadrift;
using namespace aquadrift::evalrun;

namespace fs = std::filesystem;

namespace {

scenario::Scenario tiny_scenario() {
  hydronet::Network net({{"a", 0.0, 0.01}, {"b", 2.0, 0.02}, {"c", 1.0, 0.01}}, {{"r", 60.0}},
                        {{"1", "r", "a", 500.0, 0.3, 120.0, hydronet::PipeStatus::Open},
                         {"2", "a", "b", 400.0, 0.25, 120.0, hydronet::PipeStatus::Open},
                         {"3", "b", "c", 300.0, 0.2, 120.0, hydronet::PipeStatus::Open},
                         {"4", "r", "c", 900.0, 0.2, 120.0, hydronet::PipeStatus::Open}});
  scenario::Scenario s("inline", std::move(net));
  s.horizon_steps = 900;
  s.sensor_nodes = {"a", "c"};
  s.rng_seed = 3;
  s.noise_std = 0.05;
  s.blockage_events.push_back({"2", 500, 600});
  return s;
}

RunConfig tiny_config() {
  RunConfig c;
  c.stl.period = 48;
  c.detector.warmup = 300;
  c.detector.initial_epochs = 3;
  c.drift.w_drift = 40;
  c.drift.w_distance = 10;
  c.drift.retrain_epochs = 2;
  c.drift.post_alarm_collect = 60;
  c.drift.min_warn_train = 20;
  c.seed = 11;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST(Prequential, PerfectPredictions) {
  PrequentialTracker t;
  for (int y : {0, 1, 1, 0, 0, 1, 0}) EXPECT_EQ(t.update(y, y), 1.0);
}

TEST(Prequential, MissedPositivesNoFading) {
  PrequentialTracker t(1.0);
  t.update(1, 0);
  t.update(1, 0);
  t.update(0, 0);
  const double g = t.update(0, 0);
  EXPECT_EQ(t.recall_positive(), 0.0);
  EXPECT_EQ(g, 0.0);
}

TEST(Prequential, MatchesFadedOracle) {
  const int y[20] = {0, 0, 1, 1, 0, 1, 0, 0, 1, 1, 1, 0, 0, 0, 1, 0, 1, 1, 0, 0};
  const int p[20] = {0, 1, 1, 0, 0, 1, 0, 1, 1, 0, 1, 0, 0, 1, 1, 0, 0, 1, 0, 0};
  PrequentialTracker t(0.99);
  oracle::FadedG o{0.99};
  for (int i = 0; i < 20; ++i) {
    const double g = t.update(y[i], p[i]);
    EXPECT_NEAR(g, o.step(y[i], p[i]), 1e-12) << i;
    EXPECT_LE(t.tp(), t.positives());
    EXPECT_LE(t.tn(), t.negatives());
  }
  EXPECT_EQ(t.series().size(), 20u);
}

TEST(Prequential, UndefinedRecallCountsAsOne) {
  PrequentialTracker t;
  EXPECT_EQ(t.update(0, 1), 0.0);
  PrequentialTracker u;
  EXPECT_EQ(u.update(0, 0), 1.0);
}

TEST(Metrics, StationaryMask) {
  std::vector<std::uint8_t> a(30, 0), d(30, 0);
  a[5] = 1;
  d[12] = 1;
  const auto m = stationary_mask(a, d, 4);
  for (std::size_t t = 0; t < 30; ++t) {
    const bool expect = t < 5 || t == 10 || t == 11 || t >= 17;
    EXPECT_EQ(m[t], expect) << t;
  }
}

TEST(Metrics, CountsAndBlockageG) {
  SensorRun run;
  run.sensor_id = "x";
  const std::vector<std::uint8_t> label{0, 0, 1, 1, 0};
  const std::vector<std::uint8_t> drift(5, 0);
  for (std::int64_t s = 0; s < 5; ++s) {
    run.detections.push_back({s, 0.0, 1.0, s == 2 || s == 4 ? 1 : 0});
    run.gmean.push_back(0.1 * static_cast<double>(s));
  }
  run.alarm_steps = {1};
  const auto m = sensor_metrics(run, label, drift);
  EXPECT_EQ(m.true_positives, 1u);
  EXPECT_EQ(m.false_positives, 1u);
  EXPECT_NEAR(m.mean_gmean_blockage, 0.25, 1e-15);
  EXPECT_EQ(m.false_drift_alarms, 1u);
  EXPECT_NEAR(m.anomaly_rate, 0.4, 1e-15);
}

TEST(Stats, MeanStderrMedian) {
  const std::vector<double> xs{1, 2, 3, 4};
  EXPECT_EQ(mean(xs), 2.5);
  EXPECT_NEAR(standard_error(xs), std::sqrt(5.0 / 3.0) / 2.0, 1e-15);
  EXPECT_EQ(median(xs), 2.5);
  EXPECT_EQ(median({5, 1, 3}), 3.0);
}

TEST(RunConfig, DefaultsAndJson) {
  const RunConfig c;
  EXPECT_EQ(c.model.timestep, 10u);
  EXPECT_EQ(c.model.hidden, 8u);
  EXPECT_EQ(c.model.latent, 2u);
  EXPECT_EQ(c.model.beta, 0.1);
  EXPECT_EQ(c.model.dropout, 0.1);
  EXPECT_EQ(c.model.learning_rate, 0.001);
  EXPECT_EQ(c.detector.batch_size, 64u);
  EXPECT_EQ(c.detector.initial_epochs, 100u);
  EXPECT_EQ(c.drift.retrain_epochs, 500u);
  EXPECT_EQ(c.drift.w_drift, 200u);
  EXPECT_EQ(c.drift.w_distance, 50u);
  EXPECT_EQ(c.drift.w_warn, 1000u);
  EXPECT_EQ(c.drift.p_alarm, 1e-4);
  EXPECT_EQ(c.drift.expiry_time, 100u);
  EXPECT_EQ(c.drift.post_alarm_collect, 500u);
  EXPECT_EQ(c.fading_factor, 0.99);
  EXPECT_EQ(c.stl.period, 336u);

  const auto doc = tiny_config().to_json();
  EXPECT_EQ(RunConfig::from_json(doc).to_json(), doc);
  const auto rel = RunConfig::from_json({{"scenario", "s.json"}, {"output_dir", "out"}}, "/base");
  EXPECT_EQ(rel.scenario_file, fs::path("/base/s.json"));
  EXPECT_EQ(rel.output_dir, fs::path("/base/out"));
  try {
    RunConfig::from_json({{"seeds", "many"}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidConfig);
  }
}

TEST(Pipeline, RowsPerStepAndDeterminism) {
  const auto scn = tiny_scenario();
  const auto cfg = tiny_config();
  const auto a = run_pipeline(cfg, scn);
  const auto b = run_pipeline(cfg, scn);
  EXPECT_EQ(a.summary, b.summary);
  ASSERT_EQ(a.seeds.size(), 1u);
  const auto& run = a.seeds[0];
  ASSERT_EQ(run.sensors.size(), 2u);
  for (const auto& s : run.sensors) {
    ASSERT_EQ(s.detections.size(), static_cast<std::size_t>(scn.horizon_steps) - cfg.detector.warmup);
    ASSERT_EQ(s.gmean.size(), s.detections.size());
    for (std::size_t i = 0; i < s.detections.size(); ++i) {
      ASSERT_EQ(s.detections[i].step, static_cast<std::int64_t>(cfg.detector.warmup + i));
      ASSERT_GE(s.gmean[i], 0.0);
      ASSERT_LE(s.gmean[i], 1.0);
    }
    EXPECT_FALSE(s.gmean_at(static_cast<std::int64_t>(cfg.detector.warmup) - 1).has_value());
  }
  // Serial and parallel execution agree.
  auto serial = cfg;
  serial.parallel = false;
  EXPECT_EQ(run_pipeline(serial, scn).summary, a.summary);
}

TEST(Pipeline, ArtifactsAreByteStable) {
  const auto scn = tiny_scenario();
  auto cfg = tiny_config();
  cfg.seeds = 2;
  const auto root = fs::temp_directory_path() / "aquadrift_evalrun_test";
  fs::remove_all(root);
  write_artifacts(cfg, scn, run_pipeline(cfg, scn), root / "one");
  write_artifacts(cfg, scn, run_pipeline(cfg, scn), root / "two");
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(root / "one")) {
    const auto name = entry.path().filename();
    ASSERT_TRUE(fs::exists(root / "two" / name)) << name;
    EXPECT_EQ(slurp(entry.path()), slurp(root / "two" / name)) << name;
    ++files;
  }
  EXPECT_GE(files, 8u);
  EXPECT_TRUE(fs::exists(root / "one" / "detection_a_s1.csv"));

  // Report rebuilt from disk matches the in-memory one for seed 0.
  const auto from_disk = downstream_report(root / "one", "2");
  ASSERT_EQ(from_disk.size(), 2u);
  fs::remove_all(root);
}

TEST(Downstream, TagsFollowFlow) {
  const auto scn = tiny_scenario();
  const std::vector<std::string> ids{"a", "b", "c"};
  const auto tags = downstream_tags(scn.network, ids, "2");
  EXPECT_FALSE(tags[0]);
  EXPECT_TRUE(tags[1]);
}

TEST(Downstream, QuietSensorHasNoCounts) {
  const auto scn = tiny_scenario();
  SeedRun run;
  SensorRun s;
  s.sensor_id = "a";
  for (std::int64_t t = 0; t < 900; ++t) s.detections.push_back({t, 0.0, 1.0, 0});
  run.sensors.push_back(s);
  run.stream.sensor_ids = {"a"};
  const std::vector<std::uint8_t> label(900, 0);
  run.metrics.push_back(sensor_metrics(s, label, label));
  const auto rows = downstream_report(scn, run, "2");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].tp, 0u);
  EXPECT_EQ(rows[0].fp, 0u);
}
