#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "aquadrift/drift.hpp"
#include "aquadrift/error.hpp"
#include "drift_scripts.hpp"
#include "oracles.hpp"

using namespace aquadrift;
using namespace aquadrift::drift;

namespace {

std::vector<double> normal_sample(std::mt19937_64& rng, std::size_t n, double mean) {
  std::normal_distribution<double> d(mean, 1.0);
  std::vector<double> x(n);
  for (auto& v : x) v = d(rng);
  return x;
}

}  // namespace

TEST(Ks, IdenticalSamples) {
  const std::vector<double> a{3, 1, 2, 2, 5};
  const auto r = ks_two_sample(a, std::vector<double>{5, 2, 1, 2, 3}, 200);
  EXPECT_EQ(r.statistic, 0.0);
  EXPECT_EQ(r.p_value, 1.0);
}

TEST(Ks, DisjointHandCase) {
  const auto r = ks_two_sample(std::vector<double>{0, 1}, std::vector<double>{10, 11}, 200);
  EXPECT_EQ(r.statistic, 1.0);
  EXPECT_EQ(r.n_eff, 100.0);
  EXPECT_NEAR(r.p_value, oracle::ks_series_p(1.0, 100.0), 1e-15);
}

TEST(Ks, LargeShiftAlarms) {
  std::mt19937_64 rng(42);
  const auto a = normal_sample(rng, 200, 0.0);
  const auto b = normal_sample(rng, 200, 3.0);
  EXPECT_LT(ks_two_sample(a, b, 200).p_value, 1e-4);
}

TEST(Ks, MatchesOracle) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> shift(0.0, 0.6);
  for (int k = 0; k < 100; ++k) {
    const auto a = normal_sample(rng, 200, 0.0);
    const auto b = normal_sample(rng, 200, shift(rng));
    const auto r = ks_two_sample(a, b, 200);
    const double d = oracle::ks_distance(a, b);
    ASSERT_NEAR(r.statistic, d, 1e-9);
    ASSERT_NEAR(r.p_value, oracle::ks_series_p(d, 100.0), 1e-9);
  }
}

TEST(Ks, TiesAcrossSamples) {
  const std::vector<double> a{1, 1, 2, 3};
  const std::vector<double> b{1, 2, 2, 2, 4};
  EXPECT_NEAR(ks_statistic(a, b), oracle::ks_distance(a, b), 1e-15);
}

TEST(Ks, PValueMonotoneAndBounded) {
  double prev = 1.0;
  for (int i = 0; i <= 200; ++i) {
    const double p = ks_p_value(i / 200.0, 100.0);
    ASSERT_GE(p, 0.0);
    ASSERT_LE(p, 1.0);
    ASSERT_LE(p, prev + 1e-11);  // series truncation leaves ~1e-12
    prev = p;
  }
}

TEST(Ks, EffectiveSize) {
  EXPECT_EQ(effective_size(200, 200, 200, NEffMode::AsPrinted), 100.0);
  EXPECT_EQ(effective_size(100, 300, 200, NEffMode::Conventional), 75.0);
}

TEST(Ks, EmptySample) {
  try {
    ks_two_sample(std::vector<double>{}, std::vector<double>{1.0}, 200);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySample);
  }
}

TEST(Distance, ClosedForm) {
  const std::vector<Encoding> zeros(50, Encoding{0.0, 0.0});
  const std::vector<Encoding> ones(50, Encoding{1.0, 1.0});
  EXPECT_EQ(distance_test(zeros, zeros, 50, 0.5).dis, 0.0);
  EXPECT_FALSE(distance_test(zeros, zeros, 50, 0.5).alarm);
  const auto r = distance_test(zeros, ones, 50, 9.99);
  EXPECT_NEAR(r.dis, 10.0, 1e-12);
  EXPECT_TRUE(r.alarm);
  EXPECT_FALSE(distance_test(zeros, ones, 50, 10.0).alarm);
  EXPECT_EQ(distance_test(ones, zeros, 50, 1.0).dis, r.dis);
}

TEST(Distance, RowOrderMatters) {
  const std::vector<Encoding> ref{{0.0, 0.0}, {1.0, 2.0}};
  const std::vector<Encoding> mov{{1.0, 2.0}, {0.0, 0.0}};
  // Rows compared element-wise: (1^2 + 2^2) twice.
  EXPECT_NEAR(distance_test(ref, mov, 2, 1.0).dis, std::sqrt(10.0), 1e-15);
  EXPECT_EQ(distance_test(ref, ref, 2, 1.0).dis, 0.0);
}

TEST(Distance, BufferNotFull) {
  const std::vector<Encoding> a(3, Encoding{0.0, 0.0});
  const std::vector<Encoding> b(2, Encoding{0.0, 0.0});
  try {
    distance_test(a, b, 3, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BufferNotFull);
  }
}

TEST(Calibration, SuccessiveBlocks) {
  // Losses all below theta: falls back to the highest-loss rows.
  std::vector<Encoding> enc;
  std::vector<double> loss;
  for (int i = 0; i < 20; ++i) {
    enc.push_back({static_cast<double>(i), 0.0});
    loss.push_back(i < 10 ? 0.1 : 0.5);
  }
  detector::ThresholdState th;
  th.theta = 1.0;
  const double t = calibrate_dis_threshold(enc, loss, th, 5, 3.0, detector::ClassifyRule::Pointwise, 10);
  // Top four blocks by loss cover rows 0..19; successive blocks differ by 5
  // in every row.
  EXPECT_NEAR(t, 3.0 * std::sqrt(125.0), 1e-12);
  EXPECT_TRUE(std::isinf(calibrate_dis_threshold(std::vector<Encoding>(enc.begin(), enc.begin() + 9),
                                                 std::vector<double>(loss.begin(), loss.begin() + 9),
                                                 th, 5, 3.0, detector::ClassifyRule::Pointwise, 10)));
}

TEST(Buffers, BoundedFifo) {
  BoundedBuffer<int> b(3);
  for (int i = 0; i < 5; ++i) b.push(i);
  EXPECT_TRUE(b.full());
  EXPECT_EQ(b.to_vector(), (std::vector<int>{2, 3, 4}));
  b.clear();
  EXPECT_TRUE(b.empty());
}

TEST(StateMachine, DistinctBuffersRouteByKind) {
  DriftConfig cfg;
  DriftState st(cfg);
  drift_step(st, cfg, InstanceKind::Normal, {0.0, 0.0}, 0.0);
  drift_step(st, cfg, InstanceKind::Anomalous, {1.0, 1.0}, 0.0);
  EXPECT_EQ(st.ref_n.size(), 1u);
  EXPECT_EQ(st.ref_an.size(), 1u);
  EXPECT_TRUE(st.mov_n.empty());
  EXPECT_TRUE(st.mov_an.empty());
}

TEST(StateMachine, GatingBeforeFull) {
  DriftConfig cfg;
  DriftState st(cfg);
  for (std::size_t i = 0; i < 2 * cfg.w_drift - 1; ++i) {
    const auto r = drift_step(st, cfg, InstanceKind::Normal, {static_cast<double>(i), 0.0}, 0.0);
    ASSERT_FALSE(r.p_star.has_value());
    ASSERT_FALSE(st.flag_warn || st.flag_alarm);
  }
}

TEST(StateMachine, StationaryStreamStaysQuiet) {
  DriftConfig cfg;
  DriftState st(cfg);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (int i = 0; i < 1500; ++i) {
    const auto r = drift_step(st, cfg, InstanceKind::Normal, {n01(rng), n01(rng)}, 0.0);
    ASSERT_FALSE(r.alarm_raised);
  }
}

TEST(StateMachine, ShiftedDimensionAlarms) {
  DriftConfig cfg;
  DriftState st(cfg);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (std::size_t i = 0; i < cfg.w_drift; ++i) drift_step(st, cfg, InstanceKind::Normal, {n01(rng), n01(rng)}, 0.0);
  bool alarmed = false;
  for (std::size_t i = 0; i < cfg.w_drift && !alarmed; ++i) {
    alarmed = drift_step(st, cfg, InstanceKind::Normal, {n01(rng) + 3.0, n01(rng)}, 0.0).alarm_raised;
  }
  EXPECT_TRUE(alarmed);
  EXPECT_EQ(st.alarm_source, AlarmSource::DD1);
}

TEST(StateMachine, BufferCapacitiesUnderFuzz) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto f = scripts::buffer_capacities(seed);
    EXPECT_TRUE(f.ok()) << "seed " << seed << '\n' << f.str();
  }
}

TEST(StateMachine, WarnExpiry) {
  const auto f = scripts::warn_expiry();
  EXPECT_TRUE(f.ok()) << f.str();
}

TEST(StateMachine, BonferroniGating) {
  const auto f = scripts::bonferroni_gating();
  EXPECT_TRUE(f.ok()) << f.str();
}

TEST(StateMachine, SingleRetrainAndReset) {
  const auto f = scripts::single_retrain_and_reset();
  EXPECT_TRUE(f.ok()) << f.str();
}

TEST(StateMachine, Deterministic) {
  auto run = [] {
    DriftConfig cfg;
    cfg.w_drift = 30;
    cfg.dis_threshold = 2.0;
    cfg.w_distance = 5;
    DriftState st(cfg);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<int> actions;
    for (int i = 0; i < 3000; ++i) {
      const auto kind = i % 7 == 0 ? InstanceKind::Anomalous : InstanceKind::Normal;
      const auto r = drift_step(st, cfg, kind, {n01(rng) + i * 1e-3, n01(rng)}, 0.0);
      actions.push_back(static_cast<int>(r.action));
      if (r.action == DriftAction::RetrainAfterCollect || r.action == DriftAction::RetrainFromWarnBuffer) {
        reset_after_retrain(st);
      }
    }
    return actions;
  };
  EXPECT_EQ(run(), run());
}

TEST(StateMachine, RetrainNeedsAWindow) {
  detector::AnomalyDetector det({}, {});
  DriftConfig cfg;
  DriftState st(cfg);
  try {
    execute_retrain(det, st, cfg, std::vector<double>(5, 0.0), 1, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyTrainingSet);
  }
}

TEST(DriftConfig, JsonAndValidation) {
  const auto c = DriftConfig::from_json({{"p_warn", 0.02}, {"n_eff", "conventional"}});
  EXPECT_EQ(c.p_warn, 0.02);
  EXPECT_EQ(c.n_eff_mode, NEffMode::Conventional);
  EXPECT_EQ(DriftConfig::from_json(c.to_json()).to_json(), c.to_json());
  EXPECT_THROW(DriftConfig::from_json({{"p_warn", 1e-5}}), Error);  // must exceed p_alarm
}
