#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <vector>

#include "aquadrift/error.hpp"
#include "aquadrift/neural.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace aquadrift;
using namespace aquadrift::neural;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.timestep = 4;
  c.hidden = 3;
  c.latent = 2;
  return c;
}

void set_group(SeqModel& m, const std::string& name, std::vector<double> values) {
  const auto& g = m.group(name);
  ASSERT_EQ(values.size(), g.size()) << name;
  std::copy(values.begin(), values.end(), m.parameters().begin() + static_cast<long>(g.offset));
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

TEST(Loss, PerfectReconstructionStandardPosterior) {
  const std::vector<double> x{0.3, -1.0, 2.0};
  const std::vector<double> z{0.0, 0.0};
  const auto t = vae_loss(x, x, z, z, 0.1);
  EXPECT_EQ(t.total, 0.0);
  EXPECT_EQ(t.kl, 0.0);
}

TEST(Loss, UnitMeanShiftKl) {
  const std::vector<double> x{1.0, 2.0};
  const auto t = vae_loss(x, x, std::vector<double>{1.0, 0.0}, std::vector<double>{0.0, 0.0}, 0.1);
  EXPECT_NEAR(t.kl, 0.5, 1e-12);
  EXPECT_NEAR(t.total, 0.05, 1e-12);
}

TEST(Loss, MatchesOracleOnRandomCases) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (int k = 0; k < 50; ++k) {
    std::vector<double> x(10), y(10), mu(2), lv(2);
    for (auto* v : {&x, &y}) for (auto& e : *v) e = n01(rng);
    for (auto* v : {&mu, &lv}) for (auto& e : *v) e = n01(rng);
    const auto t = vae_loss(x, y, mu, lv, 0.1);
    const double expect = oracle::mse(x, y) + 0.1 * oracle::kl(mu, lv);
    EXPECT_NEAR(t.total, expect, 1e-12);
    EXPECT_NEAR(t.kl, oracle::kl(mu, lv), 1e-12);
  }
}

TEST(Forward, ZeroModel) {
  auto m = SeqModel::zeros(ModelConfig{});
  const Window w{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  const auto r = m.forward(w, Mode::Eval);
  for (double v : r.reconstruction) EXPECT_EQ(v, 0.0);
  for (double v : r.mu) EXPECT_EQ(v, 0.0);
  for (double v : r.log_var) EXPECT_EQ(v, 0.0);
  for (double v : r.z) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(m.encode(w), (std::vector<double>{0.0, 0.0}));
}

TEST(Forward, EvalIsDeterministic) {
  SeqModel m(ModelConfig{}, 11);
  const Window w{0.1, -0.2, 0.3, 0.0, 1.0, 0.5, -0.5, 0.2, 0.2, 0.9};
  const auto a = m.forward(w, Mode::Eval);
  const auto b = m.forward(w, Mode::Eval);
  EXPECT_EQ(a.reconstruction, b.reconstruction);
  EXPECT_EQ(a.mu, b.mu);
  EXPECT_EQ(m.score(w), m.score(w));
  EXPECT_EQ(m.encode(w), m.encode(w));
}

TEST(Forward, ScalarLstmByHand) {
  ModelConfig c;
  c.timestep = 2;
  c.hidden = 1;
  c.latent = 1;
  auto m = SeqModel::zeros(c);
  // Gate order: input, forget, cell, output.
  const double wx[4] = {0.5, -0.3, 0.8, 0.2};
  const double wh[4] = {0.1, 0.4, -0.6, 0.3};
  const double b[4] = {0.05, 1.0, -0.1, 0.0};
  set_group(m, "encoder.wx", {wx[0], wx[1], wx[2], wx[3]});
  set_group(m, "encoder.wh", {wh[0], wh[1], wh[2], wh[3]});
  set_group(m, "encoder.b", {b[0], b[1], b[2], b[3]});
  set_group(m, "mu.w", {1.5});
  set_group(m, "mu.b", {-0.2});

  const double x1 = 0.7, x2 = -1.3;
  double h = 0.0, cell = 0.0;
  for (double x : {x1, x2}) {
    const double i = sig(wx[0] * x + wh[0] * h + b[0]);
    const double f = sig(wx[1] * x + wh[1] * h + b[1]);
    const double g = std::tanh(wx[2] * x + wh[2] * h + b[2]);
    const double o = sig(wx[3] * x + wh[3] * h + b[3]);
    cell = f * cell + i * g;
    h = o * std::tanh(cell);
  }
  const double act = h > 0.0 ? h : 0.01 * h;
  const auto mu = m.encode(Window{x1, x2});
  EXPECT_NEAR(mu[0], 1.5 * act - 0.2, 1e-12);
}

TEST(Gradient, FiniteDifferences) {
  for (bool softmax : {false, true}) {
    auto c = tiny();
    c.softmax_output = softmax;
    for (const auto& [name, err] : gradcheck::relative_errors(c, 5)) {
      EXPECT_LE(err, 1e-4) << name << (softmax ? " softmax" : "");
    }
  }
}

TEST(Gradient, Accumulates) {
  SeqModel m(tiny(), 2);
  const Window w{0.1, 0.2, 0.3, 0.4};
  const auto noise = Noise::none(tiny());
  std::vector<double> once(m.parameters().size(), 0.0);
  std::vector<double> twice(m.parameters().size(), 0.0);
  m.loss_and_gradient(w, noise, once);
  m.loss_and_gradient(w, noise, twice);
  m.loss_and_gradient(w, noise, twice);
  for (std::size_t i = 0; i < once.size(); ++i) ASSERT_NEAR(twice[i], 2.0 * once[i], 1e-14);
}

TEST(Train, ZeroEpochsLeavesParameters) {
  SeqModel m(ModelConfig{}, 1);
  const std::vector<double> before(m.parameters().begin(), m.parameters().end());
  const std::vector<Window> ws(20, Window(10, 0.5));
  const auto r = train(m, ws, 0);
  EXPECT_TRUE(std::equal(before.begin(), before.end(), m.parameters().begin()));
  EXPECT_EQ(r.final_losses.size(), ws.size());
  EXPECT_EQ(m.adam_steps(), 0u);
}

TEST(Train, ConstantWindowsLossDrops) {
  SeqModel m(ModelConfig{}, 1);
  const std::vector<Window> ws(64, Window(10, 0.8));
  const auto r = train(m, ws, 100);
  EXPECT_LT(mean_of(r.final_losses), r.initial_mean_loss);
}

TEST(Train, SeparatesShiftedWindows) {
  SeqModel m(ModelConfig{}, 4);
  std::vector<double> series(300);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (auto& v : series) v = n01(rng);
  train(m, make_windows(series, 10), 20);
  Window a(series.begin(), series.begin() + 10);
  Window b = a;
  for (auto& v : b) v += 10.0;
  const auto ea = m.encode(a);
  const auto eb = m.encode(b);
  EXPECT_GT(std::hypot(ea[0] - eb[0], ea[1] - eb[1]), 0.0);
}

TEST(Train, SameSeedSameModel) {
  const std::vector<double> series{0.1, 0.4, -0.2, 0.3, 0.9, -1.0, 0.2, 0.0, 0.5, 0.7,
                                   0.1, 0.2, 0.3, -0.4, 0.6, 0.8, -0.3, 0.2, 0.1, 0.0};
  const auto ws = make_windows(series, 10);
  SeqModel a(ModelConfig{}, 21), b(ModelConfig{}, 21);
  train(a, ws, 5, 4);
  train(b, ws, 5, 4);
  EXPECT_TRUE(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()));
}

TEST(Windows, Overlapping) {
  const std::vector<double> v{1, 2, 3, 4, 5};
  const auto ws = make_windows(v, 3);
  ASSERT_EQ(ws.size(), 3u);
  EXPECT_EQ(ws[0], (Window{1, 2, 3}));
  EXPECT_EQ(ws[2], (Window{3, 4, 5}));
  EXPECT_TRUE(make_windows(v, 6).empty());
}

TEST(Checkpoint, RoundTrip) {
  SeqModel m(ModelConfig{}, 8);
  train(m, std::vector<Window>(8, Window(10, 0.1)), 2, 4);
  const auto path = std::filesystem::temp_directory_path() / "aquadrift_model_test.json";
  m.save(path);
  auto back = SeqModel::load(path);
  std::filesystem::remove(path);
  EXPECT_TRUE(std::equal(m.parameters().begin(), m.parameters().end(), back.parameters().begin()));
  EXPECT_EQ(back.adam_steps(), m.adam_steps());
  EXPECT_EQ(back.sample_noise().epsilon, m.sample_noise().epsilon);
}

TEST(Config, Validation) {
  ModelConfig c;
  c.hidden = 0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), Error);
  const auto d = ModelConfig::from_json({{"beta", 0.5}});
  EXPECT_EQ(d.beta, 0.5);
  EXPECT_EQ(d.hidden, 8u);
}
