#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "aquadrift/error.hpp"
#include "aquadrift/preprocess.hpp"

using namespace aquadrift;
using namespace aquadrift::preprocess;

namespace {

std::vector<double> sinusoid(std::size_t n, double amp, std::size_t period) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = amp * std::sin(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(period));
  }
  return x;
}

}  // namespace

TEST(Stl, ConstantSeries) {
  const double c = 42.5;
  const std::vector<double> x(1344, c);
  const auto d = stl_decompose(x);
  const double tol = 1e-6 * c + 1e-9;
  for (std::size_t i = 0; i < x.size(); ++i) {
    ASSERT_NEAR(d.trend[i], c, tol);
    ASSERT_NEAR(d.seasonal[i], 0.0, tol);
    ASSERT_NEAR(d.residual[i], 0.0, tol);
  }
}

TEST(Stl, RecoversSinusoid) {
  const double amp = 2.0;
  const auto x = sinusoid(3360, amp, 336);
  const auto d = stl_decompose(x);
  for (std::size_t i = 336; i < x.size() - 336; ++i) {
    ASSERT_NEAR(d.seasonal[i], x[i], 0.05 * amp) << i;
    ASSERT_NEAR(d.trend[i], 0.0, 0.05 * amp) << i;
  }
}

TEST(Stl, RecoversRampPlusSinusoid) {
  const double amp = 1.0;
  const double slope = 0.002;
  auto x = sinusoid(3360, amp, 336);
  const auto s = x;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += slope * static_cast<double>(i);
  const auto d = stl_decompose(x);
  const std::size_t a = 672;
  const std::size_t b = 2688;
  const double fitted = (d.trend[b] - d.trend[a]) / static_cast<double>(b - a);
  EXPECT_NEAR(fitted, slope, 0.05 * slope);
  for (std::size_t i = 336; i < x.size() - 336; ++i) {
    ASSERT_NEAR(d.seasonal[i], s[i], 0.05 * amp) << i;
  }
}

TEST(Stl, RobustPassesStillAdditive) {
  auto x = sinusoid(1344, 1.0, 336);
  x[500] += 40.0;
  StlOptions opt;
  opt.outer_iterations = 3;
  const auto d = stl_decompose(x, opt);
  for (std::size_t i = 0; i < x.size(); ++i) {
    ASSERT_NEAR(d.trend[i] + d.seasonal[i] + d.residual[i], x[i], 1e-9);
  }
  EXPECT_GT(d.residual[500], 30.0);
}

TEST(Stl, TooShort) {
  const std::vector<double> x(671, 1.0);
  try {
    stl_decompose(x);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SeriesTooShort);
  }
}

TEST(Residualize, SameStreamGivesSeasonal) {
  auto x = sinusoid(1344, 3.0, 336);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += 0.01 * std::cos(0.37 * static_cast<double>(i));
  const auto d = stl_decompose(x);
  for (std::size_t i = 0; i < x.size(); ++i) ASSERT_EQ(residualize(x[i], i, d), d.seasonal[i]);
}

TEST(Residualize, Additive) {
  const auto x = sinusoid(1344, 3.0, 336);
  const auto d = stl_decompose(x);
  EXPECT_NEAR(residualize(x[700] + 5.0, 700, d), d.seasonal[700] + 5.0, 1e-12);
  // Wraps modulo the historical length.
  EXPECT_EQ(residualize(x[3], 1344 + 3, d), residualize(x[3], 3, d));
  EXPECT_NEAR(residualize(x[10], 10, d, ResidualMode::TrendOnly), x[10] - d.trend[10], 1e-15);
}

TEST(Loess, ReproducesLine) {
  std::vector<double> y(50);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = 3.0 - 0.5 * static_cast<double>(i);
  const auto fit = loess(y, 11, 1);
  for (std::size_t i = 0; i < y.size(); ++i) ASSERT_NEAR(fit[i], y[i], 1e-10);
}
