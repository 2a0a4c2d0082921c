#pragma once

// Seasonal-trend decomposition by loess of a historical year, and online
// residualization of live readings against it.

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace aquadrift::preprocess {

struct StlOptions {
  std::size_t period = 336;
  int inner_iterations = 2;
  // Number of outer passes; robustness weights are applied from the
  // second pass on, so 1 means a plain (non-robust) fit.
  int outer_iterations = 1;
  // Cycle-subseries smoothing collapses to the per-phase mean when true;
  // otherwise `seasonal_window` (odd, >= 7) is the subseries loess span.
  bool periodic_seasonal = true;
  std::size_t seasonal_window = 0;
  std::size_t trend_window = 0;    // 0: next odd >= 1.5 * period
  std::size_t lowpass_window = 0;  // 0: next odd >= period

  std::size_t resolved_trend_window() const;
  std::size_t resolved_lowpass_window() const;
};

struct Decomposition {
  std::vector<double> trend;
  std::vector<double> seasonal;
  std::vector<double> residual;
  std::size_t period = 336;

  std::size_t size() const noexcept { return trend.size(); }

  // CSV: `step,trend,seasonal,residual`.
  void write_csv(const std::filesystem::path& path) const;
  static Decomposition read_csv(const std::filesystem::path& path, std::size_t period);
};

// Throws Error(SeriesTooShort) when series.size() < 2 * period or period < 2.
Decomposition stl_decompose(std::span<const double> series, const StlOptions& options = {});

enum class ResidualMode {
  TrendAndResidual,  // x - trend - residual: keeps the seasonal pattern
  TrendOnly,         // x - trend
};

// `step` wraps modulo the historical length.
double residualize(double value, std::size_t step, const Decomposition& hist,
                   ResidualMode mode = ResidualMode::TrendAndResidual);

// Local-polynomial (degree 0 or 1) tricube smoother evaluated on the
// integer grid 0..n-1 with a span of `window` points.
std::vector<double> loess(std::span<const double> y, std::size_t window, int degree,
                          std::span<const double> weights = {});

}  // namespace aquadrift::preprocess
