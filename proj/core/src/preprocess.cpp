#include "aquadrift/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "aquadrift/csv.hpp"
#include "aquadrift/error.hpp"

namespace aquadrift::preprocess {

namespace {

std::size_t next_odd(double x) {
  auto n = static_cast<std::size_t>(std::ceil(x));
  return n % 2 == 0 ? n + 1 : n;
}

// Loess estimate at abscissa `x` (possibly outside [0, n-1]) from points at
// integer positions. Returns false if every neighbourhood weight vanishes.
bool loess_at(std::span<const double> y, std::span<const double> rw, double x,
              std::size_t window, int degree, double& out) {
  const auto n = y.size();
  const std::size_t q = std::min(window, n);
  // Nearest-q neighbourhood on an equally spaced grid is a contiguous block.
  const double centre = std::clamp(std::round(x), 0.0, static_cast<double>(n - 1));
  auto left = static_cast<std::ptrdiff_t>(centre) - static_cast<std::ptrdiff_t>(q / 2);
  left = std::clamp<std::ptrdiff_t>(left, 0, static_cast<std::ptrdiff_t>(n - q));
  auto right = left + static_cast<std::ptrdiff_t>(q) - 1;
  // Shift the block while the far point beyond it is closer than its near edge.
  while (right + 1 < static_cast<std::ptrdiff_t>(n) &&
         std::abs(x - static_cast<double>(right + 1)) < std::abs(x - static_cast<double>(left))) {
    ++left;
    ++right;
  }
  while (left > 0 &&
         std::abs(x - static_cast<double>(left - 1)) < std::abs(x - static_cast<double>(right))) {
    --left;
    --right;
  }
  double h = std::max(x - static_cast<double>(left), static_cast<double>(right) - x);
  if (window > n) h += static_cast<double>((window - n) / 2);
  const double h9 = 0.999 * h;
  const double h1 = 0.001 * h;

  double sw = 0.0, sx = 0.0, sxx = 0.0, sy = 0.0, sxy = 0.0;
  for (auto j = left; j <= right; ++j) {
    const double xj = static_cast<double>(j);
    const double r = std::abs(xj - x);
    double w = 0.0;
    if (r <= h9) {
      w = 1.0;
      if (r > h1) {
        const double u = r / h;
        const double c = 1.0 - u * u * u;
        w = c * c * c;
      }
      if (!rw.empty()) w *= rw[static_cast<std::size_t>(j)];
    }
    const double yj = y[static_cast<std::size_t>(j)];
    sw += w;
    sx += w * xj;
    sxx += w * xj * xj;
    sy += w * yj;
    sxy += w * xj * yj;
  }
  if (sw <= 0.0) return false;
  const double mx = sx / sw;
  double value = sy / sw;
  if (degree >= 1) {
    const double var = sxx / sw - mx * mx;
    if (var > 1e-12 * (1.0 + mx * mx)) {
      const double cov = sxy / sw - mx * (sy / sw);
      value += (cov / var) * (x - mx);
    }
  }
  out = value;
  return true;
}

std::vector<double> moving_average(std::span<const double> x, std::size_t len) {
  std::vector<double> out(x.size() - len + 1);
  double acc = 0.0;
  for (std::size_t i = 0; i < len; ++i) acc += x[i];
  out[0] = acc / static_cast<double>(len);
  for (std::size_t i = 1; i < out.size(); ++i) {
    acc += x[i + len - 1] - x[i - 1];
    out[i] = acc / static_cast<double>(len);
  }
  return out;
}

// Smoothed cycle-subseries, extended by one period on each side
// (length n + 2 * period).
std::vector<double> cycle_subseries(std::span<const double> detrended,
                                    std::span<const double> rw, const StlOptions& opt) {
  const auto n = detrended.size();
  const auto np = opt.period;
  std::vector<double> c(n + 2 * np, 0.0);
  std::vector<double> sub;
  std::vector<double> sub_w;
  for (std::size_t phase = 0; phase < np; ++phase) {
    sub.clear();
    sub_w.clear();
    for (std::size_t i = phase; i < n; i += np) {
      sub.push_back(detrended[i]);
      sub_w.push_back(rw.empty() ? 1.0 : rw[i]);
    }
    const auto k = sub.size();
    if (opt.periodic_seasonal) {
      double sw = 0.0, sy = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        sw += sub_w[i];
        sy += sub_w[i] * sub[i];
      }
      const double mean = sw > 0.0 ? sy / sw : 0.0;
      for (std::size_t m = 0; m < k + 2; ++m) c[phase + m * np] = mean;
      continue;
    }
    const std::span<const double> weights = rw.empty() ? std::span<const double>{} : sub_w;
    for (std::size_t m = 0; m < k + 2; ++m) {
      const double x = static_cast<double>(m) - 1.0;
      double v = 0.0;
      if (!loess_at(sub, weights, x, opt.seasonal_window, 1, v)) {
        v = (m >= 1 && m <= k) ? sub[m - 1] : 0.0;
      }
      c[phase + m * np] = v;
    }
  }
  return c;
}

std::vector<double> robustness_weights(std::span<const double> residual) {
  std::vector<double> abs_r(residual.size());
  std::transform(residual.begin(), residual.end(), abs_r.begin(),
                 [](double r) { return std::abs(r); });
  std::vector<double> sorted = abs_r;
  const auto mid = sorted.size() / 2;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(mid), sorted.end());
  double median = sorted[mid];
  if (sorted.size() % 2 == 0) {
    median = 0.5 * (median + *std::max_element(sorted.begin(),
                                               sorted.begin() + static_cast<std::ptrdiff_t>(mid)));
  }
  const double h = 6.0 * median;
  std::vector<double> rw(residual.size(), 1.0);
  if (h <= 0.0) return rw;
  for (std::size_t i = 0; i < rw.size(); ++i) {
    const double u = abs_r[i] / h;
    if (u <= 0.001) {
      rw[i] = 1.0;
    } else if (u <= 0.999) {
      const double c = 1.0 - u * u;
      rw[i] = c * c;
    } else {
      rw[i] = 0.0;
    }
  }
  return rw;
}

}  // namespace

std::size_t StlOptions::resolved_trend_window() const {
  return trend_window ? trend_window : next_odd(1.5 * static_cast<double>(period));
}

std::size_t StlOptions::resolved_lowpass_window() const {
  return lowpass_window ? lowpass_window : next_odd(static_cast<double>(period));
}

std::vector<double> loess(std::span<const double> y, std::size_t window, int degree,
                          std::span<const double> weights) {
  std::vector<double> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!loess_at(y, weights, static_cast<double>(i), window, degree, out[i])) out[i] = y[i];
  }
  return out;
}

Decomposition stl_decompose(std::span<const double> series, const StlOptions& options) {
  const auto n = series.size();
  const auto np = options.period;
  if (np < 2 || n < 2 * np) {
    throw Error(ErrorCode::SeriesTooShort,
                "STL needs at least two full periods (" + std::to_string(2 * np) +
                    " points), got " + std::to_string(n));
  }
  if (!options.periodic_seasonal && (options.seasonal_window < 7 || options.seasonal_window % 2 == 0)) {
    throw Error(ErrorCode::InvalidConfig, "seasonal_window must be odd and >= 7");
  }
  const auto nt = options.resolved_trend_window();
  const auto nl = options.resolved_lowpass_window();

  Decomposition d;
  d.period = np;
  d.trend.assign(n, 0.0);
  d.seasonal.assign(n, 0.0);
  std::vector<double> rw;
  std::vector<double> work(n);

  const int outer = std::max(1, options.outer_iterations);
  for (int pass = 0; pass < outer; ++pass) {
    for (int inner = 0; inner < options.inner_iterations; ++inner) {
      for (std::size_t i = 0; i < n; ++i) work[i] = series[i] - d.trend[i];
      const auto c = cycle_subseries(work, rw, options);
      // Low-pass of the cycle-subseries: MA(np), MA(np), MA(3), loess(nl).
      const auto l1 = moving_average(c, np);
      const auto l2 = moving_average(l1, np);
      const auto l3 = moving_average(l2, 3);
      const auto low = loess(l3, nl, 1);
      for (std::size_t i = 0; i < n; ++i) d.seasonal[i] = c[np + i] - low[i];
      for (std::size_t i = 0; i < n; ++i) work[i] = series[i] - d.seasonal[i];
      d.trend = loess(work, nt, 1, rw);
    }
    if (pass + 1 < outer) {
      for (std::size_t i = 0; i < n; ++i) work[i] = series[i] - d.trend[i] - d.seasonal[i];
      rw = robustness_weights(work);
    }
  }
  // Seasonal is re-derived from the residual so that subtracting trend and
  // residual from an input point yields its seasonal value bit-for-bit.
  d.residual.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double detrended = series[i] - d.trend[i];
    d.residual[i] = detrended - d.seasonal[i];
    d.seasonal[i] = detrended - d.residual[i];
  }
  return d;
}

double residualize(double value, std::size_t step, const Decomposition& hist, ResidualMode mode) {
  const auto idx = step % hist.size();
  if (mode == ResidualMode::TrendOnly) return value - hist.trend[idx];
  return value - hist.trend[idx] - hist.residual[idx];
}

void Decomposition::write_csv(const std::filesystem::path& path) const {
  csv::Table table;
  table.header = {"step", "trend", "seasonal", "residual"};
  table.rows.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) {
    table.rows.push_back({std::to_string(i), csv::format_double(trend[i]),
                          csv::format_double(seasonal[i]), csv::format_double(residual[i])});
  }
  csv::write(path, table);
}

Decomposition Decomposition::read_csv(const std::filesystem::path& path, std::size_t period) {
  const auto table = csv::read(path);
  const auto ct = table.column("trend");
  const auto cs = table.column("seasonal");
  const auto cr = table.column("residual");
  Decomposition d;
  d.period = period;
  for (const auto& row : table.rows) {
    d.trend.push_back(csv::parse_double(row[ct]));
    d.seasonal.push_back(csv::parse_double(row[cs]));
    d.residual.push_back(csv::parse_double(row[cr]));
  }
  return d;
}

}  // namespace aquadrift::preprocess
