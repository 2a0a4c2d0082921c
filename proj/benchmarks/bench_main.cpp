// Microbenchmarks for the hot paths of a sensor run.

#include <benchmark/benchmark.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "aquadrift/drift.hpp"
#include "aquadrift/hydronet.hpp"
#include "aquadrift/neural.hpp"
#include "aquadrift/preprocess.hpp"

using namespace aquadrift;

namespace {

std::vector<double> gaussian(std::size_t n, double shift, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(shift, 1.0);
  std::vector<double> x(n);
  for (auto& v : x) v = d(rng);
  return x;
}

void BM_SteadyState(benchmark::State& state) {
  const auto net = hydronet::Network::load(std::string(AQUADRIFT_DATA_DIR) + "/hanoi_like.json");
  for (auto _ : state) benchmark::DoNotOptimize(hydronet::solve_steady_state(net));
}
BENCHMARK(BM_SteadyState);

void BM_SteadyStateWithLeak(benchmark::State& state) {
  const auto net = hydronet::Network::load(std::string(AQUADRIFT_DATA_DIR) + "/hanoi_like.json");
  const std::vector<hydronet::LeakSpec> leaks{{"14", 0.089, 0.75}};
  for (auto _ : state) benchmark::DoNotOptimize(hydronet::solve_steady_state(net, leaks));
}
BENCHMARK(BM_SteadyStateWithLeak);

void BM_LossAndGradient(benchmark::State& state) {
  neural::SeqModel model({}, 1);
  const auto w = gaussian(model.config().timestep, 0.0, 2);
  const auto noise = model.sample_noise();
  std::vector<double> grad(model.parameters().size());
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.loss_and_gradient(w, noise, grad));
  }
}
BENCHMARK(BM_LossAndGradient);

void BM_Score(benchmark::State& state) {
  neural::SeqModel model({}, 1);
  const auto w = gaussian(model.config().timestep, 0.0, 3);
  for (auto _ : state) benchmark::DoNotOptimize(model.score(w));
}
BENCHMARK(BM_Score);

void BM_TrainEpoch(benchmark::State& state) {
  const auto series = gaussian(1000, 0.0, 4);
  const auto windows = neural::make_windows(series, 10);
  for (auto _ : state) {
    neural::SeqModel model({}, 5);
    benchmark::DoNotOptimize(neural::train(model, windows, 1));
  }
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond);

void BM_KsTwoSample(benchmark::State& state) {
  const auto a = gaussian(200, 0.0, 6);
  const auto b = gaussian(200, 0.3, 7);
  for (auto _ : state) benchmark::DoNotOptimize(drift::ks_two_sample(a, b, 200));
}
BENCHMARK(BM_KsTwoSample);

void BM_StlYear(benchmark::State& state) {
  std::vector<double> x(17520);
  const auto noise = gaussian(x.size(), 0.0, 8);
  for (std::size_t t = 0; t < x.size(); ++t) {
    x[t] = 50.0 + 2.0 * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / 336.0) + 0.1 * noise[t];
  }
  preprocess::StlOptions opts;
  opts.period = 336;
  for (auto _ : state) benchmark::DoNotOptimize(preprocess::stl_decompose(x, opts));
}
BENCHMARK(BM_StlYear)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
