#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "aquadrift/neural.hpp"

namespace gradcheck {

// Per-group ||analytic - numeric|| / (||analytic|| + ||numeric||), central
// differences with step h on every parameter. The step is large enough that
// roundoff stays well below the tolerance for gradients near 1e-7.
inline std::map<std::string, double> relative_errors(const aquadrift::neural::ModelConfig& cfg,
                                                     std::uint64_t seed, double h = 1e-4) {
  using namespace aquadrift::neural;
  SeqModel model(cfg, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::normal_distribution<double> n01(0.0, 1.0);
  // Break the symmetric zero biases so every gate path carries gradient.
  for (auto& p : model.parameters()) p += 0.1 * n01(rng);

  Window w(cfg.timestep);
  for (auto& v : w) v = n01(rng);
  Noise noise;
  noise.epsilon.resize(cfg.latent);
  for (auto& e : noise.epsilon) e = n01(rng);
  noise.dropout_scale.assign(cfg.hidden, 1.0 / (1.0 - cfg.dropout));
  noise.dropout_scale[0] = 0.0;

  std::vector<double> grad(model.parameters().size(), 0.0);
  model.loss_and_gradient(w, noise, grad);

  std::map<std::string, double> out;
  for (const auto& g : model.groups()) {
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = g.offset; i < g.offset + g.size(); ++i) {
      auto params = model.parameters();
      const double keep = params[i];
      params[i] = keep + h;
      const double up = model.loss(w, noise).total;
      params[i] = keep - h;
      const double down = model.loss(w, noise).total;
      params[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      diff2 += (grad[i] - numeric) * (grad[i] - numeric);
      a2 += grad[i] * grad[i];
      n2 += numeric * numeric;
    }
    // A group with no gradient at all (readout.b under a one-channel softmax)
    // has no relative error; report the absolute one instead.
    const double denom = std::sqrt(a2) + std::sqrt(n2);
    out[g.name] = denom > 1e-10 ? std::sqrt(diff2) / denom : std::sqrt(diff2);
  }
  return out;
}

}  // namespace gradcheck
