#pragma once

// LSTM variational autoencoder over fixed-length scalar windows, with
// hand-written backpropagation through time and an Adam optimizer.
//
// Encoder: LSTM(hidden) over the window, final hidden state -> dropout
// (train only) -> leaky ReLU -> linear heads for mu and log sigma^2.
// Decoder: LSTM(hidden) fed the latent sample at every step, followed by a
// per-step linear readout (optionally a softmax across the window).

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace aquadrift::neural {

struct ModelConfig {
  std::size_t timestep = 10;
  std::size_t hidden = 8;
  std::size_t latent = 2;
  double beta = 0.1;
  double dropout = 0.1;
  double learning_rate = 0.001;
  double leaky_slope = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-7;
  bool softmax_output = false;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& doc);
  static ModelConfig from_json(const nlohmann::json& doc, ModelConfig defaults);
};

enum class Mode { Train, Eval };

using Window = std::vector<double>;

struct LossTerms {
  double total = 0.0;
  double recon = 0.0;
  double kl = 0.0;
};

// recon = mean squared error, kl = -1/2 sum(1 + lv - mu^2 - exp(lv)),
// total = recon + beta * kl.
LossTerms vae_loss(std::span<const double> x, std::span<const double> x_hat,
                   std::span<const double> mu, std::span<const double> log_var, double beta);

struct ForwardResult {
  std::vector<double> reconstruction;
  std::vector<double> mu;
  std::vector<double> log_var;
  std::vector<double> z;
};

// Stochastic inputs of one forward pass: the reparameterization draw and
// the (inverted) dropout multipliers on the encoder output.
struct Noise {
  std::vector<double> epsilon;
  std::vector<double> dropout_scale;

  static Noise none(const ModelConfig& config);
};

struct ParameterGroup {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const noexcept { return rows * cols; }
};

class SeqModel {
 public:
  // He-normal weights, zero biases, forget-gate bias 1.
  SeqModel(const ModelConfig& config, std::uint64_t seed);
  static SeqModel zeros(const ModelConfig& config, std::uint64_t seed = 0);

  const ModelConfig& config() const noexcept { return config_; }
  std::span<const double> parameters() const noexcept { return params_; }
  std::span<double> parameters() noexcept { return params_; }
  const std::vector<ParameterGroup>& groups() const noexcept { return groups_; }
  const ParameterGroup& group(const std::string& name) const;

  // Train mode draws noise from the model's generator.
  ForwardResult forward(std::span<const double> window, Mode mode);
  ForwardResult forward(std::span<const double> window, const Noise& noise) const;

  LossTerms loss(std::span<const double> window, const Noise& noise) const;
  // Adds d(total)/d(params) into `grad`.
  LossTerms loss_and_gradient(std::span<const double> window, const Noise& noise,
                              std::span<double> grad) const;

  std::vector<double> encode(std::span<const double> window) const;
  double score(std::span<const double> window) const;

  Noise sample_noise();
  std::mt19937_64& rng() noexcept { return rng_; }

  void adam_step(std::span<const double> grad);
  std::uint64_t adam_steps() const noexcept { return adam_t_; }

  bool all_finite() const;

  // Versioned checkpoint: config, every parameter group, optimizer moments
  // and generator state.
  nlohmann::json to_json() const;
  static SeqModel from_json(const nlohmann::json& doc);
  void save(const std::filesystem::path& path) const;
  static SeqModel load(const std::filesystem::path& path);

 private:
  explicit SeqModel(const ModelConfig& config);

  struct Trace;
  void run_forward(std::span<const double> window, const Noise& noise, Trace& trace) const;

  ModelConfig config_;
  std::vector<ParameterGroup> groups_;
  std::vector<double> params_;
  std::vector<double> adam_m_;
  std::vector<double> adam_v_;
  std::uint64_t adam_t_ = 0;
  std::mt19937_64 rng_;
};

struct TrainResult {
  double initial_mean_loss = 0.0;        // eval-mode, before the first update
  std::vector<double> epoch_mean_loss;   // train-mode batch losses per epoch
  std::vector<double> final_losses;      // eval-mode, per training window
};

// Mini-batch Adam on the total loss. Throws Error(NaNLoss) naming the
// epoch and batch on a non-finite loss or parameter.
TrainResult train(SeqModel& model, std::span<const Window> windows, std::size_t epochs,
                  std::size_t batch_size = 64);

std::vector<double> eval_losses(const SeqModel& model, std::span<const Window> windows);

// Overlapping windows of `timestep` consecutive values, most recent last.
std::vector<Window> make_windows(std::span<const double> values, std::size_t timestep);

}  // namespace aquadrift::neural
