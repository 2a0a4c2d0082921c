#pragma once

// Per-sensor anomaly decisions: windowed reconstruction scoring against an
// adaptive max-training-loss threshold.

#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "aquadrift/neural.hpp"
#include "json.hpp"

namespace aquadrift::detector {

struct ThresholdState {
  double theta = 0.0;
  std::string source = "max_training_loss";
  std::uint64_t training_set_id = 0;
};

// theta = max(losses). Throws Error(EmptyTrainingSet) on an empty list and
// Error(NaNLoss) on a non-finite entry.
ThresholdState update_threshold(std::span<const double> losses,
                                std::uint64_t training_set_id = 0);

// Eval-mode total loss of one window.
double score(const neural::SeqModel& model, std::span<const double> window);

enum class ClassifyRule {
  WindowedMean,  // score > theta and mean of the last `span` scores > theta
  Pointwise,     // score > theta
};

// `preceding` holds earlier scores, oldest first; only the most recent
// span - 1 of them are used.
int classify(double score, const ThresholdState& threshold, std::span<const double> preceding,
             ClassifyRule rule = ClassifyRule::WindowedMean, std::size_t span = 10);

struct Standardizer {
  double mean = 0.0;
  double scale = 1.0;

  static Standardizer fit(std::span<const double> values);
  double apply(double value) const noexcept { return (value - mean) / scale; }
};

enum class EncodingKind {
  Mean,    // latent mean mu
  Sample,  // z = mu + exp(log_var / 2) eps, eps from the detector's own stream
};

struct DetectorConfig {
  std::size_t warmup = 1000;
  std::size_t initial_epochs = 100;
  std::size_t batch_size = 64;
  ClassifyRule rule = ClassifyRule::WindowedMean;
  // Optional z-scoring with the training set's mean/std. Off by default:
  // scaled inputs push leak and blockage windows into the same saturated
  // region of the encoder, and DD2 can no longer tell them apart.
  bool standardize = false;
  // What drift buffers receive. Successive windows overlap in all but one
  // reading, so mu forms a strongly autocorrelated sequence; a posterior
  // draw carries the encoder's own uncertainty and keeps the KS samples
  // close to exchangeable under stationarity.
  EncodingKind encoding = EncodingKind::Sample;
  // What the anomaly buffers receive. The distance test has no
  // exchangeability assumption and a posterior draw would bury it in
  // sampling noise, so the mean is used.
  EncodingKind anomaly_encoding = EncodingKind::Mean;

  void validate() const;
  nlohmann::json to_json() const;
  static DetectorConfig from_json(const nlohmann::json& doc);
  static DetectorConfig from_json(const nlohmann::json& doc, DetectorConfig defaults);
};

struct Observation {
  double score = 0.0;
  int prediction = 0;
  std::vector<double> encoding;          // per DetectorConfig::encoding
  std::vector<double> anomaly_encoding;  // per DetectorConfig::anomaly_encoding
};

struct FitSummary {
  ThresholdState threshold;
  std::vector<double> losses;                  // final eval loss per training window
  std::vector<std::vector<double>> encodings;          // encoding per training window
  std::vector<std::vector<double>> anomaly_encodings;  // anomaly encoding per training window
  neural::TrainResult training;
};

class AnomalyDetector {
 public:
  AnomalyDetector(neural::ModelConfig model_config, DetectorConfig config);

  // Fresh model trained on `values` (raw residualized readings). Resets
  // the score history; the input window carries over.
  FitSummary fit(std::span<const double> values, std::size_t epochs, std::uint64_t seed,
                 std::uint64_t training_set_id);

  // Pushes one reading. Empty until the model is fitted and a full window
  // of readings exists.
  std::optional<Observation> observe(double value);

  bool fitted() const noexcept { return model_.has_value(); }
  const neural::SeqModel& model() const;
  const ThresholdState& threshold() const noexcept { return threshold_; }
  const Standardizer& standardizer() const noexcept { return scaler_; }
  const neural::ModelConfig& model_config() const noexcept { return model_config_; }
  const DetectorConfig& config() const noexcept { return config_; }

  std::vector<neural::Window> windows_for(std::span<const double> values) const;

  nlohmann::json checkpoint() const;

 private:
  neural::ModelConfig model_config_;
  DetectorConfig config_;
  std::optional<neural::SeqModel> model_;
  ThresholdState threshold_;
  Standardizer scaler_;
  std::deque<double> window_;
  std::deque<double> scores_;
  std::mt19937_64 encoding_rng_;

  // Fills both encodings, drawing at most one posterior sample.
  void encode(const neural::ForwardResult& fwd, std::vector<double>& normal,
              std::vector<double>& anomalous);
};

}  // namespace aquadrift::detector
