#include "aquadrift/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "aquadrift/error.hpp"

namespace aquadrift::detector {

ThresholdState update_threshold(std::span<const double> losses, std::uint64_t training_set_id) {
  if (losses.empty()) throw Error(ErrorCode::EmptyTrainingSet, "no training losses");
  if (!std::all_of(losses.begin(), losses.end(), [](double v) { return std::isfinite(v); })) {
    throw Error(ErrorCode::NaNLoss, "non-finite training loss");
  }
  ThresholdState out;
  out.theta = *std::max_element(losses.begin(), losses.end());
  out.training_set_id = training_set_id;
  return out;
}

double score(const neural::SeqModel& model, std::span<const double> window) {
  return model.score(window);
}

int classify(double score, const ThresholdState& threshold, std::span<const double> preceding,
             ClassifyRule rule, std::size_t span) {
  if (!(score > threshold.theta)) return 0;
  if (rule == ClassifyRule::Pointwise) return 1;
  const std::size_t used = std::min(preceding.size(), span > 0 ? span - 1 : 0);
  double sum = score;
  for (std::size_t i = preceding.size() - used; i < preceding.size(); ++i) sum += preceding[i];
  const double mean = sum / static_cast<double>(used + 1);
  return mean > threshold.theta ? 1 : 0;
}

Standardizer Standardizer::fit(std::span<const double> values) {
  Standardizer s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  const double sd = std::sqrt(ss / n);
  s.scale = sd > 1e-12 ? sd : 1.0;
  return s;
}

void DetectorConfig::validate() const {
  if (batch_size == 0) throw Error(ErrorCode::InvalidConfig, "batch_size must be positive");
  if (warmup == 0) throw Error(ErrorCode::InvalidConfig, "warmup must be positive");
}

nlohmann::json DetectorConfig::to_json() const {
  return {{"warmup", warmup},
          {"initial_epochs", initial_epochs},
          {"batch_size", batch_size},
          {"classify_rule", rule == ClassifyRule::WindowedMean ? "windowed_mean" : "pointwise"},
          {"standardize", standardize},
          {"encoding", encoding == EncodingKind::Mean ? "mean" : "sample"},
          {"anomaly_encoding", anomaly_encoding == EncodingKind::Mean ? "mean" : "sample"}};
}

DetectorConfig DetectorConfig::from_json(const nlohmann::json& doc) { return from_json(doc, DetectorConfig{}); }

DetectorConfig DetectorConfig::from_json(const nlohmann::json& doc, DetectorConfig c) {
  c.warmup = doc.value("warmup", c.warmup);
  c.initial_epochs = doc.value("initial_epochs", c.initial_epochs);
  c.batch_size = doc.value("batch_size", c.batch_size);
  c.standardize = doc.value("standardize", c.standardize);
  for (auto [key, field] : {std::pair{"encoding", &c.encoding},
                             std::pair{"anomaly_encoding", &c.anomaly_encoding}}) {
    if (!doc.contains(key)) continue;
    const auto kind = doc.at(key).get<std::string>();
    if (kind == "mean") {
      *field = EncodingKind::Mean;
    } else if (kind == "sample") {
      *field = EncodingKind::Sample;
    } else {
      throw Error(ErrorCode::InvalidConfig, "unknown " + std::string(key) + " '" + kind + "'");
    }
  }
  if (doc.contains("classify_rule")) {
    const auto rule = doc.at("classify_rule").get<std::string>();
    if (rule == "windowed_mean") {
      c.rule = ClassifyRule::WindowedMean;
    } else if (rule == "pointwise") {
      c.rule = ClassifyRule::Pointwise;
    } else {
      throw Error(ErrorCode::InvalidConfig, "unknown classify_rule '" + rule + "'");
    }
  }
  c.validate();
  return c;
}

AnomalyDetector::AnomalyDetector(neural::ModelConfig model_config, DetectorConfig config)
    : model_config_(model_config), config_(config) {
  model_config_.validate();
  config_.validate();
}

const neural::SeqModel& AnomalyDetector::model() const {
  if (!model_) throw Error(ErrorCode::InvalidConfig, "detector has not been fitted");
  return *model_;
}

std::vector<neural::Window> AnomalyDetector::windows_for(std::span<const double> values) const {
  std::vector<double> scaled(values.begin(), values.end());
  for (auto& v : scaled) v = scaler_.apply(v);
  return neural::make_windows(scaled, model_config_.timestep);
}

FitSummary AnomalyDetector::fit(std::span<const double> values, std::size_t epochs,
                                std::uint64_t seed, std::uint64_t training_set_id) {
  if (values.size() < model_config_.timestep) {
    throw Error(ErrorCode::EmptyTrainingSet,
                "need at least " + std::to_string(model_config_.timestep) + " training values");
  }
  scaler_ = config_.standardize ? Standardizer::fit(values) : Standardizer{};
  const auto windows = windows_for(values);
  neural::SeqModel model(model_config_, seed);
  FitSummary summary;
  summary.training = neural::train(model, windows, epochs, config_.batch_size);
  summary.losses = summary.training.final_losses;
  summary.threshold = update_threshold(summary.losses, training_set_id);
  // Separate stream so sampling never perturbs the model's own rng.
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x656e63u};
  encoding_rng_.seed(seq);
  summary.encodings.resize(windows.size());
  summary.anomaly_encodings.resize(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    encode(model.forward(windows[i], neural::Noise::none(model_config_)), summary.encodings[i],
           summary.anomaly_encodings[i]);
  }
  model_ = std::move(model);
  threshold_ = summary.threshold;
  scores_.clear();
  return summary;
}

std::optional<Observation> AnomalyDetector::observe(double value) {
  const auto T = model_config_.timestep;
  window_.push_back(value);
  while (window_.size() > T) window_.pop_front();
  if (!model_ || window_.size() < T) return std::nullopt;

  neural::Window w(T);
  for (std::size_t i = 0; i < T; ++i) w[i] = scaler_.apply(window_[i]);
  const auto fwd = model_->forward(w, neural::Noise::none(model_config_));
  Observation obs;
  obs.score = neural::vae_loss(w, fwd.reconstruction, fwd.mu, fwd.log_var, model_config_.beta).total;
  const std::vector<double> preceding(scores_.begin(), scores_.end());
  obs.prediction = classify(obs.score, threshold_, preceding, config_.rule, T);
  encode(fwd, obs.encoding, obs.anomaly_encoding);
  scores_.push_back(obs.score);
  while (scores_.size() + 1 > T) scores_.pop_front();
  return obs;
}

void AnomalyDetector::encode(const neural::ForwardResult& fwd, std::vector<double>& normal,
                             std::vector<double>& anomalous) {
  std::vector<double> z;
  if (config_.encoding == EncodingKind::Sample || config_.anomaly_encoding == EncodingKind::Sample) {
    std::normal_distribution<double> n01(0.0, 1.0);
    z.resize(fwd.mu.size());
    for (std::size_t j = 0; j < z.size(); ++j) {
      z[j] = fwd.mu[j] + std::exp(0.5 * fwd.log_var[j]) * n01(encoding_rng_);
    }
  }
  normal = config_.encoding == EncodingKind::Mean ? fwd.mu : z;
  anomalous = config_.anomaly_encoding == EncodingKind::Mean ? fwd.mu : z;
}

nlohmann::json AnomalyDetector::checkpoint() const {
  nlohmann::json doc;
  doc["detector"] = config_.to_json();
  doc["threshold"] = {{"theta", threshold_.theta},
                      {"source", threshold_.source},
                      {"training_set_id", threshold_.training_set_id}};
  doc["standardizer"] = {{"mean", scaler_.mean}, {"scale", scaler_.scale}};
  if (model_) doc["model"] = model_->to_json();
  return doc;
}

}  // namespace aquadrift::detector
