#pragma once

// Prequential evaluation and end-to-end orchestration: residualize, score,
// classify, drift-check and retrain, one independent pipeline per sensor.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aquadrift/detector.hpp"
#include "aquadrift/drift.hpp"
#include "aquadrift/neural.hpp"
#include "aquadrift/preprocess.hpp"
#include "aquadrift/scenario.hpp"
#include "json.hpp"

namespace aquadrift::evalrun {

// Faded confusion counters. Each update decays every counter by alpha
// before incrementing; a recall whose denominator is <= 1e-12 counts as 1.
class PrequentialTracker {
 public:
  explicit PrequentialTracker(double alpha = 0.99);

  double update(int truth, int prediction);

  double alpha() const noexcept { return alpha_; }
  double tp() const noexcept { return tp_; }
  double positives() const noexcept { return p_; }
  double tn() const noexcept { return tn_; }
  double negatives() const noexcept { return n_; }
  double recall_positive() const noexcept;
  double recall_negative() const noexcept;
  double gmean() const noexcept;
  const std::vector<double>& series() const noexcept { return series_; }

 private:
  double alpha_;
  double tp_ = 0.0, p_ = 0.0, tn_ = 0.0, n_ = 0.0;
  std::vector<double> series_;
};

struct RunConfig {
  std::filesystem::path scenario_file;
  std::vector<std::string> sensors;  // empty: every scenario sensor
  std::uint64_t seed = 0;
  // Overrides the scenario's rng_seed when set.
  std::optional<std::uint64_t> scenario_seed;
  std::size_t seeds = 1;
  std::filesystem::path output_dir = "run";
  neural::ModelConfig model;
  detector::DetectorConfig detector;
  drift::DriftConfig drift;
  preprocess::StlOptions stl;
  preprocess::ResidualMode residual_mode = preprocess::ResidualMode::TrendAndResidual;
  double fading_factor = 0.99;
  bool parallel = true;

  void validate() const;
  // Relative scenario/output paths resolve against `base_dir`.
  static RunConfig from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
  static RunConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

struct DetectionRow {
  std::int64_t step = 0;
  double score = 0.0;
  double theta = 0.0;
  int prediction = 0;
};

struct DriftRow {
  std::int64_t step = 0;
  std::optional<double> p_star;
  std::optional<double> dis;
  bool flag_warn = false;
  bool flag_alarm = false;
  drift::AlarmSource alarm_source = drift::AlarmSource::None;
  drift::DriftAction action = drift::DriftAction::None;
};

struct SensorRun {
  std::string sensor_id;
  std::vector<DetectionRow> detections;
  std::vector<DriftRow> drift;
  std::vector<double> gmean;  // aligned with `detections`
  std::vector<std::int64_t> alarm_steps;
  std::vector<std::int64_t> retrain_steps;
  double initial_theta = 0.0;
  std::vector<double> dis_thresholds;  // one per training set, initial fit first

  // G at `step`, or nullopt before predictions start.
  std::optional<double> gmean_at(std::int64_t step) const;
};

struct SensorMetrics {
  std::string sensor_id;
  double mean_gmean_blockage = 0.0;  // NaN when no blockage step was scored
  std::size_t true_positives = 0;    // predictions of 1 inside blockage intervals
  std::size_t false_positives = 0;   // predictions of 1 outside them
  std::size_t false_drift_alarms = 0;
  double anomaly_rate = 0.0;
  std::vector<std::int64_t> alarm_steps;
  std::vector<std::int64_t> retrain_steps;
  std::vector<double> dis_thresholds;
};

// Steps with neither label set and no labeled step in the preceding
// `settle` steps.
std::vector<bool> stationary_mask(std::span<const std::uint8_t> anomaly_label,
                                  std::span<const std::uint8_t> drift_label,
                                  std::size_t settle = 1000);

SensorMetrics sensor_metrics(const SensorRun& run, std::span<const std::uint8_t> anomaly_label,
                             std::span<const std::uint8_t> drift_label);

// One sensor pipeline over a residualized stream. The first
// `detector.warmup` values train the initial model; predictions run from
// that step on.
SensorRun run_sensor(std::span<const double> residualized,
                     std::span<const std::uint8_t> anomaly_label, const std::string& sensor_id,
                     const RunConfig& cfg, std::uint64_t model_seed);

// Residualizes `live` against the STL decomposition of `historical`.
std::vector<double> residualize_series(std::span<const double> live,
                                       const preprocess::Decomposition& hist,
                                       preprocess::ResidualMode mode);

struct SeedRun {
  std::uint64_t scenario_seed = 0;
  std::uint64_t model_seed = 0;
  scenario::LabeledStream stream;
  std::vector<SensorRun> sensors;
  std::vector<SensorMetrics> metrics;
};

// Seed index k uses scenario seed (scenario or override) + k and model
// seed cfg.seed + k.
SeedRun run_seed(const RunConfig& cfg, const scenario::Scenario& scn, std::size_t k);

struct RunResult {
  std::vector<SeedRun> seeds;
  nlohmann::json summary;
};

RunResult run_pipeline(const RunConfig& cfg, const scenario::Scenario& scn);
RunResult run_pipeline(const RunConfig& cfg);

// detection_<id>.csv, drift_<id>.csv (seed-suffixed when seeds > 1),
// stream.csv, metrics.csv, summary.json, the resolved config.json and a
// scenario.json with the network inlined.
void write_artifacts(const RunConfig& cfg, const scenario::Scenario& scn,
                     const RunResult& result, const std::filesystem::path& dir);

struct DownstreamRow {
  std::string sensor_id;
  bool downstream = false;
  std::size_t tp = 0;
  std::size_t fp = 0;
};

// Tags come from the pre-event flow direction at unit demand, no leaks.
std::vector<bool> downstream_tags(const hydronet::Network& net,
                                  std::span<const std::string> sensor_ids,
                                  const std::string& blocked_pipe);

std::vector<DownstreamRow> downstream_report(const scenario::Scenario& scn,
                                             const SeedRun& run,
                                             const std::string& blocked_pipe);

// Reads a run directory written by write_artifacts and rebuilds the
// per-sensor TP/FP table from its detection logs.
std::vector<DownstreamRow> downstream_report(const std::filesystem::path& run_dir,
                                             const std::string& blocked_pipe);

double mean(std::span<const double> xs);
double standard_error(std::span<const double> xs);
double median(std::vector<double> xs);

}  // namespace aquadrift::evalrun
