#pragma once

// Dual drift detection over latent encodings: a per-dimension two-sample
// KS test on normal instances (DD1, with warn/alarm levels) and a
// Euclidean distance test on anomalous instances (DD2), plus the buffer
// state machine that schedules retraining.

#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "aquadrift/detector.hpp"
#include "json.hpp"

namespace aquadrift::drift {

enum class NEffMode {
  AsPrinted,     // W^2 / (2W) = W / 2
  Conventional,  // n m / (n + m)
};

struct DriftConfig {
  std::size_t w_drift = 200;
  std::size_t w_distance = 50;
  std::size_t w_warn = 1000;
  double p_warn = 0.01;
  double p_alarm = 0.0001;
  std::optional<double> dis_threshold;  // overrides calibration when set
  double dis_calibration_factor = 3.0;
  // Blocks of highest-loss training encodings used when too few training
  // windows were classified anomalous.
  std::size_t dis_fallback_blocks = 2;
  std::size_t expiry_time = 100;
  std::size_t retrain_epochs = 500;
  std::size_t post_alarm_collect = 500;
  // A DD1 alarm trains on the warning buffer only if it holds at least this
  // many readings; otherwise post-alarm readings are collected instead.
  std::size_t min_warn_train = 200;
  NEffMode n_eff_mode = NEffMode::AsPrinted;

  void validate() const;
  nlohmann::json to_json() const;
  static DriftConfig from_json(const nlohmann::json& doc);
  static DriftConfig from_json(const nlohmann::json& doc, DriftConfig defaults);
};

// ---- DD1 -----------------------------------------------------------------

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
  double n_eff = 0.0;
};

// max |F_ref - F_mov| over the pooled sample points.
double ks_statistic(std::span<const double> ref, std::span<const double> mov);

double effective_size(std::size_t n, std::size_t m, std::size_t w_drift, NEffMode mode);

// 2 sum_{i>=1} (-1)^(i-1) exp(-2 i^2 gamma^2) with
// gamma = (sqrt(N) + 0.12 + 0.11/sqrt(N)) D, clamped to [0, 1]; D = 0 gives 1.
double ks_p_value(double statistic, double n_eff);

// Throws Error(EmptySample) if either sample is empty.
KsResult ks_two_sample(std::span<const double> ref, std::span<const double> mov,
                       std::size_t w_drift, NEffMode mode = NEffMode::AsPrinted);

// ---- buffers ---------------------------------------------------------------

// FIFO with a fixed capacity; pushing into a full buffer evicts the oldest.
template <typename T>
class BoundedBuffer {
 public:
  explicit BoundedBuffer(std::size_t capacity) : capacity_(capacity) {}

  void push(T value) {
    if (capacity_ == 0) return;
    if (items_.size() == capacity_) items_.pop_front();
    items_.push_back(std::move(value));
  }
  void clear() noexcept { items_.clear(); }

  bool full() const noexcept { return items_.size() == capacity_; }
  bool empty() const noexcept { return items_.empty(); }
  std::size_t size() const noexcept { return items_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }

  const T& operator[](std::size_t i) const { return items_[i]; }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  std::vector<T> to_vector() const { return {items_.begin(), items_.end()}; }

 private:
  std::size_t capacity_;
  std::deque<T> items_;
};

using Encoding = std::vector<double>;

// ---- DD2 -----------------------------------------------------------------

struct DistanceResult {
  double dis = 0.0;
  bool alarm = false;
};

// Frobenius distance between two W_distance-row encoding matrices, rows in
// arrival order. Throws Error(BufferNotFull) unless both hold exactly
// `w_distance` rows.
DistanceResult distance_test(std::span<const Encoding> ref, std::span<const Encoding> mov,
                             std::size_t w_distance, double threshold);

// Offline DD2 threshold: `factor` times the largest distance between
// successive disjoint W_distance-row blocks of the anomaly-classified
// training encodings, or of the highest-loss ones when none were flagged.
// Infinite (DD2 disabled) when fewer than two blocks can be formed.
double calibrate_dis_threshold(std::span<const Encoding> encodings,
                               std::span<const double> losses,
                               const detector::ThresholdState& threshold,
                               std::size_t w_distance, double factor,
                               detector::ClassifyRule rule, std::size_t span,
                               std::size_t fallback_blocks = 2);

// ---- state machine ---------------------------------------------------------

enum class AlarmSource { None, DD1, DD2 };
enum class DriftAction { None, Warn, RetrainFromWarnBuffer, RetrainAfterCollect };
enum class InstanceKind { Normal, Anomalous };

std::string_view to_string(AlarmSource source) noexcept;
std::string_view to_string(DriftAction action) noexcept;

struct DriftState {
  explicit DriftState(const DriftConfig& config);

  BoundedBuffer<Encoding> ref_n;
  BoundedBuffer<Encoding> mov_n;
  BoundedBuffer<Encoding> ref_an;
  BoundedBuffer<Encoding> mov_an;
  BoundedBuffer<double> mov_warn;
  bool flag_warn = false;
  bool flag_alarm = false;
  std::size_t warn_age = 0;
  AlarmSource alarm_source = AlarmSource::None;
  double dis_threshold = std::numeric_limits<double>::infinity();

  // Post-alarm collection in progress; DD1/DD2 are paused meanwhile.
  bool collecting = false;
  std::vector<double> collected;
  std::size_t retrain_count = 0;
  // Set on the step a warning expires so it is not re-raised that step.
  bool warn_expired_this_step = false;
};

struct Dd1Result {
  bool tested = false;
  double p_star = 1.0;
  std::vector<double> p_values;  // per latent dimension
};

// Adds a normal-instance encoding (filling ref_N first, then sliding
// mov_N) and, once both are full, tests every latent dimension. The
// Bonferroni-combined p* = min(1, d * min_i p_i) drives the flags.
Dd1Result dd1_step(DriftState& state, const DriftConfig& config, const Encoding& encoding);

struct DriftStepResult {
  DriftAction action = DriftAction::None;
  std::optional<double> p_star;
  std::optional<double> dis;
  bool alarm_raised = false;  // an alarm fired on this step
  std::vector<double> training_data;  // set for the two retrain actions
};

DriftStepResult drift_step(DriftState& state, const DriftConfig& config, InstanceKind kind,
                           const Encoding& encoding, double raw_value);

// Clears all five buffers and the flags after a model replacement.
void reset_after_retrain(DriftState& state);

struct RetrainResult {
  detector::FitSummary fit;
  double dis_threshold = 0.0;
};

// Trains a fresh model on `training_data`, updates theta, recalibrates the
// DD2 threshold and resets `state`. Throws Error(EmptyTrainingSet) when
// the data cannot form a single window.
RetrainResult execute_retrain(detector::AnomalyDetector& detector, DriftState& state,
                              const DriftConfig& config, std::span<const double> training_data,
                              std::uint64_t seed, std::uint64_t training_set_id);

// Applies the DD2 calibration (or the configured override) after a fit.
double dis_threshold_after_fit(const detector::FitSummary& fit, const DriftConfig& config,
                               const detector::AnomalyDetector& detector);

}  // namespace aquadrift::drift
