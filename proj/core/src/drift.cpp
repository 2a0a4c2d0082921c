#include "aquadrift/drift.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "aquadrift/error.hpp"

namespace aquadrift::drift {

void DriftConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
  if (w_drift == 0 || w_distance == 0 || w_warn == 0) fail("window sizes must be positive");
  if (!(p_alarm > 0.0 && p_warn > p_alarm && p_warn <= 1.0)) {
    fail("thresholds must satisfy 0 < p_alarm < p_warn <= 1");
  }
  if (dis_threshold && !(*dis_threshold >= 0.0)) fail("dis_threshold must be >= 0");
  if (!(dis_calibration_factor > 0.0)) fail("dis_calibration_factor must be positive");
  if (dis_fallback_blocks < 2) fail("dis_fallback_blocks must be >= 2");
  if (post_alarm_collect == 0) fail("post_alarm_collect must be positive");
}

nlohmann::json DriftConfig::to_json() const {
  nlohmann::json doc = {{"w_drift", w_drift},
                        {"w_distance", w_distance},
                        {"w_warn", w_warn},
                        {"p_warn", p_warn},
                        {"p_alarm", p_alarm},
                        {"dis_calibration_factor", dis_calibration_factor},
                        {"dis_fallback_blocks", dis_fallback_blocks},
                        {"expiry_time", expiry_time},
                        {"retrain_epochs", retrain_epochs},
                        {"post_alarm_collect", post_alarm_collect},
                        {"min_warn_train", min_warn_train},
                        {"n_eff", n_eff_mode == NEffMode::AsPrinted ? "as_printed" : "conventional"}};
  doc["dis_threshold"] = dis_threshold ? nlohmann::json(*dis_threshold) : nlohmann::json(nullptr);
  return doc;
}

DriftConfig DriftConfig::from_json(const nlohmann::json& doc) { return from_json(doc, DriftConfig{}); }

DriftConfig DriftConfig::from_json(const nlohmann::json& doc, DriftConfig c) {
  c.w_drift = doc.value("w_drift", c.w_drift);
  c.w_distance = doc.value("w_distance", c.w_distance);
  c.w_warn = doc.value("w_warn", c.w_warn);
  c.p_warn = doc.value("p_warn", c.p_warn);
  c.p_alarm = doc.value("p_alarm", c.p_alarm);
  c.dis_calibration_factor = doc.value("dis_calibration_factor", c.dis_calibration_factor);
  c.dis_fallback_blocks = doc.value("dis_fallback_blocks", c.dis_fallback_blocks);
  c.expiry_time = doc.value("expiry_time", c.expiry_time);
  c.retrain_epochs = doc.value("retrain_epochs", c.retrain_epochs);
  c.post_alarm_collect = doc.value("post_alarm_collect", c.post_alarm_collect);
  c.min_warn_train = doc.value("min_warn_train", c.min_warn_train);
  if (doc.contains("dis_threshold")) {
    const auto& d = doc.at("dis_threshold");
    c.dis_threshold = d.is_null() ? std::nullopt : std::optional<double>(d.get<double>());
  }
  if (doc.contains("n_eff")) {
    const auto mode = doc.at("n_eff").get<std::string>();
    if (mode == "as_printed") {
      c.n_eff_mode = NEffMode::AsPrinted;
    } else if (mode == "conventional") {
      c.n_eff_mode = NEffMode::Conventional;
    } else {
      throw Error(ErrorCode::InvalidConfig, "unknown n_eff mode '" + mode + "'");
    }
  }
  c.validate();
  return c;
}

double ks_statistic(std::span<const double> ref, std::span<const double> mov) {
  std::vector<double> a(ref.begin(), ref.end());
  std::vector<double> b(mov.begin(), mov.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

double effective_size(std::size_t n, std::size_t m, std::size_t w_drift, NEffMode mode) {
  if (mode == NEffMode::Conventional) {
    const double dn = static_cast<double>(n);
    const double dm = static_cast<double>(m);
    return dn * dm / (dn + dm);
  }
  const double w = static_cast<double>(w_drift);
  return w * w / (2.0 * w);
}

double ks_p_value(double statistic, double n_eff) {
  if (statistic <= 0.0) return 1.0;
  const double root = std::sqrt(n_eff);
  const double gamma = (root + 0.12 + 0.11 / root) * statistic;
  const double g2 = gamma * gamma;
  double sum = 0.0;
  for (int i = 1; i <= 100; ++i) {
    const double term = std::exp(-2.0 * i * i * g2);
    sum += (i % 2 == 1 ? term : -term);
    if (term < 1e-12) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

KsResult ks_two_sample(std::span<const double> ref, std::span<const double> mov,
                       std::size_t w_drift, NEffMode mode) {
  if (ref.empty() || mov.empty()) throw Error(ErrorCode::EmptySample, "KS test needs two non-empty samples");
  KsResult r;
  r.statistic = ks_statistic(ref, mov);
  r.n_eff = effective_size(ref.size(), mov.size(), w_drift, mode);
  r.p_value = ks_p_value(r.statistic, r.n_eff);
  return r;
}

DistanceResult distance_test(std::span<const Encoding> ref, std::span<const Encoding> mov,
                             std::size_t w_distance, double threshold) {
  if (ref.size() != w_distance || mov.size() != w_distance) {
    throw Error(ErrorCode::BufferNotFull, "distance test needs " + std::to_string(w_distance) +
                                              " rows in both buffers");
  }
  double ss = 0.0;
  for (std::size_t i = 0; i < w_distance; ++i) {
    if (ref[i].size() != mov[i].size()) {
      throw Error(ErrorCode::InvalidConfig, "encoding dimensions differ");
    }
    for (std::size_t j = 0; j < ref[i].size(); ++j) {
      const double d = ref[i][j] - mov[i][j];
      ss += d * d;
    }
  }
  DistanceResult out;
  out.dis = std::sqrt(ss);
  out.alarm = out.dis > threshold;
  return out;
}

double calibrate_dis_threshold(std::span<const Encoding> encodings, std::span<const double> losses,
                               const detector::ThresholdState& threshold, std::size_t w_distance,
                               double factor, detector::ClassifyRule rule, std::size_t span,
                               std::size_t fallback_blocks) {
  // Anomaly-classified training instances, replaying the stream order.
  std::vector<std::size_t> picked;
  std::vector<double> history;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (detector::classify(losses[i], threshold, history, rule, span)) picked.push_back(i);
    history.push_back(losses[i]);
  }
  if (picked.size() < 2 * w_distance) {
    // Highest-loss encodings, kept in arrival order.
    const std::size_t blocks = std::min(fallback_blocks, losses.size() / w_distance);
    std::vector<std::size_t> order(losses.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return losses[a] > losses[b]; });
    picked.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(blocks * w_distance));
    std::sort(picked.begin(), picked.end());
  }
  const std::size_t blocks = picked.size() / w_distance;
  if (blocks < 2) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t b = 0; b + 1 < blocks; ++b) {
    std::vector<Encoding> ref, mov;
    for (std::size_t r = 0; r < w_distance; ++r) {
      ref.push_back(encodings[picked[b * w_distance + r]]);
      mov.push_back(encodings[picked[(b + 1) * w_distance + r]]);
    }
    worst = std::max(worst, distance_test(ref, mov, w_distance, 0.0).dis);
  }
  return factor * worst;
}

std::string_view to_string(AlarmSource source) noexcept {
  switch (source) {
    case AlarmSource::None: return "none";
    case AlarmSource::DD1: return "DD1";
    case AlarmSource::DD2: return "DD2";
  }
  return "none";
}

std::string_view to_string(DriftAction action) noexcept {
  switch (action) {
    case DriftAction::None: return "none";
    case DriftAction::Warn: return "warn";
    case DriftAction::RetrainFromWarnBuffer: return "retrain_from_warnbuf";
    case DriftAction::RetrainAfterCollect: return "retrain_after_collect";
  }
  return "none";
}

DriftState::DriftState(const DriftConfig& config)
    : ref_n(config.w_drift),
      mov_n(config.w_drift),
      ref_an(config.w_distance),
      mov_an(config.w_distance),
      mov_warn(config.w_warn) {
  if (config.dis_threshold) dis_threshold = *config.dis_threshold;
}

Dd1Result dd1_step(DriftState& state, const DriftConfig& config, const Encoding& encoding) {
  Dd1Result out;
  if (!state.ref_n.full()) {
    state.ref_n.push(encoding);
    return out;
  }
  state.mov_n.push(encoding);
  if (!state.mov_n.full()) return out;

  out.tested = true;
  const std::size_t dims = encoding.size();
  std::vector<double> ref(state.ref_n.size()), mov(state.mov_n.size());
  double p_min = 1.0;
  for (std::size_t d = 0; d < dims; ++d) {
    for (std::size_t i = 0; i < ref.size(); ++i) ref[i] = state.ref_n[i][d];
    for (std::size_t i = 0; i < mov.size(); ++i) mov[i] = state.mov_n[i][d];
    const auto ks = ks_two_sample(ref, mov, config.w_drift, config.n_eff_mode);
    out.p_values.push_back(ks.p_value);
    p_min = std::min(p_min, ks.p_value);
  }
  out.p_star = std::min(1.0, static_cast<double>(dims) * p_min);

  if (out.p_star < config.p_warn && !state.flag_warn && !state.warn_expired_this_step) {
    state.flag_warn = true;
    state.warn_age = 0;
  }
  if (out.p_star < config.p_alarm) {
    state.flag_alarm = true;
    state.alarm_source = AlarmSource::DD1;
  }
  return out;
}

DriftStepResult drift_step(DriftState& state, const DriftConfig& config, InstanceKind kind,
                           const Encoding& encoding, double raw_value) {
  DriftStepResult out;
  state.warn_expired_this_step = false;

  if (state.collecting) {
    state.collected.push_back(raw_value);
    if (state.collected.size() >= config.post_alarm_collect) {
      out.action = DriftAction::RetrainAfterCollect;
      out.training_data = state.collected;
    }
    return out;
  }
  if (state.flag_alarm) return out;  // retrain pending, detection paused

  if (state.flag_warn) {
    ++state.warn_age;
    if (state.warn_age > config.expiry_time) {
      state.flag_warn = false;
      state.warn_age = 0;
      state.mov_warn.clear();
      state.warn_expired_this_step = true;
    } else {
      state.mov_warn.push(raw_value);
    }
  }

  const bool was_warned = state.flag_warn;
  if (kind == InstanceKind::Normal) {
    const auto dd1 = dd1_step(state, config, encoding);
    if (dd1.tested) out.p_star = dd1.p_star;
  } else if (!state.ref_an.full()) {
    state.ref_an.push(encoding);
  } else {
    state.mov_an.push(encoding);
    if (state.mov_an.full()) {
      const auto ref = state.ref_an.to_vector();
      const auto mov = state.mov_an.to_vector();
      const auto dd2 = distance_test(ref, mov, config.w_distance, state.dis_threshold);
      out.dis = dd2.dis;
      if (dd2.alarm) {
        state.flag_alarm = true;
        state.alarm_source = AlarmSource::DD2;
      }
    }
  }

  if (state.flag_warn && !was_warned) {
    state.mov_warn.push(raw_value);
    out.action = DriftAction::Warn;
  }
  if (state.flag_alarm) {
    out.alarm_raised = true;
    if (state.alarm_source == AlarmSource::DD1 && state.mov_warn.size() >= config.min_warn_train) {
      out.action = DriftAction::RetrainFromWarnBuffer;
      out.training_data = state.mov_warn.to_vector();
    } else {
      state.collecting = true;
      state.collected.clear();
      out.action = DriftAction::None;
    }
  }
  return out;
}

void reset_after_retrain(DriftState& state) {
  state.ref_n.clear();
  state.mov_n.clear();
  state.ref_an.clear();
  state.mov_an.clear();
  state.mov_warn.clear();
  state.flag_warn = false;
  state.flag_alarm = false;
  state.warn_age = 0;
  state.alarm_source = AlarmSource::None;
  state.collecting = false;
  state.collected.clear();
  state.warn_expired_this_step = false;
}

double dis_threshold_after_fit(const detector::FitSummary& fit, const DriftConfig& config,
                               const detector::AnomalyDetector& detector) {
  if (config.dis_threshold) return *config.dis_threshold;
  return calibrate_dis_threshold(fit.anomaly_encodings, fit.losses, fit.threshold, config.w_distance,
                                 config.dis_calibration_factor, detector.config().rule,
                                 detector.model_config().timestep, config.dis_fallback_blocks);
}

RetrainResult execute_retrain(detector::AnomalyDetector& detector, DriftState& state,
                              const DriftConfig& config, std::span<const double> training_data,
                              std::uint64_t seed, std::uint64_t training_set_id) {
  if (training_data.size() < detector.model_config().timestep) {
    throw Error(ErrorCode::EmptyTrainingSet, "retraining data cannot form a window");
  }
  RetrainResult out;
  out.fit = detector.fit(training_data, config.retrain_epochs, seed, training_set_id);
  out.dis_threshold = dis_threshold_after_fit(out.fit, config, detector);
  reset_after_retrain(state);
  state.dis_threshold = out.dis_threshold;
  ++state.retrain_count;
  return out;
}

}  // namespace aquadrift::drift
