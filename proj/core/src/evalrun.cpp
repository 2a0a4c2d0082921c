#include "aquadrift/evalrun.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <limits>
#include <numeric>

#include "aquadrift/csv.hpp"
#include "aquadrift/error.hpp"

namespace aquadrift::evalrun {

namespace {

constexpr double kRecallEpsilon = 1e-12;

// Stream ids for model seeds; scenario sub-streams use small ids.
constexpr std::uint64_t kSensorModelStream = 1000;
constexpr std::uint64_t kRetrainStream = 5000;

std::string opt_cell(const std::optional<double>& v) {
  return v ? csv::format_double(*v) : std::string{};
}

std::string suffix_for(std::size_t seeds, std::size_t k) {
  return seeds > 1 ? "_s" + std::to_string(k) : std::string{};
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, path.string() + ": " + e.what());
  }
}

// NaN-safe JSON number.
nlohmann::json num(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

}  // namespace

// ---- prequential ----------------------------------------------------------

PrequentialTracker::PrequentialTracker(double alpha) : alpha_(alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "fading factor must lie in (0, 1]");
  }
}

double PrequentialTracker::recall_positive() const noexcept {
  return p_ > kRecallEpsilon ? tp_ / p_ : 1.0;
}

double PrequentialTracker::recall_negative() const noexcept {
  return n_ > kRecallEpsilon ? tn_ / n_ : 1.0;
}

double PrequentialTracker::gmean() const noexcept {
  return std::sqrt(recall_positive() * recall_negative());
}

double PrequentialTracker::update(int truth, int prediction) {
  tp_ *= alpha_;
  p_ *= alpha_;
  tn_ *= alpha_;
  n_ *= alpha_;
  if (truth == 1) {
    p_ += 1.0;
    if (prediction == 1) tp_ += 1.0;
  } else {
    n_ += 1.0;
    if (prediction == 0) tn_ += 1.0;
  }
  const double g = gmean();
  series_.push_back(g);
  return g;
}

// ---- config -----------------------------------------------------------------

void RunConfig::validate() const {
  model.validate();
  detector.validate();
  drift.validate();
  if (seeds == 0) throw Error(ErrorCode::InvalidConfig, "seeds must be >= 1");
  if (!(fading_factor > 0.0 && fading_factor <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "fading_factor must lie in (0, 1]");
  }
  if (detector.warmup < model.timestep) {
    throw Error(ErrorCode::InvalidConfig, "warmup must cover at least one window");
  }
}

RunConfig RunConfig::from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  RunConfig c;
  try {
    auto resolve = [&](std::filesystem::path p) {
      return (p.is_relative() && !base_dir.empty()) ? base_dir / p : p;
    };
    if (doc.contains("scenario")) c.scenario_file = resolve(doc.at("scenario").get<std::string>());
    if (doc.contains("output_dir")) c.output_dir = resolve(doc.at("output_dir").get<std::string>());
    if (doc.contains("sensors")) {
      for (const auto& s : doc.at("sensors")) {
        c.sensors.push_back(s.is_string() ? s.get<std::string>() : s.dump());
      }
    }
    c.seed = doc.value("seed", c.seed);
    if (doc.contains("scenario_seed") && !doc.at("scenario_seed").is_null()) {
      c.scenario_seed = doc.at("scenario_seed").get<std::uint64_t>();
    }
    c.seeds = doc.value("seeds", c.seeds);
    c.fading_factor = doc.value("fading_factor", c.fading_factor);
    c.parallel = doc.value("parallel", c.parallel);
    if (doc.contains("model")) c.model = neural::ModelConfig::from_json(doc.at("model"));
    if (doc.contains("detector")) c.detector = detector::DetectorConfig::from_json(doc.at("detector"));
    if (doc.contains("drift")) c.drift = drift::DriftConfig::from_json(doc.at("drift"));
    if (doc.contains("stl")) {
      const auto& s = doc.at("stl");
      c.stl.period = s.value("period", c.stl.period);
      c.stl.inner_iterations = s.value("inner_iterations", c.stl.inner_iterations);
      c.stl.outer_iterations = s.value("outer_iterations", c.stl.outer_iterations);
      c.stl.periodic_seasonal = s.value("periodic_seasonal", c.stl.periodic_seasonal);
      c.stl.seasonal_window = s.value("seasonal_window", c.stl.seasonal_window);
      c.stl.trend_window = s.value("trend_window", c.stl.trend_window);
      c.stl.lowpass_window = s.value("lowpass_window", c.stl.lowpass_window);
    }
    if (doc.contains("residual_mode")) {
      const auto mode = doc.at("residual_mode").get<std::string>();
      if (mode == "trend_and_residual") {
        c.residual_mode = preprocess::ResidualMode::TrendAndResidual;
      } else if (mode == "trend_only") {
        c.residual_mode = preprocess::ResidualMode::TrendOnly;
      } else {
        throw Error(ErrorCode::InvalidConfig, "unknown residual_mode '" + mode + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = read_json(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  return from_json(doc, path.parent_path());
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json doc;
  doc["scenario"] = scenario_file.string();
  doc["sensors"] = sensors;
  doc["seed"] = seed;
  doc["scenario_seed"] = scenario_seed ? nlohmann::json(*scenario_seed) : nlohmann::json(nullptr);
  doc["seeds"] = seeds;
  doc["output_dir"] = output_dir.string();
  doc["model"] = model.to_json();
  doc["detector"] = detector.to_json();
  doc["drift"] = drift.to_json();
  doc["stl"] = {{"period", stl.period},
                {"inner_iterations", stl.inner_iterations},
                {"outer_iterations", stl.outer_iterations},
                {"periodic_seasonal", stl.periodic_seasonal},
                {"seasonal_window", stl.seasonal_window},
                {"trend_window", stl.trend_window},
                {"lowpass_window", stl.lowpass_window}};
  doc["residual_mode"] = residual_mode == preprocess::ResidualMode::TrendAndResidual
                             ? "trend_and_residual"
                             : "trend_only";
  doc["fading_factor"] = fading_factor;
  doc["parallel"] = parallel;
  return doc;
}

// ---- per-sensor pipeline --------------------------------------------------

std::optional<double> SensorRun::gmean_at(std::int64_t step) const {
  if (detections.empty() || step < detections.front().step) return std::nullopt;
  const auto i = static_cast<std::size_t>(step - detections.front().step);
  if (i >= gmean.size()) return std::nullopt;
  return gmean[i];
}

std::vector<double> residualize_series(std::span<const double> live,
                                       const preprocess::Decomposition& hist,
                                       preprocess::ResidualMode mode) {
  std::vector<double> out(live.size());
  for (std::size_t t = 0; t < live.size(); ++t) out[t] = preprocess::residualize(live[t], t, hist, mode);
  return out;
}

SensorRun run_sensor(std::span<const double> residualized,
                     std::span<const std::uint8_t> anomaly_label, const std::string& sensor_id,
                     const RunConfig& cfg, std::uint64_t model_seed) {
  const std::size_t warmup = cfg.detector.warmup;
  if (residualized.size() <= warmup) {
    throw Error(ErrorCode::SeriesTooShort, "stream for sensor " + sensor_id +
                                               " is not longer than the warm-up");
  }
  SensorRun run;
  run.sensor_id = sensor_id;

  detector::AnomalyDetector det(cfg.model, cfg.detector);
  const auto warm = residualized.first(warmup);
  const auto fit = det.fit(warm, cfg.detector.initial_epochs, model_seed, 0);
  run.initial_theta = fit.threshold.theta;
  // Fill the input window with the tail of the warm-up data.
  for (std::size_t t = warmup - (cfg.model.timestep - 1); t < warmup; ++t) det.observe(residualized[t]);

  drift::DriftState state(cfg.drift);
  state.dis_threshold = drift::dis_threshold_after_fit(fit, cfg.drift, det);
  run.dis_thresholds.push_back(state.dis_threshold);

  PrequentialTracker tracker(cfg.fading_factor);
  std::uint64_t training_set = 0;

  for (std::size_t t = warmup; t < residualized.size(); ++t) {
    const auto step = static_cast<std::int64_t>(t);
    const double x = residualized[t];
    const auto obs = det.observe(x);
    if (!obs) throw Error(ErrorCode::InvalidConfig, "detector produced no observation", step);

    run.detections.push_back({step, obs->score, det.threshold().theta, obs->prediction});
    run.gmean.push_back(tracker.update(anomaly_label[t] != 0 ? 1 : 0, obs->prediction));

    const auto kind = obs->prediction == 1 ? drift::InstanceKind::Anomalous : drift::InstanceKind::Normal;
    drift::DriftStepResult res;
    try {
      const auto& enc = kind == drift::InstanceKind::Normal ? obs->encoding : obs->anomaly_encoding;
      res = drift::drift_step(state, cfg.drift, kind, enc, x);
    } catch (Error& e) {
      throw e.at_step(step);
    }

    DriftRow row;
    row.step = step;
    row.p_star = res.p_star;
    row.dis = res.dis;
    row.flag_warn = state.flag_warn;
    row.flag_alarm = state.flag_alarm;
    row.alarm_source = state.alarm_source;
    row.action = res.action;
    if (res.alarm_raised) run.alarm_steps.push_back(step);

    if (res.action == drift::DriftAction::RetrainFromWarnBuffer ||
        res.action == drift::DriftAction::RetrainAfterCollect) {
      ++training_set;
      drift::RetrainResult rr;
      try {
        rr = drift::execute_retrain(det, state, cfg.drift, res.training_data,
                               scenario::derive_seed(model_seed, kRetrainStream + training_set),
                               training_set);
      } catch (Error& e) {
        throw e.at_step(step);
      }
      run.retrain_steps.push_back(step);
      run.dis_thresholds.push_back(rr.dis_threshold);
    }
    run.drift.push_back(row);
  }
  return run;
}

std::vector<bool> stationary_mask(std::span<const std::uint8_t> anomaly_label,
                                  std::span<const std::uint8_t> drift_label, std::size_t settle) {
  const std::size_t n = anomaly_label.size();
  std::vector<bool> mask(n, false);
  // Steps since the last labeled step; "infinite" before the first.
  std::size_t since = std::numeric_limits<std::size_t>::max();
  for (std::size_t t = 0; t < n; ++t) {
    const bool labeled = anomaly_label[t] != 0 || (t < drift_label.size() && drift_label[t] != 0);
    if (labeled) {
      since = 0;
    } else if (since != std::numeric_limits<std::size_t>::max()) {
      ++since;
    }
    mask[t] = !labeled && since > settle;
  }
  return mask;
}

SensorMetrics sensor_metrics(const SensorRun& run, std::span<const std::uint8_t> anomaly_label,
                             std::span<const std::uint8_t> drift_label) {
  SensorMetrics m;
  m.sensor_id = run.sensor_id;
  m.alarm_steps = run.alarm_steps;
  m.retrain_steps = run.retrain_steps;
  m.dis_thresholds = run.dis_thresholds;
  double g_sum = 0.0;
  std::size_t g_count = 0, positives = 0;
  for (std::size_t i = 0; i < run.detections.size(); ++i) {
    const auto& d = run.detections[i];
    const bool blocked = anomaly_label[static_cast<std::size_t>(d.step)] != 0;
    if (blocked) {
      g_sum += run.gmean[i];
      ++g_count;
    }
    if (d.prediction == 1) {
      ++positives;
      (blocked ? m.true_positives : m.false_positives)++;
    }
  }
  m.mean_gmean_blockage = g_count ? g_sum / static_cast<double>(g_count)
                                  : std::numeric_limits<double>::quiet_NaN();
  m.anomaly_rate = run.detections.empty()
                       ? 0.0
                       : static_cast<double>(positives) / static_cast<double>(run.detections.size());
  const auto mask = stationary_mask(anomaly_label, drift_label);
  for (auto s : run.alarm_steps) {
    if (mask[static_cast<std::size_t>(s)]) ++m.false_drift_alarms;
  }
  return m;
}

// ---- orchestration -----------------------------------------------------------

SeedRun run_seed(const RunConfig& cfg, const scenario::Scenario& base, std::size_t k) {
  scenario::Scenario scn = base;
  const std::uint64_t scenario_seed = cfg.scenario_seed.value_or(base.rng_seed);
  scn.rng_seed = scenario_seed + k;
  if (!cfg.sensors.empty()) scn.sensor_nodes = cfg.sensors;
  scn.validate();

  SeedRun out;
  out.scenario_seed = scn.rng_seed;
  out.model_seed = cfg.seed + k;
  out.stream = scenario::generate(scn);
  const auto historical = scenario::generate_historical(scn);

  const std::size_t sensors = out.stream.sensors();
  auto job = [&](std::size_t s) {
    const auto hist = preprocess::stl_decompose(historical.series(s), cfg.stl);
    const auto live = residualize_series(out.stream.series(s), hist, cfg.residual_mode);
    return run_sensor(live, out.stream.anomaly_label, out.stream.sensor_ids[s], cfg,
                      scenario::derive_seed(out.model_seed, kSensorModelStream + s));
  };
  if (cfg.parallel && sensors > 1) {
    std::vector<std::future<SensorRun>> futures;
    for (std::size_t s = 0; s < sensors; ++s) futures.push_back(std::async(std::launch::async, job, s));
    for (auto& f : futures) out.sensors.push_back(f.get());
  } else {
    for (std::size_t s = 0; s < sensors; ++s) out.sensors.push_back(job(s));
  }
  for (const auto& r : out.sensors) {
    out.metrics.push_back(sensor_metrics(r, out.stream.anomaly_label, out.stream.drift_label));
  }
  return out;
}

double mean(std::span<const double> xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double standard_error(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  const double n = static_cast<double>(xs.size());
  return std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
}

double median(std::vector<double> xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

namespace {

nlohmann::json metrics_json(const SensorMetrics& m) {
  auto thresholds = nlohmann::json::array();
  for (double v : m.dis_thresholds) thresholds.push_back(num(v));
  return {{"sensor", m.sensor_id},
          {"mean_gmean_blockage", num(m.mean_gmean_blockage)},
          {"true_positives", m.true_positives},
          {"false_positives", m.false_positives},
          {"false_drift_alarms", m.false_drift_alarms},
          {"anomaly_rate", m.anomaly_rate},
          {"alarm_steps", m.alarm_steps},
          {"retrain_steps", m.retrain_steps},
          {"dis_thresholds", thresholds}};
}

nlohmann::json build_summary(const std::vector<SeedRun>& seeds) {
  nlohmann::json doc;
  doc["runs"] = nlohmann::json::array();
  for (const auto& s : seeds) {
    nlohmann::json run = {{"scenario_seed", s.scenario_seed}, {"model_seed", s.model_seed}};
    run["sensors"] = nlohmann::json::array();
    for (const auto& m : s.metrics) run["sensors"].push_back(metrics_json(m));
    doc["runs"].push_back(std::move(run));
  }
  // Per-sensor aggregates across seeds: mean and standard error.
  nlohmann::json agg = nlohmann::json::array();
  if (!seeds.empty()) {
    for (std::size_t i = 0; i < seeds.front().metrics.size(); ++i) {
      std::vector<double> g, tp, fp, alarms, retrains, rate;
      for (const auto& s : seeds) {
        const auto& m = s.metrics[i];
        if (std::isfinite(m.mean_gmean_blockage)) g.push_back(m.mean_gmean_blockage);
        tp.push_back(static_cast<double>(m.true_positives));
        fp.push_back(static_cast<double>(m.false_positives));
        alarms.push_back(static_cast<double>(m.false_drift_alarms));
        retrains.push_back(static_cast<double>(m.retrain_steps.size()));
        rate.push_back(m.anomaly_rate);
      }
      auto stat = [](const std::vector<double>& v) {
        return nlohmann::json{{"mean", num(mean(v))}, {"stderr", num(standard_error(v))}};
      };
      agg.push_back({{"sensor", seeds.front().metrics[i].sensor_id},
                     {"mean_gmean_blockage", stat(g)},
                     {"true_positives", stat(tp)},
                     {"false_positives", stat(fp)},
                     {"false_drift_alarms", stat(alarms)},
                     {"retrains", stat(retrains)},
                     {"anomaly_rate", stat(rate)}});
    }
  }
  doc["aggregate"] = std::move(agg);
  doc["seeds"] = seeds.size();
  return doc;
}

}  // namespace

RunResult run_pipeline(const RunConfig& cfg, const scenario::Scenario& scn) {
  cfg.validate();
  RunResult out;
  for (std::size_t k = 0; k < cfg.seeds; ++k) out.seeds.push_back(run_seed(cfg, scn, k));
  out.summary = build_summary(out.seeds);
  return out;
}

RunResult run_pipeline(const RunConfig& cfg) {
  if (cfg.scenario_file.empty()) throw Error(ErrorCode::InvalidConfig, "run config names no scenario");
  return run_pipeline(cfg, scenario::Scenario::load(cfg.scenario_file));
}

void write_artifacts(const RunConfig& cfg, const scenario::Scenario& scn,
                     const RunResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  csv::Table metrics;
  metrics.header = {"seed", "sensor", "mean_gmean_blockage", "true_positives", "false_positives",
                    "false_drift_alarms", "retrains", "anomaly_rate"};
  for (std::size_t k = 0; k < result.seeds.size(); ++k) {
    const auto& run = result.seeds[k];
    const auto sfx = suffix_for(result.seeds.size(), k);
    run.stream.write_csv(dir / ("stream" + sfx + ".csv"));
    for (const auto& s : run.sensors) {
      csv::Table det;
      det.header = {"step", "score", "theta", "prediction"};
      for (const auto& d : s.detections) {
        det.rows.push_back({std::to_string(d.step), csv::format_double(d.score),
                            csv::format_double(d.theta), std::to_string(d.prediction)});
      }
      csv::write(dir / ("detection_" + s.sensor_id + sfx + ".csv"), det);

      csv::Table dr;
      dr.header = {"step", "p_star", "dis", "flag_warn", "flag_alarm", "alarm_source", "action"};
      for (const auto& r : s.drift) {
        dr.rows.push_back({std::to_string(r.step), opt_cell(r.p_star), opt_cell(r.dis),
                           r.flag_warn ? "1" : "0", r.flag_alarm ? "1" : "0",
                           std::string(drift::to_string(r.alarm_source)),
                           std::string(drift::to_string(r.action))});
      }
      csv::write(dir / ("drift_" + s.sensor_id + sfx + ".csv"), dr);
    }
    for (const auto& m : run.metrics) {
      metrics.rows.push_back({std::to_string(k), m.sensor_id,
                              std::isfinite(m.mean_gmean_blockage) ? csv::format_double(m.mean_gmean_blockage) : "",
                              std::to_string(m.true_positives), std::to_string(m.false_positives),
                              std::to_string(m.false_drift_alarms),
                              std::to_string(m.retrain_steps.size()),
                              csv::format_double(m.anomaly_rate)});
    }
  }
  csv::write(dir / "metrics.csv", metrics);
  write_json(dir / "summary.json", result.summary);

  // Self-contained copy of the run inputs for `report`.
  nlohmann::json conf = cfg.to_json();
  conf.erase("scenario");
  conf.erase("output_dir");
  write_json(dir / "config.json", conf);
  scenario::Scenario inlined = scn;
  inlined.network_file.clear();
  if (!cfg.sensors.empty()) inlined.sensor_nodes = cfg.sensors;
  write_json(dir / "scenario.json", inlined.to_json());
}

std::vector<bool> downstream_tags(const hydronet::Network& net,
                                  std::span<const std::string> sensor_ids,
                                  const std::string& blocked_pipe) {
  if (!net.has_pipe(blocked_pipe)) throw Error(ErrorCode::UnknownPipe, "unknown pipe '" + blocked_pipe + "'");
  const auto state = hydronet::solve_steady_state(net);
  const auto mask = hydronet::downstream_nodes(net, state, blocked_pipe);
  std::vector<bool> tags;
  for (const auto& id : sensor_ids) tags.push_back(mask[net.node_index(id)]);
  return tags;
}

std::vector<DownstreamRow> downstream_report(const scenario::Scenario& scn, const SeedRun& run,
                                             const std::string& blocked_pipe) {
  const auto tags = downstream_tags(scn.network, run.stream.sensor_ids, blocked_pipe);
  std::vector<DownstreamRow> rows;
  for (std::size_t s = 0; s < run.metrics.size(); ++s) {
    rows.push_back({run.metrics[s].sensor_id, tags[s], run.metrics[s].true_positives,
                    run.metrics[s].false_positives});
  }
  return rows;
}

std::vector<DownstreamRow> downstream_report(const std::filesystem::path& run_dir,
                                             const std::string& blocked_pipe) {
  const auto scn_doc = read_json(run_dir / "scenario.json");
  const auto scn = scenario::Scenario::from_json(scn_doc);
  const auto stream_path = std::filesystem::exists(run_dir / "stream.csv")
                               ? run_dir / "stream.csv"
                               : run_dir / "stream_s0.csv";
  const auto sfx = std::filesystem::exists(run_dir / "stream.csv") ? std::string{} : std::string("_s0");
  const auto stream = scenario::LabeledStream::read_csv(stream_path);
  const auto tags = downstream_tags(scn.network, stream.sensor_ids, blocked_pipe);

  std::vector<DownstreamRow> rows;
  for (std::size_t s = 0; s < stream.sensors(); ++s) {
    const auto table = csv::read(run_dir / ("detection_" + stream.sensor_ids[s] + sfx + ".csv"));
    const auto c_step = table.column("step");
    const auto c_pred = table.column("prediction");
    DownstreamRow row{stream.sensor_ids[s], tags[s], 0, 0};
    for (const auto& r : table.rows) {
      if (csv::parse_int(r[c_pred]) != 1) continue;
      const auto step = static_cast<std::size_t>(csv::parse_int(r[c_step]));
      (stream.anomaly_label.at(step) ? row.tp : row.fp)++;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace aquadrift::evalrun
