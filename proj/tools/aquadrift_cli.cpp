// aquadrift: generate streams, decompose, run detection, report.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "aquadrift/csv.hpp"
#include "aquadrift/error.hpp"
#include "aquadrift/evalrun.hpp"
#include "aquadrift/preprocess.hpp"
#include "aquadrift/scenario.hpp"

namespace fs = std::filesystem;
using namespace aquadrift;

namespace {

constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

bool is_config_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidNetwork:
    case ErrorCode::InvalidScenario:
    case ErrorCode::InvalidConfig:
    case ErrorCode::UnknownPipe:
    case ErrorCode::UnknownNode:
      return true;
    default:
      return false;
  }
}

void cmd_generate(const fs::path& scenario_file, const fs::path& out,
                  std::optional<std::uint64_t> seed) {
  auto scn = scenario::Scenario::load(scenario_file);
  if (seed) scn.rng_seed = *seed;
  scn.validate();
  fs::create_directories(out);
  scenario::generate(scn).write_csv(out / "stream.csv");
  scenario::generate_historical(scn).write_csv(out / "historical.csv");
  std::cout << "wrote " << (out / "stream.csv").string() << " and "
            << (out / "historical.csv").string() << "\n";
}

void cmd_decompose(const fs::path& stream_file, std::size_t period, const fs::path& out,
                   const std::string& sensor) {
  const auto stream = scenario::LabeledStream::read_csv(stream_file);
  if (stream.sensors() == 0) throw Error(ErrorCode::InvalidConfig, "stream has no sensor columns");
  const std::size_t s = sensor.empty() ? 0 : stream.sensor_index(sensor);
  preprocess::StlOptions opts;
  opts.period = period;
  preprocess::stl_decompose(stream.series(s), opts).write_csv(out);
  std::cout << "wrote " << out.string() << " (sensor " << stream.sensor_ids[s] << ")\n";
}

void cmd_detect(const fs::path& scenario_file, const fs::path& config_file,
                const fs::path& out, std::optional<std::size_t> seeds) {
  auto cfg = evalrun::RunConfig::load(config_file);
  cfg.scenario_file = scenario_file;
  if (seeds) cfg.seeds = *seeds;
  cfg.validate();
  const auto scn = scenario::Scenario::load(scenario_file);
  const auto result = evalrun::run_pipeline(cfg, scn);
  evalrun::write_artifacts(cfg, scn, result, out);

  for (const auto& agg : result.summary.at("aggregate")) {
    const auto& g = agg.at("mean_gmean_blockage");
    std::cout << agg.at("sensor").get<std::string>() << ": G(blockage) ";
    if (g.at("mean").is_null()) {
      std::cout << "n/a";
    } else {
      std::printf("%.4f +/- %.4f", g.at("mean").get<double>(), g.at("stderr").get<double>());
      std::fflush(stdout);
    }
    std::printf("  retrains %.1f  false drift alarms %.1f\n",
                agg.at("retrains").at("mean").get<double>(),
                agg.at("false_drift_alarms").at("mean").get<double>());
  }
  std::cout << "artifacts in " << out.string() << "\n";
}

void cmd_report(const fs::path& run_dir, const std::string& blocked_pipe) {
  const auto rows = evalrun::downstream_report(run_dir, blocked_pipe);
  csv::Table table;
  table.header = {"sensor", "position", "tp", "fp"};
  std::printf("%-8s %-10s %8s %8s\n", "sensor", "position", "TP", "FP");
  for (const auto& r : rows) {
    const char* pos = r.downstream ? "downstream" : "upstream";
    std::printf("%-8s %-10s %8zu %8zu\n", r.sensor_id.c_str(), pos, r.tp, r.fp);
    table.rows.push_back({r.sensor_id, pos, std::to_string(r.tp), std::to_string(r.fp)});
  }
  csv::write(run_dir / ("report_pipe_" + blocked_pipe + ".csv"), table);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming blockage and leak detection for water networks"};
  app.require_subcommand(1);

  std::string scenario_file, out, stream_file, config_file, run_dir, sensor;
  std::string blocked_pipe = "7";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> seeds;
  std::size_t period = 336;

  auto* gen = app.add_subcommand("generate", "simulate a labeled pressure stream");
  gen->add_option("--scenario", scenario_file, "scenario JSON")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--seed", seed, "override the scenario rng_seed");

  auto* dec = app.add_subcommand("decompose", "STL-decompose one sensor column");
  dec->add_option("--stream", stream_file, "stream CSV")->required()->check(CLI::ExistingFile);
  dec->add_option("--period", period, "seasonal period in steps")->capture_default_str();
  dec->add_option("--out", out, "decomposition CSV")->required();
  dec->add_option("--sensor", sensor, "sensor id (default: first column)");

  auto* det = app.add_subcommand("detect", "run the detection pipeline");
  det->add_option("--scenario", scenario_file, "scenario JSON")->required()->check(CLI::ExistingFile);
  det->add_option("--config", config_file, "run config JSON")->required()->check(CLI::ExistingFile);
  det->add_option("--out", out, "output directory")->required();
  det->add_option("--seeds", seeds, "number of seeds (overrides the config)");

  auto* rep = app.add_subcommand("report", "per-sensor TP/FP around a blocked pipe");
  rep->add_option("--run", run_dir, "run directory from detect")->required()->check(CLI::ExistingDirectory);
  rep->add_option("--blocked-pipe", blocked_pipe, "blocked pipe id")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kConfigError;
  }

  try {
    if (*gen) cmd_generate(scenario_file, out, seed);
    if (*dec) cmd_decompose(stream_file, period, out, sensor);
    if (*det) cmd_detect(scenario_file, config_file, out, seeds);
    if (*rep) cmd_report(run_dir, blocked_pipe);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_config_error(e.code()) ? kConfigError : kRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return 0;
}
