#include "aquadrift/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>

#include "aquadrift/csv.hpp"
#include "aquadrift/error.hpp"

namespace aquadrift::scenario {

namespace {

enum Stream : std::uint64_t {
  kDemandStream = 1,
  kNoiseStream = 2,
  kHistoricalNoiseStream = 3,
};

std::string id_string(const nlohmann::json& value) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_number_integer()) return std::to_string(value.get<long long>());
  throw Error(ErrorCode::InvalidScenario, "ids must be strings or integers");
}

std::mt19937_64 stream_engine(std::uint64_t seed, std::uint64_t stream, std::uint64_t step) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(step),
                    static_cast<std::uint32_t>(step >> 32)};
  return std::mt19937_64(seq);
}

LabeledStream run(const Scenario& scn, bool with_events, std::uint64_t noise_stream) {
  scn.validate();
  const auto& net = scn.network;
  const DemandModel demand(scn.demand, derive_seed(scn.rng_seed, kDemandStream),
                           net.junction_count());

  std::vector<std::size_t> sensor_nodes;
  for (const auto& id : scn.sensor_nodes) sensor_nodes.push_back(net.junction_index(id));

  LabeledStream out;
  out.sensor_ids = scn.sensor_nodes;
  const auto steps = static_cast<std::size_t>(scn.horizon_steps);
  out.pressures.reserve(steps * sensor_nodes.size());
  out.anomaly_label.reserve(steps);
  out.drift_label.reserve(steps);

  std::mt19937_64 noise_engine(derive_seed(scn.rng_seed, noise_stream));
  std::normal_distribution<double> noise(0.0, scn.noise_std > 0.0 ? scn.noise_std : 1.0);

  // Networks keyed by the set of closed pipes, built once per distinct set.
  std::map<std::vector<std::size_t>, hydronet::Network> networks;
  std::vector<hydronet::LeakSpec> leaks;

  for (std::int64_t t = 0; t < scn.horizon_steps; ++t) {
    std::vector<std::size_t> closed;
    leaks.clear();
    if (with_events) {
      for (const auto& b : scn.blockage_events) {
        if (b.active(t)) closed.push_back(net.pipe_index(b.pipe_id));
      }
      for (const auto& l : scn.leak_events) {
        if (l.active(t)) leaks.push_back(l.leak);
      }
    }
    std::sort(closed.begin(), closed.end());
    closed.erase(std::unique(closed.begin(), closed.end()), closed.end());
    auto it = networks.find(closed);
    if (it == networks.end()) {
      hydronet::Network blocked = net;
      for (auto p : closed) blocked = hydronet::apply_blockage(blocked, net.pipes()[p].id);
      it = networks.emplace(closed, std::move(blocked)).first;
    }

    const auto multipliers = demand.multipliers(t);
    hydronet::HydraulicState state;
    try {
      state = hydronet::solve_steady_state(it->second, leaks, multipliers);
    } catch (const Error& e) {
      throw e.at_step(t);
    }
    for (auto node : sensor_nodes) {
      double value = state.pressure_head(net, node);
      if (scn.noise_std > 0.0) value += noise(noise_engine);
      out.pressures.push_back(value);
    }
    out.anomaly_label.push_back(with_events && scn.blockage_at(t) ? 1 : 0);
    out.drift_label.push_back(with_events && scn.leak_at(t) ? 1 : 0);
  }
  return out;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), 0x5eedu};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

DemandModel::DemandModel(DemandPattern pattern, std::uint64_t seed, std::size_t junction_count)
    : pattern_(pattern), seed_(seed), junction_count_(junction_count) {}

std::vector<double> DemandModel::multipliers(std::int64_t step) const {
  const double t = static_cast<double>(step);
  const double base = 1.0 +
                      pattern_.daily_amplitude *
                          std::sin(2.0 * std::numbers::pi * t / static_cast<double>(kStepsPerDay)) +
                      pattern_.weekly_amplitude *
                          std::sin(2.0 * std::numbers::pi * t / static_cast<double>(kStepsPerWeek));
  std::vector<double> out(junction_count_, base);
  if (pattern_.noise_std > 0.0) {
    auto engine = stream_engine(seed_, kDemandStream, static_cast<std::uint64_t>(step));
    std::normal_distribution<double> eps(0.0, pattern_.noise_std);
    for (auto& m : out) m += eps(engine);
  }
  for (auto& m : out) m = std::max(pattern_.floor, m);
  return out;
}

double DemandModel::multiplier(std::int64_t step, std::size_t junction) const {
  return multipliers(step).at(junction);
}

Scenario Scenario::from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  try {
    const auto& net_ref = doc.at("network");
    std::filesystem::path network_file;
    auto network = [&] {
      if (net_ref.is_object()) return hydronet::Network::from_json(net_ref);
      network_file = net_ref.get<std::string>();
      if (network_file.is_relative() && !base_dir.empty()) network_file = base_dir / network_file;
      return hydronet::Network::load(network_file);
    }();
    Scenario scn{network_file, std::move(network)};
    scn.horizon_steps = doc.value("horizon_steps", scn.horizon_steps);
    scn.step_minutes = doc.value("step_minutes", scn.step_minutes);
    scn.noise_std = doc.value("noise_std", scn.noise_std);
    scn.rng_seed = doc.value("rng_seed", scn.rng_seed);
    if (doc.contains("sensor_nodes")) {
      for (const auto& s : doc.at("sensor_nodes")) scn.sensor_nodes.push_back(id_string(s));
    }
    if (doc.contains("blockage_events")) {
      for (const auto& b : doc.at("blockage_events")) {
        scn.blockage_events.push_back({id_string(b.at("pipe_id")),
                                       b.at("start_step").get<std::int64_t>(),
                                       b.at("end_step").get<std::int64_t>()});
      }
    }
    if (doc.contains("leak_events")) {
      for (const auto& l : doc.at("leak_events")) {
        hydronet::LeakSpec leak{id_string(l.at("node_id")), l.at("hole_diameter").get<double>(),
                                l.value("discharge_coefficient",
                                        hydronet::kDefaultDischargeCoefficient)};
        scn.leak_events.push_back({std::move(leak), l.at("start_step").get<std::int64_t>(),
                                   l.at("end_step").get<std::int64_t>()});
      }
    }
    if (doc.contains("demand_pattern")) {
      const auto& d = doc.at("demand_pattern");
      scn.demand.daily_amplitude = d.value("daily_amplitude", scn.demand.daily_amplitude);
      scn.demand.weekly_amplitude = d.value("weekly_amplitude", scn.demand.weekly_amplitude);
      scn.demand.noise_std = d.value("noise_std", scn.demand.noise_std);
      scn.demand.floor = d.value("floor", scn.demand.floor);
    }
    scn.validate();
    return scn;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidScenario, std::string("malformed scenario JSON: ") + e.what());
  }
}

Scenario Scenario::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open scenario file " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidScenario, path.string() + ": " + e.what());
  }
  return from_json(doc, path.parent_path());
}

nlohmann::json Scenario::to_json() const {
  nlohmann::json doc;
  if (network_file.empty()) {
    doc["network"] = network.to_json();
  } else {
    doc["network"] = network_file.string();
  }
  doc["horizon_steps"] = horizon_steps;
  doc["step_minutes"] = step_minutes;
  doc["noise_std"] = noise_std;
  doc["rng_seed"] = rng_seed;
  doc["sensor_nodes"] = sensor_nodes;
  doc["blockage_events"] = nlohmann::json::array();
  for (const auto& b : blockage_events) {
    doc["blockage_events"].push_back(
        {{"pipe_id", b.pipe_id}, {"start_step", b.start_step}, {"end_step", b.end_step}});
  }
  doc["leak_events"] = nlohmann::json::array();
  for (const auto& l : leak_events) {
    doc["leak_events"].push_back({{"node_id", l.leak.node_id},
                                  {"hole_diameter", l.leak.hole_diameter},
                                  {"discharge_coefficient", l.leak.discharge_coefficient},
                                  {"start_step", l.start_step},
                                  {"end_step", l.end_step}});
  }
  doc["demand_pattern"] = {{"daily_amplitude", demand.daily_amplitude},
                           {"weekly_amplitude", demand.weekly_amplitude},
                           {"noise_std", demand.noise_std},
                           {"floor", demand.floor}};
  return doc;
}

void Scenario::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidScenario, what); };
  if (horizon_steps <= 0) fail("horizon_steps must be positive");
  if (step_minutes <= 0) fail("step_minutes must be positive");
  if (!(noise_std >= 0.0)) fail("noise_std must be >= 0");
  if (!(demand.noise_std >= 0.0) || !(demand.floor >= 0.0)) fail("invalid demand pattern");
  if (sensor_nodes.empty()) fail("at least one sensor node is required");
  for (const auto& s : sensor_nodes) {
    try {
      network.junction_index(s);
    } catch (const Error&) {
      fail("sensor '" + s + "' is not a network junction");
    }
  }
  auto check_interval = [&](std::int64_t start, std::int64_t end) {
    if (start < 0 || end > horizon_steps || start >= end) {
      fail("event interval [" + std::to_string(start) + ", " + std::to_string(end) +
           ") outside horizon or empty");
    }
  };
  for (const auto& b : blockage_events) {
    check_interval(b.start_step, b.end_step);
    if (!network.has_pipe(b.pipe_id)) {
      throw Error(ErrorCode::UnknownPipe, "blockage references unknown pipe '" + b.pipe_id + "'");
    }
  }
  for (const auto& l : leak_events) {
    check_interval(l.start_step, l.end_step);
    l.leak.validate();
    try {
      network.junction_index(l.leak.node_id);
    } catch (const Error&) {
      fail("leak node '" + l.leak.node_id + "' is not a junction");
    }
  }
}

bool Scenario::blockage_at(std::int64_t step) const {
  return std::any_of(blockage_events.begin(), blockage_events.end(),
                     [step](const BlockageEvent& b) { return b.active(step); });
}

bool Scenario::leak_at(std::int64_t step) const {
  return std::any_of(leak_events.begin(), leak_events.end(),
                     [step](const LeakEvent& l) { return l.active(step); });
}

std::vector<double> LabeledStream::series(std::size_t sensor) const {
  std::vector<double> out(steps());
  for (std::size_t t = 0; t < steps(); ++t) out[t] = at(t, sensor);
  return out;
}

std::size_t LabeledStream::sensor_index(const std::string& id) const {
  const auto it = std::find(sensor_ids.begin(), sensor_ids.end(), id);
  if (it == sensor_ids.end()) throw Error(ErrorCode::UnknownNode, "no sensor '" + id + "' in stream");
  return static_cast<std::size_t>(it - sensor_ids.begin());
}

void LabeledStream::write_csv(const std::filesystem::path& path) const {
  csv::Table table;
  table.header.push_back("step");
  table.header.insert(table.header.end(), sensor_ids.begin(), sensor_ids.end());
  table.header.push_back("anomaly_label");
  table.header.push_back("drift_label");
  table.rows.reserve(steps());
  for (std::size_t t = 0; t < steps(); ++t) {
    std::vector<std::string> row;
    row.reserve(table.header.size());
    row.push_back(std::to_string(t));
    for (std::size_t s = 0; s < sensors(); ++s) row.push_back(csv::format_double(at(t, s)));
    row.push_back(std::to_string(anomaly_label[t]));
    row.push_back(std::to_string(drift_label[t]));
    table.rows.push_back(std::move(row));
  }
  csv::write(path, table);
}

LabeledStream LabeledStream::read_csv(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  if (table.header.size() < 4 || table.header.front() != "step" ||
      table.header[table.header.size() - 2] != "anomaly_label" ||
      table.header.back() != "drift_label") {
    throw Error(ErrorCode::Io, path.string() + " is not a stream CSV");
  }
  LabeledStream out;
  out.sensor_ids.assign(table.header.begin() + 1, table.header.end() - 2);
  for (const auto& row : table.rows) {
    for (std::size_t s = 0; s < out.sensor_ids.size(); ++s) {
      out.pressures.push_back(csv::parse_double(row[s + 1]));
    }
    out.anomaly_label.push_back(static_cast<std::uint8_t>(csv::parse_int(row[row.size() - 2])));
    out.drift_label.push_back(static_cast<std::uint8_t>(csv::parse_int(row.back())));
  }
  return out;
}

LabeledStream generate(const Scenario& scn) { return run(scn, true, kNoiseStream); }

LabeledStream generate_historical(const Scenario& scn) {
  return run(scn, false, kHistoricalNoiseStream);
}

}  // namespace aquadrift::scenario
