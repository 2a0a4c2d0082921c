#pragma once

// Labeled pressure streams: demand patterns, blockage/leak timelines,
// sensor noise and ground-truth labels.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "aquadrift/hydronet.hpp"
#include "json.hpp"

namespace aquadrift::scenario {

inline constexpr std::int64_t kStepsPerDay = 48;    // 30-minute sampling
inline constexpr std::int64_t kStepsPerWeek = 336;

struct DemandPattern {
  double daily_amplitude = 0.3;
  double weekly_amplitude = 0.1;
  double noise_std = 0.02;
  double floor = 0.05;
};

// m(t) = max(floor, 1 + a_d sin(2 pi t/48) + a_w sin(2 pi t/336) + eps),
// eps ~ N(0, noise_std^2) drawn per (step, junction) from a seeded stream.
class DemandModel {
 public:
  DemandModel(DemandPattern pattern, std::uint64_t seed, std::size_t junction_count);

  std::vector<double> multipliers(std::int64_t step) const;
  double multiplier(std::int64_t step, std::size_t junction) const;

  const DemandPattern& pattern() const noexcept { return pattern_; }

 private:
  DemandPattern pattern_;
  std::uint64_t seed_;
  std::size_t junction_count_;
};

struct BlockageEvent {
  std::string pipe_id;
  std::int64_t start_step = 0;
  std::int64_t end_step = 0;  // exclusive

  bool active(std::int64_t step) const noexcept {
    return step >= start_step && step < end_step;
  }
};

struct LeakEvent {
  hydronet::LeakSpec leak;
  std::int64_t start_step = 0;
  std::int64_t end_step = 0;  // exclusive

  bool active(std::int64_t step) const noexcept {
    return step >= start_step && step < end_step;
  }
};

struct Scenario {
  Scenario(std::filesystem::path file, hydronet::Network net)
      : network_file(std::move(file)), network(std::move(net)) {}

  std::filesystem::path network_file;
  hydronet::Network network;
  std::int64_t horizon_steps = 17520;
  int step_minutes = 30;
  std::vector<BlockageEvent> blockage_events;
  std::vector<LeakEvent> leak_events;
  double noise_std = 0.1;
  std::vector<std::string> sensor_nodes;
  std::uint64_t rng_seed = 0;
  DemandPattern demand;

  // Relative network paths resolve against `base_dir`. An inline network
  // object is accepted in place of a path.
  static Scenario from_json(const nlohmann::json& doc,
                            const std::filesystem::path& base_dir = {});
  static Scenario load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  void validate() const;

  bool blockage_at(std::int64_t step) const;
  bool leak_at(std::int64_t step) const;
};

// Row-major (step x sensor) pressure heads plus labels.
struct LabeledStream {
  std::vector<std::string> sensor_ids;
  std::vector<double> pressures;
  std::vector<std::uint8_t> anomaly_label;
  std::vector<std::uint8_t> drift_label;

  std::size_t steps() const noexcept { return anomaly_label.size(); }
  std::size_t sensors() const noexcept { return sensor_ids.size(); }
  double at(std::size_t step, std::size_t sensor) const {
    return pressures[step * sensor_ids.size() + sensor];
  }
  std::vector<double> series(std::size_t sensor) const;
  std::size_t sensor_index(const std::string& id) const;

  // CSV: `step,<sensor_id>...,anomaly_label,drift_label`.
  void write_csv(const std::filesystem::path& path) const;
  static LabeledStream read_csv(const std::filesystem::path& path);

  friend bool operator==(const LabeledStream&, const LabeledStream&) = default;
};

// Sensor readings are pressure heads (head minus elevation) plus
// N(0, noise_std^2) measurement noise. Solver failures carry the step index.
LabeledStream generate(const Scenario& scn);

// Event-free run over the same horizon. Shares the demand realization of
// `generate` and draws measurement noise from an independent sub-stream.
LabeledStream generate_historical(const Scenario& scn);

// Seed for a named sub-stream of a scenario seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace aquadrift::scenario
