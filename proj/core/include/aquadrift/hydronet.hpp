#pragma once

// Steady-state hydraulics for looped pipe networks: Hazen-Williams head
// loss, pressure-dependent orifice leaks, and pipe closures.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace aquadrift::hydronet {

inline constexpr double kGravity = 9.81;
inline constexpr double kHazenWilliamsExponent = 1.852;
inline constexpr double kHazenWilliamsCoefficient = 10.667;
inline constexpr double kDefaultDischargeCoefficient = 0.75;

struct Junction {
  std::string id;
  double elevation = 0.0;    // m
  double base_demand = 0.0;  // m^3/s
};

struct Reservoir {
  std::string id;
  double fixed_head = 0.0;  // m
};

enum class PipeStatus { Open, Closed };

struct Pipe {
  std::string id;
  std::string from;
  std::string to;
  double length = 0.0;     // m
  double diameter = 0.0;   // m
  double roughness = 0.0;  // Hazen-Williams C
  PipeStatus status = PipeStatus::Open;

  bool is_open() const noexcept { return status == PipeStatus::Open; }
};

// Immutable, validated network. Node indices place junctions first
// ([0, junction_count)) followed by reservoirs.
class Network {
 public:
  Network(std::vector<Junction> junctions, std::vector<Reservoir> reservoirs,
          std::vector<Pipe> pipes);

  static Network from_json(const nlohmann::json& doc);
  static Network load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  const std::vector<Junction>& junctions() const noexcept { return junctions_; }
  const std::vector<Reservoir>& reservoirs() const noexcept { return reservoirs_; }
  const std::vector<Pipe>& pipes() const noexcept { return pipes_; }

  std::size_t junction_count() const noexcept { return junctions_.size(); }
  std::size_t node_count() const noexcept {
    return junctions_.size() + reservoirs_.size();
  }
  bool is_reservoir(std::size_t node) const noexcept {
    return node >= junctions_.size();
  }

  // Throws Error(UnknownNode) / Error(UnknownPipe).
  std::size_t node_index(std::string_view id) const;
  std::size_t junction_index(std::string_view id) const;
  std::size_t pipe_index(std::string_view id) const;
  bool has_pipe(std::string_view id) const;

  std::size_t pipe_from(std::size_t pipe) const noexcept { return endpoints_[pipe].first; }
  std::size_t pipe_to(std::size_t pipe) const noexcept { return endpoints_[pipe].second; }
  const std::string& node_id(std::size_t node) const;
  double node_elevation(std::size_t node) const;

  Network with_pipe_status(std::string_view pipe_id, PipeStatus status) const;

  friend bool operator==(const Network& a, const Network& b);

 private:
  void validate_and_index();

  std::vector<Junction> junctions_;
  std::vector<Reservoir> reservoirs_;
  std::vector<Pipe> pipes_;
  std::unordered_map<std::string, std::size_t> node_lookup_;
  std::unordered_map<std::string, std::size_t> pipe_lookup_;
  std::vector<std::pair<std::size_t, std::size_t>> endpoints_;
};

struct LeakSpec {
  std::string node_id;
  double hole_diameter = 0.0;  // m
  double discharge_coefficient = kDefaultDischargeCoefficient;

  void validate() const;
};

struct HydraulicState {
  std::vector<double> node_heads;     // m, indexed like Network nodes
  std::vector<double> pipe_flows;     // m^3/s, positive from -> to; 0 when closed
  std::vector<double> leak_outflows;  // m^3/s, per junction
  double residual_norm = 0.0;         // max |mass imbalance| over junctions
  int iterations = 0;

  double pressure_head(const Network& net, std::size_t node) const {
    return node_heads[node] - net.node_elevation(node);
  }
};

struct SolverOptions {
  double tolerance = 1e-10;  // m^3/s, max junction imbalance
  int max_iterations = 200;
  int max_halvings = 20;
  double linearization_threshold = 1e-8;  // m of head difference
};

// Hazen-Williams resistance r with h_f = r |q|^1.852.
double pipe_resistance(const Pipe& pipe);

// Orifice leak outflow; zero for non-positive pressure head.
double leak_flow(double pressure_head, const LeakSpec& leak);

// `demand_multiplier` is either empty (all ones) or one scalar per junction.
HydraulicState solve_steady_state(const Network& net,
                                  std::span<const LeakSpec> leaks = {},
                                  std::span<const double> demand_multiplier = {},
                                  const SolverOptions& options = {});

// Per-junction inflow - outflow - demand - leak for a given head vector.
std::vector<double> mass_balance(const Network& net,
                                 const HydraulicState& state,
                                 std::span<const double> demand_multiplier = {});

Network apply_blockage(const Network& net, std::string_view pipe_id);
Network reopen_pipe(const Network& net, std::string_view pipe_id);

// Nodes reached from the downstream end of `pipe_id` by following the
// direction of flow in `state`. The returned mask is indexed by node.
std::vector<bool> downstream_nodes(const Network& net,
                                   const HydraulicState& state,
                                   std::string_view pipe_id);

}  // namespace aquadrift::hydronet
