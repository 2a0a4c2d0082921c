#include "aquadrift/hydronet.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <queue>
#include <unordered_set>

#include "aquadrift/error.hpp"

namespace aquadrift::hydronet {

namespace {

constexpr double kFlowExponent = 1.0 / kHazenWilliamsExponent;

std::string id_from_json(const nlohmann::json& value) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_number_integer()) return std::to_string(value.get<long long>());
  throw Error(ErrorCode::InvalidNetwork, "ids must be strings or integers");
}

bool finite_all(std::initializer_list<double> values) {
  return std::all_of(values.begin(), values.end(),
                     [](double v) { return std::isfinite(v); });
}

struct PipeLaw {
  double flow;
  double slope;  // dq / d(delta h)
};

// Hazen-Williams flow as a function of head difference, linear below the
// threshold so the derivative stays bounded at zero flow.
PipeLaw pipe_law(double delta_h, double resistance, double threshold) {
  const double mag = std::abs(delta_h);
  if (mag < threshold) {
    const double slope = std::pow(threshold / resistance, kFlowExponent) / threshold;
    return {slope * delta_h, slope};
  }
  const double q = std::pow(mag / resistance, kFlowExponent);
  return {std::copysign(q, delta_h), kFlowExponent * q / mag};
}

double leak_coefficient(const LeakSpec& leak) {
  return leak.discharge_coefficient * std::numbers::pi * leak.hole_diameter *
         leak.hole_diameter / 4.0;
}

// Solver working set over junction unknowns.
class Balance {
 public:
  Balance(const Network& net, std::span<const LeakSpec> leaks,
          std::span<const double> multiplier, const SolverOptions& options)
      : net_(net), options_(options), demand_(net.junction_count()),
        leak_k_(net.junction_count(), 0.0) {
    if (!multiplier.empty() && multiplier.size() != net.junction_count()) {
      throw Error(ErrorCode::InvalidNetwork,
                  "demand multiplier size does not match junction count");
    }
    for (std::size_t j = 0; j < net.junction_count(); ++j) {
      const double m = multiplier.empty() ? 1.0 : multiplier[j];
      if (!std::isfinite(m) || m < 0.0) {
        throw Error(ErrorCode::InvalidNetwork, "demand multiplier must be >= 0");
      }
      demand_[j] = net.junctions()[j].base_demand * m;
    }
    for (const auto& leak : leaks) {
      leak.validate();
      leak_k_[net.junction_index(leak.node_id)] += leak_coefficient(leak);
    }
    for (std::size_t p = 0; p < net.pipes().size(); ++p) {
      if (net.pipes()[p].is_open()) {
        open_.push_back(p);
        resistance_.push_back(pipe_resistance(net.pipes()[p]));
      }
    }
  }

  std::size_t size() const { return net_.junction_count(); }

  double head(const Eigen::VectorXd& h, std::size_t node) const {
    return net_.is_reservoir(node)
               ? net_.reservoirs()[node - net_.junction_count()].fixed_head
               : h[static_cast<Eigen::Index>(node)];
  }

  double leak_at(const Eigen::VectorXd& h, std::size_t j) const {
    if (leak_k_[j] == 0.0) return 0.0;
    const double p = h[static_cast<Eigen::Index>(j)] - net_.junctions()[j].elevation;
    return p > 0.0 ? leak_k_[j] * std::sqrt(2.0 * kGravity * p) : 0.0;
  }

  Eigen::VectorXd residual(const Eigen::VectorXd& h) const {
    Eigen::VectorXd f(static_cast<Eigen::Index>(size()));
    for (std::size_t j = 0; j < size(); ++j) {
      f[static_cast<Eigen::Index>(j)] = -demand_[j] - leak_at(h, j);
    }
    for (std::size_t k = 0; k < open_.size(); ++k) {
      const auto p = open_[k];
      const auto a = net_.pipe_from(p);
      const auto b = net_.pipe_to(p);
      const double q = pipe_law(head(h, a) - head(h, b), resistance_[k],
                                options_.linearization_threshold).flow;
      if (!net_.is_reservoir(a)) f[static_cast<Eigen::Index>(a)] -= q;
      if (!net_.is_reservoir(b)) f[static_cast<Eigen::Index>(b)] += q;
    }
    return f;
  }

  // Negated Jacobian of `residual`; symmetric positive definite on a
  // connected network.
  Eigen::MatrixXd stiffness(const Eigen::VectorXd& h) const {
    const auto n = static_cast<Eigen::Index>(size());
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t k = 0; k < open_.size(); ++k) {
      const auto p = open_[k];
      const auto u = net_.pipe_from(p);
      const auto v = net_.pipe_to(p);
      const double s = pipe_law(head(h, u) - head(h, v), resistance_[k],
                                options_.linearization_threshold).slope;
      add_conductance(a, u, v, s);
    }
    for (std::size_t j = 0; j < size(); ++j) {
      if (leak_k_[j] == 0.0) continue;
      const double p = h[static_cast<Eigen::Index>(j)] - net_.junctions()[j].elevation;
      const double pe = std::max(p, options_.linearization_threshold);
      a(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) +=
          leak_k_[j] * std::sqrt(2.0 * kGravity) / (2.0 * std::sqrt(pe));
    }
    return a;
  }

  // Heads of the linear network with conductance (1/r)^0.54, i.e. the flow a
  // pipe would carry under one metre of head loss.
  Eigen::VectorXd initial_heads() const {
    const auto n = static_cast<Eigen::Index>(size());
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd rhs(n);
    for (std::size_t j = 0; j < size(); ++j) {
      rhs[static_cast<Eigen::Index>(j)] = -demand_[j];
    }
    for (std::size_t k = 0; k < open_.size(); ++k) {
      const auto p = open_[k];
      const auto u = net_.pipe_from(p);
      const auto v = net_.pipe_to(p);
      const double g = std::pow(1.0 / resistance_[k], kFlowExponent);
      add_conductance(a, u, v, g);
      if (net_.is_reservoir(u) && !net_.is_reservoir(v)) {
        rhs[static_cast<Eigen::Index>(v)] += g * head({}, u);
      } else if (net_.is_reservoir(v) && !net_.is_reservoir(u)) {
        rhs[static_cast<Eigen::Index>(u)] += g * head({}, v);
      }
    }
    return a.ldlt().solve(rhs);
  }

  HydraulicState finish(const Eigen::VectorXd& h, double norm, int iterations) const {
    HydraulicState state;
    state.node_heads.resize(net_.node_count());
    for (std::size_t i = 0; i < net_.node_count(); ++i) state.node_heads[i] = head(h, i);
    state.pipe_flows.assign(net_.pipes().size(), 0.0);
    for (std::size_t k = 0; k < open_.size(); ++k) {
      const auto p = open_[k];
      state.pipe_flows[p] =
          pipe_law(state.node_heads[net_.pipe_from(p)] - state.node_heads[net_.pipe_to(p)],
                   resistance_[k], options_.linearization_threshold).flow;
    }
    state.leak_outflows.resize(size());
    for (std::size_t j = 0; j < size(); ++j) state.leak_outflows[j] = leak_at(h, j);
    state.residual_norm = norm;
    state.iterations = iterations;
    return state;
  }

 private:
  void add_conductance(Eigen::MatrixXd& a, std::size_t u, std::size_t v, double g) const {
    const bool ju = !net_.is_reservoir(u);
    const bool jv = !net_.is_reservoir(v);
    const auto iu = static_cast<Eigen::Index>(u);
    const auto iv = static_cast<Eigen::Index>(v);
    if (ju) a(iu, iu) += g;
    if (jv) a(iv, iv) += g;
    if (ju && jv) {
      a(iu, iv) -= g;
      a(iv, iu) -= g;
    }
  }

  const Network& net_;
  const SolverOptions& options_;
  std::vector<double> demand_;
  std::vector<double> leak_k_;
  std::vector<std::size_t> open_;
  std::vector<double> resistance_;
};

void require_supplied(const Network& net) {
  std::vector<bool> seen(net.node_count(), false);
  std::vector<std::vector<std::size_t>> adjacency(net.node_count());
  for (std::size_t p = 0; p < net.pipes().size(); ++p) {
    if (!net.pipes()[p].is_open()) continue;
    adjacency[net.pipe_from(p)].push_back(net.pipe_to(p));
    adjacency[net.pipe_to(p)].push_back(net.pipe_from(p));
  }
  std::queue<std::size_t> frontier;
  for (std::size_t n = net.junction_count(); n < net.node_count(); ++n) {
    seen[n] = true;
    frontier.push(n);
  }
  while (!frontier.empty()) {
    const auto n = frontier.front();
    frontier.pop();
    for (auto m : adjacency[n]) {
      if (!seen[m]) {
        seen[m] = true;
        frontier.push(m);
      }
    }
  }
  for (std::size_t j = 0; j < net.junction_count(); ++j) {
    if (!seen[j]) {
      throw Error(ErrorCode::Disconnected,
                  "junction '" + net.junctions()[j].id + "' has no open path to a reservoir");
    }
  }
}

}  // namespace

Network::Network(std::vector<Junction> junctions, std::vector<Reservoir> reservoirs,
                 std::vector<Pipe> pipes)
    : junctions_(std::move(junctions)),
      reservoirs_(std::move(reservoirs)),
      pipes_(std::move(pipes)) {
  validate_and_index();
}

void Network::validate_and_index() {
  if (reservoirs_.empty()) {
    throw Error(ErrorCode::InvalidNetwork, "network needs at least one reservoir");
  }
  auto add_node = [this](const std::string& id, std::size_t index) {
    if (id.empty() || !node_lookup_.emplace(id, index).second) {
      throw Error(ErrorCode::InvalidNetwork, "duplicate or empty node id '" + id + "'");
    }
  };
  for (std::size_t j = 0; j < junctions_.size(); ++j) {
    const auto& junction = junctions_[j];
    if (!finite_all({junction.elevation, junction.base_demand}) || junction.base_demand < 0.0) {
      throw Error(ErrorCode::InvalidNetwork, "junction '" + junction.id + "' has invalid data");
    }
    add_node(junction.id, j);
  }
  for (std::size_t r = 0; r < reservoirs_.size(); ++r) {
    if (!std::isfinite(reservoirs_[r].fixed_head)) {
      throw Error(ErrorCode::InvalidNetwork, "reservoir '" + reservoirs_[r].id + "' has invalid head");
    }
    add_node(reservoirs_[r].id, junctions_.size() + r);
  }

  endpoints_.clear();
  for (std::size_t p = 0; p < pipes_.size(); ++p) {
    const auto& pipe = pipes_[p];
    if (pipe.id.empty() || !pipe_lookup_.emplace(pipe.id, p).second) {
      throw Error(ErrorCode::InvalidNetwork, "duplicate or empty pipe id '" + pipe.id + "'");
    }
    if (!finite_all({pipe.length, pipe.diameter, pipe.roughness}) || pipe.length <= 0.0 ||
        pipe.diameter <= 0.0 || pipe.roughness < 50.0 || pipe.roughness > 160.0) {
      throw Error(ErrorCode::InvalidNetwork, "pipe '" + pipe.id + "' has invalid geometry");
    }
    const auto a = node_lookup_.find(pipe.from);
    const auto b = node_lookup_.find(pipe.to);
    if (a == node_lookup_.end() || b == node_lookup_.end()) {
      throw Error(ErrorCode::InvalidNetwork, "pipe '" + pipe.id + "' references an unknown node");
    }
    if (a->second == b->second) {
      throw Error(ErrorCode::InvalidNetwork, "pipe '" + pipe.id + "' is a self-loop");
    }
    endpoints_.emplace_back(a->second, b->second);
  }

  // Connectivity with every pipe open.
  std::vector<std::size_t> parent(node_count());
  for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = i;
  auto find = [&parent](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& [a, b] : endpoints_) parent[find(a)] = find(b);
  const auto root = find(0);
  for (std::size_t i = 1; i < node_count(); ++i) {
    if (find(i) != root) {
      throw Error(ErrorCode::InvalidNetwork, "network graph is not connected");
    }
  }
}

Network Network::from_json(const nlohmann::json& doc) {
  try {
    std::vector<Junction> junctions;
    for (const auto& j : doc.at("junctions")) {
      junctions.push_back({id_from_json(j.at("id")), j.value("elevation", 0.0),
                           j.value("base_demand", 0.0)});
    }
    std::vector<Reservoir> reservoirs;
    for (const auto& r : doc.at("reservoirs")) {
      reservoirs.push_back({id_from_json(r.at("id")), r.at("fixed_head").get<double>()});
    }
    std::vector<Pipe> pipes;
    for (const auto& p : doc.at("pipes")) {
      const auto& ends = p.at("endpoints");
      if (!ends.is_array() || ends.size() != 2) {
        throw Error(ErrorCode::InvalidNetwork, "pipe endpoints must be a pair");
      }
      const std::string status = p.value("status", std::string("open"));
      if (status != "open" && status != "closed") {
        throw Error(ErrorCode::InvalidNetwork, "pipe status must be 'open' or 'closed'");
      }
      pipes.push_back({id_from_json(p.at("id")), id_from_json(ends[0]), id_from_json(ends[1]),
                       p.at("length").get<double>(), p.at("diameter").get<double>(),
                       p.at("roughness").get<double>(),
                       status == "open" ? PipeStatus::Open : PipeStatus::Closed});
    }
    return Network(std::move(junctions), std::move(reservoirs), std::move(pipes));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidNetwork, std::string("malformed network JSON: ") + e.what());
  }
}

Network Network::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open network file " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidNetwork, path.string() + ": " + e.what());
  }
  return from_json(doc);
}

nlohmann::json Network::to_json() const {
  nlohmann::json doc;
  doc["junctions"] = nlohmann::json::array();
  for (const auto& j : junctions_) {
    doc["junctions"].push_back(
        {{"id", j.id}, {"elevation", j.elevation}, {"base_demand", j.base_demand}});
  }
  doc["reservoirs"] = nlohmann::json::array();
  for (const auto& r : reservoirs_) {
    doc["reservoirs"].push_back({{"id", r.id}, {"fixed_head", r.fixed_head}});
  }
  doc["pipes"] = nlohmann::json::array();
  for (const auto& p : pipes_) {
    doc["pipes"].push_back({{"id", p.id},
                            {"endpoints", {p.from, p.to}},
                            {"length", p.length},
                            {"diameter", p.diameter},
                            {"roughness", p.roughness},
                            {"status", p.is_open() ? "open" : "closed"}});
  }
  return doc;
}

std::size_t Network::node_index(std::string_view id) const {
  const auto it = node_lookup_.find(std::string(id));
  if (it == node_lookup_.end()) {
    throw Error(ErrorCode::UnknownNode, "unknown node '" + std::string(id) + "'");
  }
  return it->second;
}

std::size_t Network::junction_index(std::string_view id) const {
  const auto index = node_index(id);
  if (is_reservoir(index)) {
    throw Error(ErrorCode::UnknownNode, "'" + std::string(id) + "' is not a junction");
  }
  return index;
}

std::size_t Network::pipe_index(std::string_view id) const {
  const auto it = pipe_lookup_.find(std::string(id));
  if (it == pipe_lookup_.end()) {
    throw Error(ErrorCode::UnknownPipe, "unknown pipe '" + std::string(id) + "'");
  }
  return it->second;
}

bool Network::has_pipe(std::string_view id) const {
  return pipe_lookup_.contains(std::string(id));
}

const std::string& Network::node_id(std::size_t node) const {
  return is_reservoir(node) ? reservoirs_.at(node - junctions_.size()).id
                            : junctions_.at(node).id;
}

double Network::node_elevation(std::size_t node) const {
  // Reservoir "pressure head" is reported relative to a zero datum.
  return is_reservoir(node) ? 0.0 : junctions_.at(node).elevation;
}

Network Network::with_pipe_status(std::string_view pipe_id, PipeStatus status) const {
  Network copy = *this;
  copy.pipes_[pipe_index(pipe_id)].status = status;
  return copy;
}

bool operator==(const Network& a, const Network& b) {
  auto same_pipe = [](const Pipe& x, const Pipe& y) {
    return x.id == y.id && x.from == y.from && x.to == y.to && x.length == y.length &&
           x.diameter == y.diameter && x.roughness == y.roughness && x.status == y.status;
  };
  if (a.junctions_.size() != b.junctions_.size() ||
      a.reservoirs_.size() != b.reservoirs_.size() || a.pipes_.size() != b.pipes_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.junctions_.size(); ++i) {
    const auto& x = a.junctions_[i];
    const auto& y = b.junctions_[i];
    if (x.id != y.id || x.elevation != y.elevation || x.base_demand != y.base_demand) return false;
  }
  for (std::size_t i = 0; i < a.reservoirs_.size(); ++i) {
    if (a.reservoirs_[i].id != b.reservoirs_[i].id ||
        a.reservoirs_[i].fixed_head != b.reservoirs_[i].fixed_head) {
      return false;
    }
  }
  for (std::size_t i = 0; i < a.pipes_.size(); ++i) {
    if (!same_pipe(a.pipes_[i], b.pipes_[i])) return false;
  }
  return true;
}

void LeakSpec::validate() const {
  if (!std::isfinite(hole_diameter) || hole_diameter < 0.0) {
    throw Error(ErrorCode::InvalidScenario, "leak hole diameter must be >= 0");
  }
  if (!(discharge_coefficient > 0.0 && discharge_coefficient <= 1.0)) {
    throw Error(ErrorCode::InvalidScenario, "discharge coefficient must be in (0, 1]");
  }
}

double pipe_resistance(const Pipe& pipe) {
  return kHazenWilliamsCoefficient * pipe.length /
         (std::pow(pipe.roughness, kHazenWilliamsExponent) *
          std::pow(pipe.diameter, 4.871));
}

double leak_flow(double pressure_head, const LeakSpec& leak) {
  if (!(pressure_head > 0.0)) return 0.0;
  return leak_coefficient(leak) * std::sqrt(2.0 * kGravity * pressure_head);
}

HydraulicState solve_steady_state(const Network& net, std::span<const LeakSpec> leaks,
                                  std::span<const double> demand_multiplier,
                                  const SolverOptions& options) {
  require_supplied(net);
  const Balance balance(net, leaks, demand_multiplier, options);
  if (balance.size() == 0) return balance.finish({}, 0.0, 0);

  Eigen::VectorXd heads = balance.initial_heads();
  Eigen::VectorXd f = balance.residual(heads);
  double norm = f.lpNorm<Eigen::Infinity>();
  int iteration = 0;
  while (norm > options.tolerance) {
    if (iteration >= options.max_iterations) {
      throw Error(ErrorCode::NonConvergence,
                  "mass-balance residual " + std::to_string(norm) + " after " +
                      std::to_string(iteration) + " iterations");
    }
    ++iteration;
    const Eigen::VectorXd step = balance.stiffness(heads).ldlt().solve(f);
    const double merit = f.squaredNorm();
    double lambda = 1.0;
    Eigen::VectorXd trial = heads + step;
    Eigen::VectorXd trial_f = balance.residual(trial);
    for (int halving = 0; halving < options.max_halvings && !(trial_f.squaredNorm() < merit);
         ++halving) {
      lambda *= 0.5;
      trial = heads + lambda * step;
      trial_f = balance.residual(trial);
    }
    heads = std::move(trial);
    f = std::move(trial_f);
    norm = f.lpNorm<Eigen::Infinity>();
    if (!std::isfinite(norm)) {
      throw Error(ErrorCode::NonConvergence, "solver diverged");
    }
  }
  return balance.finish(heads, norm, iteration);
}

std::vector<double> mass_balance(const Network& net, const HydraulicState& state,
                                 std::span<const double> demand_multiplier) {
  std::vector<double> out(net.junction_count(), 0.0);
  for (std::size_t j = 0; j < net.junction_count(); ++j) {
    const double m = demand_multiplier.empty() ? 1.0 : demand_multiplier[j];
    out[j] = -net.junctions()[j].base_demand * m - state.leak_outflows[j];
  }
  for (std::size_t p = 0; p < net.pipes().size(); ++p) {
    const double q = state.pipe_flows[p];
    if (!net.is_reservoir(net.pipe_from(p))) out[net.pipe_from(p)] -= q;
    if (!net.is_reservoir(net.pipe_to(p))) out[net.pipe_to(p)] += q;
  }
  return out;
}

Network apply_blockage(const Network& net, std::string_view pipe_id) {
  return net.with_pipe_status(pipe_id, PipeStatus::Closed);
}

Network reopen_pipe(const Network& net, std::string_view pipe_id) {
  return net.with_pipe_status(pipe_id, PipeStatus::Open);
}

std::vector<bool> downstream_nodes(const Network& net, const HydraulicState& state,
                                   std::string_view pipe_id) {
  const auto blocked = net.pipe_index(pipe_id);
  std::vector<std::vector<std::size_t>> out_edges(net.node_count());
  for (std::size_t p = 0; p < net.pipes().size(); ++p) {
    const double q = state.pipe_flows[p];
    if (!net.pipes()[p].is_open() || q == 0.0) continue;
    const auto a = net.pipe_from(p);
    const auto b = net.pipe_to(p);
    if (q > 0.0) {
      out_edges[a].push_back(b);
    } else {
      out_edges[b].push_back(a);
    }
  }
  const std::size_t start =
      state.pipe_flows[blocked] >= 0.0 ? net.pipe_to(blocked) : net.pipe_from(blocked);
  std::vector<bool> reached(net.node_count(), false);
  std::queue<std::size_t> frontier;
  reached[start] = true;
  frontier.push(start);
  while (!frontier.empty()) {
    const auto n = frontier.front();
    frontier.pop();
    for (auto m : out_edges[n]) {
      if (!reached[m]) {
        reached[m] = true;
        frontier.push(m);
      }
    }
  }
  return reached;
}

}  // namespace aquadrift::hydronet
