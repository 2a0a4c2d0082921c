#include "aquadrift/neural.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "aquadrift/error.hpp"

namespace aquadrift::neural {

namespace {

constexpr int kCheckpointVersion = 1;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// exp-based tanh; about three times cheaper than std::tanh here and
// accurate to a few ulp in absolute terms.
double fast_tanh(double x) { return 1.0 - 2.0 / (std::exp(2.0 * x) + 1.0); }

struct LstmView {
  const double* wx;  // 4H x in
  const double* wh;  // 4H x H
  const double* b;   // 4H
  std::size_t in;
  std::size_t hidden;
};

struct LstmGrad {
  double* wx;
  double* wh;
  double* b;
};

// Gate activations and states for every step; gates are laid out as
// [input, forget, cell, output] blocks of `hidden` entries.
struct LstmTrace {
  std::size_t steps = 0;
  std::vector<double> inputs;  // steps x in
  std::vector<double> gates;   // steps x 4H (post-activation)
  std::vector<double> cell;    // (steps + 1) x H, row 0 = initial
  std::vector<double> hidden;  // (steps + 1) x H, row 0 = initial
  std::vector<double> cell_tanh;  // steps x H

  const double* h(std::size_t t) const { return hidden.data() + t * hsize; }
  const double* c(std::size_t t) const { return cell.data() + t * hsize; }
  std::size_t hsize = 0;
};

void lstm_forward(const LstmView& w, std::span<const double> inputs, std::size_t steps,
                  LstmTrace& tr) {
  const auto H = w.hidden;
  tr.steps = steps;
  tr.hsize = H;
  tr.inputs.assign(inputs.begin(), inputs.end());
  tr.gates.assign(steps * 4 * H, 0.0);
  tr.cell.assign((steps + 1) * H, 0.0);
  tr.hidden.assign((steps + 1) * H, 0.0);
  tr.cell_tanh.resize(steps * H);
  for (std::size_t t = 0; t < steps; ++t) {
    const double* x = tr.inputs.data() + t * w.in;
    const double* hp = tr.hidden.data() + t * H;
    const double* cp = tr.cell.data() + t * H;
    double* a = tr.gates.data() + t * 4 * H;
    // Column-wise accumulation keeps the 4H sums independent.
    for (std::size_t r = 0; r < 4 * H; ++r) a[r] = w.b[r];
    for (std::size_t k = 0; k < w.in; ++k) {
      const double xk = x[k];
      for (std::size_t r = 0; r < 4 * H; ++r) a[r] += w.wx[r * w.in + k] * xk;
    }
    for (std::size_t k = 0; k < H; ++k) {
      const double hk = hp[k];
      for (std::size_t r = 0; r < 4 * H; ++r) a[r] += w.wh[r * H + k] * hk;
    }
    double* c = tr.cell.data() + (t + 1) * H;
    double* h = tr.hidden.data() + (t + 1) * H;
    for (std::size_t k = 0; k < H; ++k) {
      const double ig = sigmoid(a[k]);
      const double fg = sigmoid(a[H + k]);
      const double gg = fast_tanh(a[2 * H + k]);
      const double og = sigmoid(a[3 * H + k]);
      a[k] = ig;
      a[H + k] = fg;
      a[2 * H + k] = gg;
      a[3 * H + k] = og;
      c[k] = fg * cp[k] + ig * gg;
      const double tc = fast_tanh(c[k]);
      tr.cell_tanh[t * H + k] = tc;
      h[k] = og * tc;
    }
  }
}

// `dh_ext` holds dL/dh_t for t = 1..steps (steps x H). Accumulates weight
// gradients and writes dL/dx_t into `dinputs` (steps x in).
void lstm_backward(const LstmView& w, const LstmTrace& tr, std::span<const double> dh_ext,
                   LstmGrad g, std::span<double> dinputs) {
  const auto H = w.hidden;
  thread_local std::vector<double> dh_next, dc_next, da;
  dh_next.assign(H, 0.0);
  dc_next.assign(H, 0.0);
  da.resize(4 * H);
  std::fill(dinputs.begin(), dinputs.end(), 0.0);
  for (std::size_t t = tr.steps; t-- > 0;) {
    const double* gates = tr.gates.data() + t * 4 * H;
    const double* tcs = tr.cell_tanh.data() + t * H;
    const double* cp = tr.c(t);
    const double* hp = tr.h(t);
    const double* x = tr.inputs.data() + t * w.in;
    for (std::size_t k = 0; k < H; ++k) {
      const double ig = gates[k];
      const double fg = gates[H + k];
      const double gg = gates[2 * H + k];
      const double og = gates[3 * H + k];
      const double dh = dh_ext[t * H + k] + dh_next[k];
      const double tc = tcs[k];
      const double dc = dh * og * (1.0 - tc * tc) + dc_next[k];
      da[k] = dc * gg * ig * (1.0 - ig);
      da[H + k] = dc * cp[k] * fg * (1.0 - fg);
      da[2 * H + k] = dc * ig * (1.0 - gg * gg);
      da[3 * H + k] = dh * tc * og * (1.0 - og);
      dc_next[k] = dc * fg;
    }
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    double* dx = dinputs.data() + t * w.in;
    for (std::size_t r = 0; r < 4 * H; ++r) {
      const double d = da[r];
      g.b[r] += d;
      double* gwx = g.wx + r * w.in;
      const double* wxr = w.wx + r * w.in;
      for (std::size_t k = 0; k < w.in; ++k) {
        gwx[k] += d * x[k];
        dx[k] += wxr[k] * d;
      }
      double* gwh = g.wh + r * H;
      const double* whr = w.wh + r * H;
      for (std::size_t k = 0; k < H; ++k) {
        gwh[k] += d * hp[k];
        dh_next[k] += whr[k] * d;
      }
    }
  }
}

}  // namespace

struct SeqModel::Trace {
  LstmTrace encoder;
  std::vector<double> dropped;  // encoder summary after dropout
  std::vector<double> summary;  // after leaky ReLU
  std::vector<double> mu;
  std::vector<double> log_var;
  std::vector<double> z;
  LstmTrace decoder;
  std::vector<double> readout;  // pre-activation output per step
  std::vector<double> output;
  std::vector<double> decoder_input;
};

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
  if (timestep == 0 || hidden == 0 || latent == 0) fail("model sizes must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
  if (!(beta >= 0.0)) fail("beta must be >= 0");
  if (!(learning_rate > 0.0)) fail("learning rate must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    fail("Adam decay rates must be in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) fail("Adam epsilon must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"timestep", timestep},
          {"hidden", hidden},
          {"latent", latent},
          {"beta", beta},
          {"dropout", dropout},
          {"learning_rate", learning_rate},
          {"leaky_slope", leaky_slope},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"adam_epsilon", adam_epsilon},
          {"softmax_output", softmax_output}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& doc) { return from_json(doc, ModelConfig{}); }

ModelConfig ModelConfig::from_json(const nlohmann::json& doc, ModelConfig c) {
  c.timestep = doc.value("timestep", c.timestep);
  c.hidden = doc.value("hidden", c.hidden);
  c.latent = doc.value("latent", c.latent);
  c.beta = doc.value("beta", c.beta);
  c.dropout = doc.value("dropout", c.dropout);
  c.learning_rate = doc.value("learning_rate", c.learning_rate);
  c.leaky_slope = doc.value("leaky_slope", c.leaky_slope);
  c.adam_beta1 = doc.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = doc.value("adam_beta2", c.adam_beta2);
  c.adam_epsilon = doc.value("adam_epsilon", c.adam_epsilon);
  c.softmax_output = doc.value("softmax_output", c.softmax_output);
  c.validate();
  return c;
}

LossTerms vae_loss(std::span<const double> x, std::span<const double> x_hat,
                   std::span<const double> mu, std::span<const double> log_var, double beta) {
  LossTerms out;
  for (std::size_t t = 0; t < x.size(); ++t) {
    const double d = x_hat[t] - x[t];
    out.recon += d * d;
  }
  out.recon /= static_cast<double>(x.size());
  for (std::size_t j = 0; j < mu.size(); ++j) {
    out.kl += 1.0 + log_var[j] - mu[j] * mu[j] - std::exp(log_var[j]);
  }
  out.kl *= -0.5;
  out.total = out.recon + beta * out.kl;
  return out;
}

Noise Noise::none(const ModelConfig& config) {
  return {std::vector<double>(config.latent, 0.0), std::vector<double>(config.hidden, 1.0)};
}

SeqModel::SeqModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  const auto H = config_.hidden;
  const auto L = config_.latent;
  std::size_t offset = 0;
  auto add = [&](const char* name, std::size_t rows, std::size_t cols) {
    groups_.push_back({name, offset, rows, cols});
    offset += rows * cols;
  };
  add("encoder.wx", 4 * H, 1);
  add("encoder.wh", 4 * H, H);
  add("encoder.b", 4 * H, 1);
  add("mu.w", L, H);
  add("mu.b", L, 1);
  add("log_var.w", L, H);
  add("log_var.b", L, 1);
  add("decoder.wx", 4 * H, L);
  add("decoder.wh", 4 * H, H);
  add("decoder.b", 4 * H, 1);
  add("readout.w", 1, H);
  add("readout.b", 1, 1);
  params_.assign(offset, 0.0);
  adam_m_.assign(offset, 0.0);
  adam_v_.assign(offset, 0.0);
}

SeqModel::SeqModel(const ModelConfig& config, std::uint64_t seed) : SeqModel(config) {
  rng_.seed(seed);
  const auto H = config_.hidden;
  for (const auto& g : groups_) {
    const bool bias = g.cols == 1 && g.name.ends_with(".b");
    if (bias) continue;
    // Fan-in is the row length: input width for wx, H for wh and heads.
    const double fan_in = static_cast<double>(g.cols);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (std::size_t i = 0; i < g.size(); ++i) params_[g.offset + i] = dist(rng_);
  }
  for (const char* name : {"encoder.b", "decoder.b"}) {
    const auto& g = group(name);
    for (std::size_t k = 0; k < H; ++k) params_[g.offset + H + k] = 1.0;
  }
}

SeqModel SeqModel::zeros(const ModelConfig& config, std::uint64_t seed) {
  SeqModel m(config);
  m.rng_.seed(seed);
  return m;
}

const ParameterGroup& SeqModel::group(const std::string& name) const {
  for (const auto& g : groups_) {
    if (g.name == name) return g;
  }
  throw Error(ErrorCode::InvalidConfig, "no parameter group '" + name + "'");
}

void SeqModel::run_forward(std::span<const double> window, const Noise& noise,
                           Trace& tr) const {
  const auto T = config_.timestep;
  const auto H = config_.hidden;
  const auto L = config_.latent;
  if (window.size() != T) {
    throw Error(ErrorCode::InvalidConfig, "window length " + std::to_string(window.size()) +
                                              " != timestep " + std::to_string(T));
  }
  const double* p = params_.data();
  const LstmView enc{p + groups_[0].offset, p + groups_[1].offset, p + groups_[2].offset, 1, H};
  lstm_forward(enc, window, T, tr.encoder);

  const double* last = tr.encoder.h(T);
  tr.dropped.resize(H);
  tr.summary.resize(H);
  for (std::size_t k = 0; k < H; ++k) {
    tr.dropped[k] = last[k] * noise.dropout_scale[k];
    tr.summary[k] = tr.dropped[k] > 0.0 ? tr.dropped[k] : config_.leaky_slope * tr.dropped[k];
  }
  tr.mu.assign(L, 0.0);
  tr.log_var.assign(L, 0.0);
  tr.z.assign(L, 0.0);
  const double* wmu = p + groups_[3].offset;
  const double* bmu = p + groups_[4].offset;
  const double* wlv = p + groups_[5].offset;
  const double* blv = p + groups_[6].offset;
  for (std::size_t j = 0; j < L; ++j) {
    double m = bmu[j];
    double v = blv[j];
    for (std::size_t k = 0; k < H; ++k) {
      m += wmu[j * H + k] * tr.summary[k];
      v += wlv[j * H + k] * tr.summary[k];
    }
    tr.mu[j] = m;
    tr.log_var[j] = v;
    tr.z[j] = m + std::exp(0.5 * v) * noise.epsilon[j];
  }

  auto& dec_in = tr.decoder_input;
  dec_in.resize(T * L);
  for (std::size_t t = 0; t < T; ++t) std::copy(tr.z.begin(), tr.z.end(), dec_in.begin() + t * L);
  const LstmView dec{p + groups_[7].offset, p + groups_[8].offset, p + groups_[9].offset, L, H};
  lstm_forward(dec, dec_in, T, tr.decoder);

  const double* wo = p + groups_[10].offset;
  const double bo = p[groups_[11].offset];
  tr.readout.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double* h = tr.decoder.h(t + 1);
    double y = bo;
    for (std::size_t k = 0; k < H; ++k) y += wo[k] * h[k];
    tr.readout[t] = y;
  }
  tr.output = tr.readout;
  if (config_.softmax_output) {
    const double mx = *std::max_element(tr.readout.begin(), tr.readout.end());
    double sum = 0.0;
    for (auto& v : tr.output) sum += (v = std::exp(v - mx));
    for (auto& v : tr.output) v /= sum;
  }
}

ForwardResult SeqModel::forward(std::span<const double> window, const Noise& noise) const {
  Trace tr;
  run_forward(window, noise, tr);
  return {tr.output, tr.mu, tr.log_var, tr.z};
}

ForwardResult SeqModel::forward(std::span<const double> window, Mode mode) {
  const Noise noise = mode == Mode::Train ? sample_noise() : Noise::none(config_);
  return forward(window, noise);
}

Noise SeqModel::sample_noise() {
  Noise n;
  std::normal_distribution<double> normal(0.0, 1.0);
  n.epsilon.resize(config_.latent);
  for (auto& e : n.epsilon) e = normal(rng_);
  n.dropout_scale.assign(config_.hidden, 1.0);
  if (config_.dropout > 0.0) {
    std::bernoulli_distribution drop(config_.dropout);
    const double keep = 1.0 / (1.0 - config_.dropout);
    for (auto& s : n.dropout_scale) s = drop(rng_) ? 0.0 : keep;
  }
  return n;
}

LossTerms SeqModel::loss(std::span<const double> window, const Noise& noise) const {
  thread_local Trace tr;
  run_forward(window, noise, tr);
  return vae_loss(window, tr.output, tr.mu, tr.log_var, config_.beta);
}

LossTerms SeqModel::loss_and_gradient(std::span<const double> window, const Noise& noise,
                                      std::span<double> grad) const {
  const auto T = config_.timestep;
  const auto H = config_.hidden;
  const auto L = config_.latent;
  thread_local Trace tr;
  run_forward(window, noise, tr);
  const LossTerms terms = vae_loss(window, tr.output, tr.mu, tr.log_var, config_.beta);

  const double* p = params_.data();
  double* g = grad.data();

  // Output layer.
  thread_local std::vector<double> dout;
  dout.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    dout[t] = 2.0 * (tr.output[t] - window[t]) / static_cast<double>(T);
  }
  thread_local std::vector<double> dy;
  dy = dout;
  if (config_.softmax_output) {
    double dot = 0.0;
    for (std::size_t t = 0; t < T; ++t) dot += dout[t] * tr.output[t];
    for (std::size_t t = 0; t < T; ++t) dy[t] = tr.output[t] * (dout[t] - dot);
  }
  const double* wo = p + groups_[10].offset;
  double* gwo = g + groups_[10].offset;
  double* gbo = g + groups_[11].offset;
  thread_local std::vector<double> dh_dec;
  dh_dec.assign(T * H, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const double* h = tr.decoder.h(t + 1);
    gbo[0] += dy[t];
    for (std::size_t k = 0; k < H; ++k) {
      gwo[k] += dy[t] * h[k];
      dh_dec[t * H + k] = wo[k] * dy[t];
    }
  }

  // Decoder; the latent sample feeds every step.
  const LstmView dec{p + groups_[7].offset, p + groups_[8].offset, p + groups_[9].offset, L, H};
  thread_local std::vector<double> ddec_in;
  ddec_in.resize(T * L);
  lstm_backward(dec, tr.decoder, dh_dec,
                {g + groups_[7].offset, g + groups_[8].offset, g + groups_[9].offset}, ddec_in);
  thread_local std::vector<double> dz;
  dz.assign(L, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < L; ++j) dz[j] += ddec_in[t * L + j];
  }

  // Reparameterization and KL.
  const double beta = config_.beta;
  thread_local std::vector<double> dmu, dlv;
  dmu.resize(L);
  dlv.resize(L);
  for (std::size_t j = 0; j < L; ++j) {
    const double sd = std::exp(0.5 * tr.log_var[j]);
    dmu[j] = dz[j] + beta * tr.mu[j];
    dlv[j] = dz[j] * noise.epsilon[j] * 0.5 * sd + beta * 0.5 * (std::exp(tr.log_var[j]) - 1.0);
  }
  const double* wmu = p + groups_[3].offset;
  const double* wlv = p + groups_[5].offset;
  thread_local std::vector<double> dsummary;
  dsummary.assign(H, 0.0);
  for (std::size_t j = 0; j < L; ++j) {
    g[groups_[4].offset + j] += dmu[j];
    g[groups_[6].offset + j] += dlv[j];
    for (std::size_t k = 0; k < H; ++k) {
      g[groups_[3].offset + j * H + k] += dmu[j] * tr.summary[k];
      g[groups_[5].offset + j * H + k] += dlv[j] * tr.summary[k];
      dsummary[k] += wmu[j * H + k] * dmu[j] + wlv[j * H + k] * dlv[j];
    }
  }

  // Leaky ReLU, dropout, encoder.
  thread_local std::vector<double> dh_enc;
  dh_enc.assign(T * H, 0.0);
  for (std::size_t k = 0; k < H; ++k) {
    const double slope = tr.dropped[k] > 0.0 ? 1.0 : config_.leaky_slope;
    dh_enc[(T - 1) * H + k] = dsummary[k] * slope * noise.dropout_scale[k];
  }
  const LstmView enc{p + groups_[0].offset, p + groups_[1].offset, p + groups_[2].offset, 1, H};
  thread_local std::vector<double> dx;
  dx.resize(T);
  lstm_backward(enc, tr.encoder, dh_enc,
                {g + groups_[0].offset, g + groups_[1].offset, g + groups_[2].offset}, dx);
  return terms;
}

std::vector<double> SeqModel::encode(std::span<const double> window) const {
  return forward(window, Noise::none(config_)).mu;
}

double SeqModel::score(std::span<const double> window) const {
  return loss(window, Noise::none(config_)).total;
}

void SeqModel::adam_step(std::span<const double> grad) {
  ++adam_t_;
  const double b1 = config_.adam_beta1;
  const double b2 = config_.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam_t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam_t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    adam_m_[i] = b1 * adam_m_[i] + (1.0 - b1) * grad[i];
    adam_v_[i] = b2 * adam_v_[i] + (1.0 - b2) * grad[i] * grad[i];
    const double m_hat = adam_m_[i] / c1;
    const double v_hat = adam_v_[i] / c2;
    params_[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.adam_epsilon);
  }
}

bool SeqModel::all_finite() const {
  return std::all_of(params_.begin(), params_.end(), [](double v) { return std::isfinite(v); });
}

nlohmann::json SeqModel::to_json() const {
  nlohmann::json doc;
  doc["format"] = "aquadrift.seqmodel";
  doc["version"] = kCheckpointVersion;
  doc["config"] = config_.to_json();
  nlohmann::json params = nlohmann::json::object();
  for (const auto& g : groups_) {
    params[g.name] = std::vector<double>(params_.begin() + static_cast<std::ptrdiff_t>(g.offset),
                                         params_.begin() + static_cast<std::ptrdiff_t>(g.offset + g.size()));
  }
  doc["parameters"] = std::move(params);
  doc["adam"] = {{"t", adam_t_}, {"m", adam_m_}, {"v", adam_v_}};
  std::ostringstream rng_state;
  rng_state << rng_;
  doc["rng"] = rng_state.str();
  return doc;
}

SeqModel SeqModel::from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format") != "aquadrift.seqmodel") {
      throw Error(ErrorCode::Io, "not a model checkpoint");
    }
    if (doc.at("version").get<int>() != kCheckpointVersion) {
      throw Error(ErrorCode::Io, "unsupported checkpoint version");
    }
    SeqModel m(ModelConfig::from_json(doc.at("config")));
    for (const auto& g : m.groups_) {
      const auto values = doc.at("parameters").at(g.name).get<std::vector<double>>();
      if (values.size() != g.size()) {
        throw Error(ErrorCode::Io, "parameter group '" + g.name + "' has the wrong size");
      }
      std::copy(values.begin(), values.end(), m.params_.begin() + static_cast<std::ptrdiff_t>(g.offset));
    }
    const auto& adam = doc.at("adam");
    m.adam_t_ = adam.at("t").get<std::uint64_t>();
    m.adam_m_ = adam.at("m").get<std::vector<double>>();
    m.adam_v_ = adam.at("v").get<std::vector<double>>();
    if (m.adam_m_.size() != m.params_.size() || m.adam_v_.size() != m.params_.size()) {
      throw Error(ErrorCode::Io, "optimizer state has the wrong size");
    }
    std::istringstream rng_state(doc.at("rng").get<std::string>());
    rng_state >> m.rng_;
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, std::string("malformed checkpoint: ") + e.what());
  }
}

void SeqModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << to_json().dump(1) << '\n';
}

SeqModel SeqModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, path.string() + ": " + e.what());
  }
  return from_json(doc);
}

std::vector<double> eval_losses(const SeqModel& model, std::span<const Window> windows) {
  std::vector<double> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back(model.score(w));
  return out;
}

TrainResult train(SeqModel& model, std::span<const Window> windows, std::size_t epochs,
                  std::size_t batch_size) {
  if (windows.empty()) throw Error(ErrorCode::EmptyTrainingSet, "no training windows");
  if (batch_size == 0) throw Error(ErrorCode::InvalidConfig, "batch size must be positive");
  TrainResult result;
  {
    const auto initial = eval_losses(model, windows);
    result.initial_mean_loss =
        std::accumulate(initial.begin(), initial.end(), 0.0) / static_cast<double>(initial.size());
  }
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> grad(model.parameters().size());
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), model.rng());
    double epoch_loss = 0.0;
    std::size_t batch = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size, ++batch) {
      const auto stop = std::min(order.size(), start + batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t i = start; i < stop; ++i) {
        const Noise noise = model.sample_noise();
        const auto terms = model.loss_and_gradient(windows[order[i]], noise, grad);
        if (!std::isfinite(terms.total)) {
          throw Error(ErrorCode::NaNLoss, "non-finite loss at epoch " + std::to_string(epoch) +
                                              ", batch " + std::to_string(batch));
        }
        epoch_loss += terms.total;
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (auto& v : grad) v *= inv;
      model.adam_step(grad);
      if (!model.all_finite()) {
        throw Error(ErrorCode::NaNLoss, "non-finite parameters after epoch " +
                                            std::to_string(epoch) + ", batch " +
                                            std::to_string(batch));
      }
    }
    result.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(windows.size()));
  }
  result.final_losses = eval_losses(model, windows);
  return result;
}

std::vector<Window> make_windows(std::span<const double> values, std::size_t timestep) {
  std::vector<Window> out;
  if (timestep == 0 || values.size() < timestep) return out;
  out.reserve(values.size() - timestep + 1);
  for (std::size_t i = 0; i + timestep <= values.size(); ++i) {
    out.emplace_back(values.begin() + static_cast<std::ptrdiff_t>(i),
                     values.begin() + static_cast<std::ptrdiff_t>(i + timestep));
  }
  return out;
}

}  // namespace aquadrift::neural
