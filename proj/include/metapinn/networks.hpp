#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "metapinn/errors.hpp"
#include "metapinn/graph.hpp"
#include "metapinn/parameters.hpp"
#include "metapinn/rng.hpp"
#include "metapinn/tensor.hpp"

namespace metapinn {

/// Hidden state mapper: sensor windows to a low-dimensional health state.
struct HsmConfig {
  int time_steps = 15;     // T, rows of one input window
  int input_features = 14; // d_x
  int embed_dim = 32;      // d_e
  int key_dim = 16;        // d_k
  int num_blocks = 2;
  int hidden_dim = 4;      // d_h
  double dropout_rate = 0.1;
  double ln_eps = 1e-5;

  void validate() const {
    if (time_steps < 1) throw ConfigError("hsm.time_steps must be >= 1");
    if (input_features < 1) throw ConfigError("hsm.input_features must be >= 1");
    if (embed_dim < 1) throw ConfigError("hsm.embed_dim must be >= 1");
    if (key_dim < 1) throw ConfigError("hsm.key_dim must be >= 1");
    if (num_blocks < 1) throw ConfigError("hsm.num_blocks must be >= 1");
    if (hidden_dim < 1) throw ConfigError("hsm.hidden_dim must be >= 1");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
      throw ConfigError("hsm.dropout_rate must lie in [0, 1)");
  }
};

/// Degradation predictor head: health state plus run-time to a RUL estimate.
struct RulPredictorConfig {
  std::vector<int> hidden = {64, 64, 32}; // widths of the three tanh layers
  int terms = 16;                          // n, width of o and the weighting vector

  void validate() const {
    if (hidden.size() != 3)
      throw ConfigError("rul.hidden must list exactly three widths (four affine layers total)");
    for (int w : hidden)
      if (w < 1) throw ConfigError("rul.hidden widths must be >= 1");
    if (terms < 1) throw ConfigError("rul.terms must be >= 1");
  }
};

/// Learned governing-equation operator: maps the predictor's value and
/// spatial derivatives to a rate of change.
struct PgrConfig {
  int k_pde = 1;                    // highest spatial derivative order fed in
  std::vector<int> hidden = {64, 64};

  void validate() const {
    if (k_pde < 1) throw ConfigError("pgr.k_pde must be >= 1");
    if (k_pde > 2) throw CapabilityError("pgr.k_pde > 2 is not supported");
    if (hidden.empty()) throw ConfigError("pgr.hidden must be non-empty");
    for (int w : hidden)
      if (w < 1) throw ConfigError("pgr.hidden widths must be >= 1");
  }

  int input_dim(int hidden_dim) const { return 1 + hidden_dim * k_pde; }
};

struct ModelConfig {
  HsmConfig hsm;
  RulPredictorConfig rul;
  PgrConfig pgr;

  void validate() const {
    hsm.validate();
    rul.validate();
    pgr.validate();
  }
};

// ---- parameter construction ---------------------------------------------

/// Builds the full named parameter set for the three networks. Weights get
/// symmetric uniform fan-in initialization, biases start at zero, and the
/// output weighting vector starts at all-ones. Each tensor draws from its own
/// split of `rng`, so values depend only on the seed and the tensor's
/// position, not on how many values other tensors consumed.
inline ParameterSet make_parameters(const ModelConfig& cfg, const Rng& rng) {
  cfg.validate();
  ParameterSet p;
  std::uint64_t stream = 0;
  auto weight = [&](std::string name, Shape shape, int fan_in) {
    Rng r = rng.split(stream++);
    p.add(std::move(name), uniform_fan_in(std::move(shape), fan_in, r));
  };
  auto zeros = [&](std::string name, int len) {
    ++stream;
    p.add(std::move(name), Tensor::zeros({len}));
  };

  const int T = cfg.hsm.time_steps;
  const int dx = cfg.hsm.input_features;
  const int de = cfg.hsm.embed_dim;
  const int dk = cfg.hsm.key_dim;
  const int dh = cfg.hsm.hidden_dim;
  for (int i = 0; i < cfg.hsm.num_blocks; ++i) {
    const std::string b = "hsm.block" + std::to_string(i) + ".";
    const int in = i == 0 ? dx : de;
    weight(b + "We", {in, de}, in);
    zeros(b + "be", de);
    weight(b + "Wq", {dk, T}, T);
    weight(b + "Wk", {dk, T}, T);
    weight(b + "Wv", {T, T}, T);
    weight(b + "W1", {de, de}, de);
    zeros(b + "b1", de);
    weight(b + "W2", {de, de}, de);
    zeros(b + "b2", de);
  }
  weight("hsm.pool.Wp", {dh, de}, de);
  zeros("hsm.pool.bp", dh);

  int in = dh + 1;
  for (std::size_t i = 0; i < cfg.rul.hidden.size(); ++i) {
    const std::string b = "rul.layer" + std::to_string(i) + ".";
    weight(b + "W", {cfg.rul.hidden[i], in}, in);
    zeros(b + "b", cfg.rul.hidden[i]);
    in = cfg.rul.hidden[i];
  }
  weight("rul.layer3.W", {cfg.rul.terms, in}, in);
  zeros("rul.layer3.b", cfg.rul.terms);
  ++stream;
  p.add("rul.rho", Tensor::full({cfg.rul.terms}, 1.0));

  in = cfg.pgr.input_dim(dh);
  for (std::size_t i = 0; i < cfg.pgr.hidden.size(); ++i) {
    const std::string b = "pgr.layer" + std::to_string(i) + ".";
    weight(b + "W", {cfg.pgr.hidden[i], in}, in);
    zeros(b + "b", cfg.pgr.hidden[i]);
    in = cfg.pgr.hidden[i];
  }
  weight("pgr.out.W", {1, in}, in);
  zeros("pgr.out.b", 1);
  return p;
}

// ---- hidden state mapper -------------------------------------------------

struct HsmTrace {
  Var h;                       // final hidden state, length d_h
  std::vector<Var> attention;  // one row-stochastic d_e x d_e matrix per block
};

/// Full forward pass, exposing per-block attention weights for inspection.
/// `X` must be a (T, d_x) window. Pass an Rng when training with dropout.
inline HsmTrace hsm_forward_trace(Graph& g, const HsmConfig& cfg, const BoundParams& p, Var X,
                                  bool training = false, Rng* rng = nullptr) {
  const Shape& xs = g.shape(X);
  if (xs.size() != 2 || xs[0] != cfg.time_steps || xs[1] != cfg.input_features)
    throw ShapeError("hsm input " + shape_str(xs) + ", want [" + std::to_string(cfg.time_steps) +
                     ", " + std::to_string(cfg.input_features) + "]");
  const bool drop = training && cfg.dropout_rate > 0.0;
  if (drop && rng == nullptr) throw ConfigError("training with dropout needs an Rng");

  HsmTrace trace;
  Var y = X;
  for (int i = 0; i < cfg.num_blocks; ++i) {
    const std::string b = "hsm.block" + std::to_string(i) + ".";
    Var e = add_rowvec(matmul(y, p.at(b + "We")), p.at(b + "be"));
    // rows of z are the d_e feature columns over time
    Var z = transpose(e);
    Var q = matmul(z, transpose(p.at(b + "Wq")));
    Var k = matmul(z, transpose(p.at(b + "Wk")));
    Var v = matmul(z, transpose(p.at(b + "Wv")));
    Var scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(cfg.key_dim)));
    Var a = softmax_rows(scores);
    trace.attention.push_back(a);
    Var attended = transpose(matmul(a, v));
    if (drop) attended = dropout(attended, cfg.dropout_rate, true, *rng);
    Var r1 = layer_norm_rows(add(e, attended), cfg.ln_eps);
    Var f = add_rowvec(matmul(relu(add_rowvec(matmul(r1, p.at(b + "W1")), p.at(b + "b1"))),
                              p.at(b + "W2")),
                       p.at(b + "b2"));
    if (drop) f = dropout(f, cfg.dropout_rate, true, *rng);
    y = layer_norm_rows(add(r1, f), cfg.ln_eps);
  }
  Var pooled = col_mean(y);
  trace.h = add(matmul(p.at("hsm.pool.Wp"), pooled), p.at("hsm.pool.bp"));
  return trace;
}

inline Var hsm_forward(Graph& g, const HsmConfig& cfg, const BoundParams& p, Var X,
                       bool training = false, Rng* rng = nullptr) {
  return hsm_forward_trace(g, cfg, p, X, training, rng).h;
}

// ---- degradation predictor ----------------------------------------------

struct RulTerms {
  Var o;  // raw output components, length n
  Var y;  // weighted components o * rho
  Var u;  // scalar estimate, sum of y
};

inline RulTerms rul_terms(Graph& g, const RulPredictorConfig& cfg, const BoundParams& p, Var h,
                          Var t) {
  if (g.shape(t).empty() ? false : shape_numel(g.shape(t)) != 1)
    throw ShapeError("run-time t must be a scalar");
  Var c = concat({h, to_scalar(t)});
  Var a = c;
  for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
    const std::string b = "rul.layer" + std::to_string(i) + ".";
    a = tanh(add(matmul(p.at(b + "W"), a), p.at(b + "b")));
  }
  RulTerms out;
  out.o = add(matmul(p.at("rul.layer3.W"), a), p.at("rul.layer3.b"));
  out.y = mul(out.o, p.at("rul.rho"));
  out.u = to_scalar(sum_all(out.y));
  return out;
}

inline Var rul_forward(Graph& g, const RulPredictorConfig& cfg, const BoundParams& p, Var h,
                       Var t) {
  return rul_terms(g, cfg, p, h, t).u;
}

// ---- physics-guided regulator --------------------------------------------

/// Concatenates [u, grad_h (, second_h)] in fixed order. `second_h` must be
/// present exactly when k_pde = 2.
inline Var assemble_pgr_features(Var u, Var grad_h, std::optional<Var> second_h, int k_pde) {
  if (k_pde == 2 && !second_h.has_value())
    throw ShapeError("k_pde = 2 needs the second-derivative diagonal");
  if (k_pde == 1 && second_h.has_value())
    throw ShapeError("k_pde = 1 takes no second-derivative input");
  if (k_pde == 2) return concat({to_scalar(u), grad_h, *second_h});
  return concat({to_scalar(u), grad_h});
}

inline Var pgr_forward(Graph& g, const PgrConfig& cfg, int hidden_dim, const BoundParams& p,
                       Var features) {
  const Shape& fs = g.shape(features);
  const int want = cfg.input_dim(hidden_dim);
  if (fs.size() != 1 || fs[0] != want)
    throw ShapeError("regulator features " + shape_str(fs) + ", want [" + std::to_string(want) + "]");
  Var a = features;
  for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
    const std::string b = "pgr.layer" + std::to_string(i) + ".";
    a = tanh(add(matmul(p.at(b + "W"), a), p.at(b + "b")));
  }
  return to_scalar(add(matmul(p.at("pgr.out.W"), a), p.at("pgr.out.b")));
}

// ---- learned-equation residual -------------------------------------------

struct PdeTerms {
  Var u;
  Var du_dt;
  Var grad_h;
  std::optional<Var> second_h;
  Var features;
  Var p;  // regulator's predicted rate of change
  Var r;  // du_dt - p
};

/// Predictor: scalar estimate from (h, t). Regulator: rate of change from
/// the partially filled terms (u, du_dt, grad_h, second_h valid).
using PredictorFn = std::function<Var(Graph&, Var h, Var t)>;
using RegulatorFn = std::function<Var(Graph&, const PdeTerms&)>;

inline PdeTerms pde_terms_with(Graph& g, const PredictorFn& predictor,
                               const RegulatorFn& regulator, Var h, Var t, int k_pde) {
  PdeTerms terms;
  terms.u = predictor(g, h, t);
  terms.du_dt = to_scalar(g.input_gradient(terms.u, t));
  terms.grad_h = g.input_gradient(terms.u, h);
  if (k_pde == 2) terms.second_h = g.second_input_derivative(terms.u, h);
  terms.features = assemble_pgr_features(terms.u, terms.grad_h, terms.second_h, k_pde);
  terms.p = regulator(g, terms);
  terms.r = sub(terms.du_dt, terms.p);
  return terms;
}

/// Residual of the learned equation at one point of the hidden state space.
/// `h` must stem from hsm_forward on the same graph (so derivatives exist)
/// and `t` must be a differentiable scalar leaf.
inline PdeTerms pde_terms(Graph& g, const ModelConfig& cfg, const BoundParams& p, Var h, Var t) {
  PredictorFn predictor = [&](Graph& gg, Var hh, Var tt) {
    return rul_forward(gg, cfg.rul, p, hh, tt);
  };
  RegulatorFn regulator = [&](Graph& gg, const PdeTerms& terms) {
    return pgr_forward(gg, cfg.pgr, cfg.hsm.hidden_dim, p, terms.features);
  };
  return pde_terms_with(g, predictor, regulator, h, t, cfg.pgr.k_pde);
}

inline Var pde_residual(Graph& g, const ModelConfig& cfg, const BoundParams& p, Var h, Var t) {
  return pde_terms(g, cfg, p, h, t).r;
}

// ---- whole-model inference -----------------------------------------------

/// Window plus run-time to a scalar estimate, evaluation mode.
inline double predict(const ModelConfig& cfg, const ParameterSet& params, const Tensor& window,
                      double run_time) {
  Graph g;
  BoundParams bound(g, params, false);
  Var h = hsm_forward(g, cfg.hsm, bound, g.constant(window));
  Var t = g.constant(Shape{}, {run_time});
  return g.scalar_value(rul_forward(g, cfg.rul, bound, h, t));
}

}  // namespace metapinn
