#pragma once

#include <span>
#include <vector>

#include "metapinn/errors.hpp"
#include "metapinn/graph.hpp"
#include "metapinn/networks.hpp"
#include "metapinn/parameters.hpp"
#include "metapinn/rng.hpp"
#include "metapinn/sample.hpp"

namespace metapinn {

/// Relative weights of the data-fit and equation-residual terms.
struct LossWeights {
  double data = 1.0;
  double physics = 1.0;

  void validate() const {
    if (!(data >= 0.0) || !(physics >= 0.0))
      throw ConfigError("loss weights must be finite and nonnegative");
  }
};

struct BatchLoss {
  double total = 0.0;
  double data = 0.0;
  double physics = 0.0;
};

namespace detail {

/// Shared per-sample builder. One forward pass serves both terms; the
/// equation residual is evaluated at the sample's own (h, t) point.
struct SampleGraph {
  Var objective;  // w_d * (u - label)^2 + w_p * r^2
  double sq_err = 0.0;
  double sq_res = 0.0;
};

inline SampleGraph build_sample(Graph& g, const ModelConfig& cfg, const BoundParams& bound,
                                const SampleWindow& s, const LossWeights& w, bool training,
                                Rng* rng) {
  SampleGraph out;
  Var X = g.constant(s.features);
  Var h = hsm_forward(g, cfg.hsm, bound, X, training, rng);
  Var t = g.leaf(Tensor(Shape{}, {s.run_time}), true);

  Var err{nullptr, -1};
  Var res{nullptr, -1};
  if (w.physics > 0.0) {
    PdeTerms terms = pde_terms(g, cfg, bound, h, t);
    err = sub(terms.u, g.scalar_const(s.rul));
    res = terms.r;
    out.sq_res = g.scalar_value(res) * g.scalar_value(res);
  } else {
    Var u = rul_forward(g, cfg.rul, bound, h, t);
    err = sub(u, g.scalar_const(s.rul));
  }
  out.sq_err = g.scalar_value(err) * g.scalar_value(err);

  Var obj = scale(mul(err, err), w.data);
  if (w.physics > 0.0) obj = add(obj, scale(mul(res, res), w.physics));
  out.objective = obj;
  return out;
}

}  // namespace detail

/// Mean squared prediction error over the batch.
inline double data_loss(const ModelConfig& cfg, const ParameterSet& params,
                        std::span<const SampleWindow> batch) {
  if (batch.empty()) throw Error("data_loss on an empty batch");
  double acc = 0.0;
  Graph g;
  for (const SampleWindow& s : batch) {
    g.clear();
    BoundParams bound(g, params, false);
    Var h = hsm_forward(g, cfg.hsm, bound, g.constant(s.features));
    Var t = g.leaf(Tensor(Shape{}, {s.run_time}), true);
    const double u = g.scalar_value(rul_forward(g, cfg.rul, bound, h, t));
    acc += (u - s.rul) * (u - s.rul);
  }
  return acc / static_cast<double>(batch.size());
}

/// Mean squared residual of the learned equation over the batch's own
/// (h, t) collocation points.
inline double physics_loss(const ModelConfig& cfg, const ParameterSet& params,
                           std::span<const SampleWindow> batch) {
  if (batch.empty()) throw Error("physics_loss on an empty batch");
  double acc = 0.0;
  Graph g;
  for (const SampleWindow& s : batch) {
    g.clear();
    BoundParams bound(g, params, true);
    Var h = hsm_forward(g, cfg.hsm, bound, g.constant(s.features));
    Var t = g.leaf(Tensor(Shape{}, {s.run_time}), true);
    const double r = g.scalar_value(pde_residual(g, cfg, bound, h, t));
    acc += r * r;
  }
  return acc / static_cast<double>(batch.size());
}

/// w_d * data_loss + w_p * physics_loss, with one shared forward pass per
/// sample.
inline BatchLoss total_loss(const ModelConfig& cfg, const ParameterSet& params,
                            std::span<const SampleWindow> batch, const LossWeights& w) {
  if (batch.empty()) throw Error("total_loss on an empty batch");
  w.validate();
  BatchLoss out;
  Graph g;
  for (const SampleWindow& s : batch) {
    g.clear();
    BoundParams bound(g, params, true);
    detail::SampleGraph sg = detail::build_sample(g, cfg, bound, s, w, false, nullptr);
    out.data += sg.sq_err;
    out.physics += sg.sq_res;
  }
  const double n = static_cast<double>(batch.size());
  out.data /= n;
  out.physics /= n;
  out.total = w.data * out.data + w.physics * out.physics;
  return out;
}

/// Batch loss and its gradient with respect to every parameter. Samples are
/// processed one at a time on the reusable `arena` graph, so memory stays
/// bounded by one sample's computation. Set `training` for dropout (needs
/// `rng`).
inline BatchLoss total_loss_grad(const ModelConfig& cfg, const ParameterSet& params,
                                 const std::vector<SampleWindow>& pool,
                                 std::span<const int> batch_idx, const LossWeights& w,
                                 ParameterSet& grad_out, Graph& arena, bool training = false,
                                 Rng* rng = nullptr) {
  if (batch_idx.empty()) throw Error("gradient on an empty batch");
  w.validate();
  require_same_structure(params, grad_out);
  for (std::size_t i = 0; i < grad_out.count(); ++i)
    for (double& x : grad_out.tensor(i).data) x = 0.0;

  BatchLoss out;
  const double inv_n = 1.0 / static_cast<double>(batch_idx.size());

  arena.clear();
  BoundParams bound(arena, params, true);
  const std::size_t mark = arena.size();
  for (int idx : batch_idx) {
    arena.rewind(mark);
    const SampleWindow& s = pool[static_cast<std::size_t>(idx)];
    detail::SampleGraph sg = detail::build_sample(arena, cfg, bound, s, w, training, rng);
    out.data += sg.sq_err;
    out.physics += sg.sq_res;
    std::vector<Var> grads = arena.grad(sg.objective, bound.list());
    for (std::size_t i = 0; i < grads.size(); ++i) {
      const auto& gv = arena.values(grads[i]);
      auto& acc = grad_out.tensor(i).data;
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += inv_n * gv[j];
    }
  }
  out.data *= inv_n;
  out.physics *= inv_n;
  out.total = w.data * out.data + w.physics * out.physics;
  return out;
}

}  // namespace metapinn
