#pragma once

// Finite-difference oracles used to verify analytic gradients. Each check
// rebuilds the function on a fresh graph per probe, so the oracle shares no
// machinery with the reverse pass it is checking.

#include <cmath>
#include <functional>
#include <vector>

#include "metapinn/graph.hpp"
#include "metapinn/tensor.hpp"

namespace metapinn::testing {

/// A scalar function of several tensors, evaluated through a fresh graph.
using ScalarFn = std::function<double(const std::vector<Tensor>&)>;

/// Central-difference gradient of `f` at `at`, one tensor per input.
inline std::vector<Tensor> fd_gradients(const ScalarFn& f, const std::vector<Tensor>& at,
                                        double h = 1e-6) {
  std::vector<Tensor> grads;
  grads.reserve(at.size());
  for (std::size_t k = 0; k < at.size(); ++k) {
    Tensor g = Tensor::zeros(at[k].shape);
    for (std::size_t i = 0; i < at[k].data.size(); ++i) {
      std::vector<Tensor> probe = at;
      probe[k].data[i] = at[k].data[i] + h;
      const double fp = f(probe);
      probe[k].data[i] = at[k].data[i] - h;
      const double fm = f(probe);
      g.data[i] = (fp - fm) / (2.0 * h);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

/// Largest elementwise relative error between two same-shaped tensors,
/// with denominators floored at 1 so near-zero entries compare absolutely.
inline double max_rel_err(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double denom = std::max({1.0, std::fabs(a.data[i]), std::fabs(b.data[i])});
    worst = std::max(worst, std::fabs(a.data[i] - b.data[i]) / denom);
  }
  return worst;
}

/// Runs `build` (which assembles a scalar Var from graph leaves) both through
/// the reverse pass and the finite-difference oracle; returns the worst
/// relative error over all inputs.
using BuildFn = std::function<Var(Graph&, const std::vector<Var>&)>;

inline double check_gradients(const BuildFn& build, const std::vector<Tensor>& at,
                              double h = 1e-6) {
  Graph g;
  std::vector<Var> leaves;
  leaves.reserve(at.size());
  for (const Tensor& t : at) leaves.push_back(g.leaf(t, true));
  Var out = build(g, leaves);
  std::vector<Var> analytic = g.grad(out, leaves);

  ScalarFn f = [&](const std::vector<Tensor>& probe) {
    Graph pg;
    std::vector<Var> pl;
    pl.reserve(probe.size());
    for (const Tensor& t : probe) pl.push_back(pg.leaf(t, true));
    return pg.scalar_value(build(pg, pl));
  };
  const std::vector<Tensor> numeric = fd_gradients(f, at, h);

  double worst = 0.0;
  for (std::size_t k = 0; k < at.size(); ++k)
    worst = std::max(worst, max_rel_err(g.materialize(analytic[k]), numeric[k]));
  return worst;
}

/// Deterministic test tensor with entries spread over [-1, 1].
inline Tensor ramp(Shape shape, double lo = -1.0, double hi = 1.0, double phase = 0.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  const std::size_t n = t.data.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double u = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.5;
    t.data[i] = lo + (hi - lo) * u + 0.05 * std::sin(7.3 * static_cast<double>(i) + phase);
  }
  return t;
}

}  // namespace metapinn::testing
