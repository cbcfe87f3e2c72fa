#pragma once

// Probe of the first-order outer update's Taylor structure on explicit
// task families. The inner optimizer here is plain SGD and all derivatives
// are analytic closed forms, so the measurement is independent of the
// autodiff engine and of Adam.

#include <cmath>
#include <span>
#include <vector>

#include "metapinn/errors.hpp"
#include "metapinn/rng.hpp"
#include "metapinn/tensor.hpp"

namespace metapinn {

/// L(theta) = 1/2 theta' A theta + b' theta + quartic * sum_i theta_i^4.
/// With quartic = 0 third derivatives vanish, which makes the two-term
/// displacement expansion exact for k = 2.
struct QuadraticTask {
  Tensor A;  // [d, d], symmetric
  Tensor b;  // [d]
  double quartic = 0.0;

  int dim() const { return A.shape[0]; }

  void validate() const {
    if (A.shape.size() != 2 || A.shape[0] != A.shape[1])
      throw ShapeError("task matrix must be square");
    if (b.shape.size() != 1 || b.shape[0] != A.shape[0])
      throw ShapeError("task vector length must match the matrix");
  }
};

inline std::vector<double> quad_gradient(const QuadraticTask& task,
                                         std::span<const double> theta) {
  const int d = task.dim();
  std::vector<double> g(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) {
    double acc = task.b.data[static_cast<std::size_t>(i)];
    for (int j = 0; j < d; ++j)
      acc += task.A.data[static_cast<std::size_t>(i) * d + j] * theta[static_cast<std::size_t>(j)];
    const double t = theta[static_cast<std::size_t>(i)];
    g[static_cast<std::size_t>(i)] = acc + 4.0 * task.quartic * t * t * t;
  }
  return g;
}

/// (A + diag(12 * quartic * phi^2)) v, the Hessian at phi applied to v.
inline std::vector<double> quad_hessian_times(const QuadraticTask& task,
                                              std::span<const double> phi,
                                              std::span<const double> v) {
  const int d = task.dim();
  std::vector<double> out(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) {
    double acc = 0.0;
    for (int j = 0; j < d; ++j)
      acc += task.A.data[static_cast<std::size_t>(i) * d + j] * v[static_cast<std::size_t>(j)];
    const double p = phi[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(i)] = acc + 12.0 * task.quartic * p * p * v[static_cast<std::size_t>(i)];
  }
  return out;
}

inline double quad_loss(const QuadraticTask& task, std::span<const double> theta) {
  const int d = task.dim();
  double acc = 0.0;
  for (int i = 0; i < d; ++i) {
    double row = 0.0;
    for (int j = 0; j < d; ++j)
      row += task.A.data[static_cast<std::size_t>(i) * d + j] * theta[static_cast<std::size_t>(j)];
    const double t = theta[static_cast<std::size_t>(i)];
    acc += 0.5 * t * row + task.b.data[static_cast<std::size_t>(i)] * t +
           task.quartic * t * t * t * t;
  }
  return acc;
}

/// theta after k plain SGD steps from phi, minus phi.
inline std::vector<double> sgd_displacement(const QuadraticTask& task,
                                            std::span<const double> phi, double alpha, int k) {
  std::vector<double> theta(phi.begin(), phi.end());
  for (int step = 0; step < k; ++step) {
    std::vector<double> g = quad_gradient(task, theta);
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= alpha * g[i];
  }
  std::vector<double> d(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) d[i] = theta[i] - phi[i];
  return d;
}

/// The two leading terms of the displacement in powers of alpha, with all
/// step gradients and Hessians taken at phi:
///   -alpha * sum_i gbar  +  alpha^2 * sum_i sum_{j<i} Hbar gbar.
inline std::vector<double> displacement_expansion(const QuadraticTask& task,
                                                  std::span<const double> phi, double alpha,
                                                  int k) {
  const std::vector<double> gbar = quad_gradient(task, phi);
  const std::vector<double> hg = quad_hessian_times(task, phi, gbar);
  std::vector<double> out(phi.size(), 0.0);
  for (int i = 1; i <= k; ++i) {
    for (std::size_t c = 0; c < out.size(); ++c) out[c] -= alpha * gbar[c];
    for (int j = 1; j < i; ++j) {
      (void)j;
      for (std::size_t c = 0; c < out.size(); ++c) out[c] += alpha * alpha * hg[c];
    }
  }
  return out;
}

struct TaylorProbe {
  std::vector<double> alphas;
  std::vector<double> residuals;  // mean over tasks of ||displacement - expansion||
  double slope = 0.0;             // fitted d log(residual) / d log(alpha)
};

/// Mean expansion-residual norm per step size, plus the fitted log-log
/// scaling exponent. Pure quadratics with k = 2 sit at machine epsilon;
/// adding a quartic term makes the residual scale as the cube of alpha.
inline TaylorProbe reptile_taylor_probe(std::span<const QuadraticTask> tasks,
                                        std::span<const double> phi, int k,
                                        std::span<const double> alphas) {
  if (tasks.empty()) throw Error("probe needs at least one task");
  if (k < 1) throw Error("probe needs k >= 1");
  for (const QuadraticTask& t : tasks) t.validate();

  TaylorProbe probe;
  probe.alphas.assign(alphas.begin(), alphas.end());
  for (double alpha : alphas) {
    double acc = 0.0;
    for (const QuadraticTask& task : tasks) {
      const std::vector<double> d = sgd_displacement(task, phi, alpha, k);
      const std::vector<double> pred = displacement_expansion(task, phi, alpha, k);
      double norm2 = 0.0;
      for (std::size_t i = 0; i < d.size(); ++i) {
        const double r = d[i] - pred[i];
        norm2 += r * r;
      }
      acc += std::sqrt(norm2);
    }
    probe.residuals.push_back(acc / static_cast<double>(tasks.size()));
  }

  // least-squares slope of log residual against log alpha
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  int m = 0;
  for (std::size_t i = 0; i < probe.alphas.size(); ++i) {
    if (probe.residuals[i] <= 0.0) continue;
    const double x = std::log(probe.alphas[i]);
    const double y = std::log(probe.residuals[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++m;
  }
  if (m >= 2) probe.slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  return probe;
}

/// Random well-conditioned task family for probing: A = M'M + 0.5 I.
inline std::vector<QuadraticTask> make_quadratic_tasks(int dim, int count, double quartic,
                                                       Rng& rng) {
  std::vector<QuadraticTask> tasks;
  tasks.reserve(static_cast<std::size_t>(count));
  for (int t = 0; t < count; ++t) {
    QuadraticTask task;
    Tensor m = Tensor::zeros({dim, dim});
    const double s = 1.0 / std::sqrt(static_cast<double>(dim));
    for (double& x : m.data) x = rng.uniform(-s, s);
    task.A = Tensor::zeros({dim, dim});
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j) {
        double acc = i == j ? 0.5 : 0.0;
        for (int r = 0; r < dim; ++r)
          acc += m.data[static_cast<std::size_t>(r) * dim + i] *
                 m.data[static_cast<std::size_t>(r) * dim + j];
        task.A.data[static_cast<std::size_t>(i) * dim + j] = acc;
      }
    task.b = Tensor::zeros({dim});
    for (double& x : task.b.data) x = rng.uniform(-1.0, 1.0);
    task.quartic = quartic;
    tasks.push_back(std::move(task));
  }
  return tasks;
}

}  // namespace metapinn
