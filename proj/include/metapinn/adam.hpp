#pragma once

#include <cmath>
#include <vector>

#include "metapinn/errors.hpp"
#include "metapinn/parameters.hpp"

namespace metapinn {

/// Adam optimizer state, aligned with a ParameterSet's tensor order.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double alpha = 0.001;
  long step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  explicit AdamState(const ParameterSet& params, double alpha_ = 0.001) : alpha(alpha_) {
    m.reserve(params.count());
    v.reserve(params.count());
    for (std::size_t i = 0; i < params.count(); ++i) {
      m.emplace_back(params.tensor(i).data.size(), 0.0);
      v.emplace_back(params.tensor(i).data.size(), 0.0);
    }
  }
};

/// One Adam update. Moments use bias correction and the step divides by
/// sqrt(v_hat + eps), with eps inside the root.
inline void adam_step(AdamState& st, ParameterSet& params, const ParameterSet& grads) {
  require_same_structure(params, grads);
  if (st.m.size() != params.count()) throw ShapeError("optimizer state size mismatch");
  ++st.step;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.count(); ++i) {
    auto& theta = params.tensor(i).data;
    const auto& g = grads.tensor(i).data;
    auto& mi = st.m[i];
    auto& vi = st.v[i];
    if (mi.size() != theta.size()) throw ShapeError("optimizer state size mismatch");
    for (std::size_t j = 0; j < theta.size(); ++j) {
      mi[j] = st.beta1 * mi[j] + (1.0 - st.beta1) * g[j];
      vi[j] = st.beta2 * vi[j] + (1.0 - st.beta2) * g[j] * g[j];
      const double m_hat = mi[j] / bc1;
      const double v_hat = vi[j] / bc2;
      theta[j] -= st.alpha * m_hat / std::sqrt(v_hat + st.eps);
    }
  }
}

}  // namespace metapinn
