// SPDX-License-Identifier: Apache-2.0
#include "fesgssm/nn/adam.hpp"

#include <cmath>

#include "fesgssm/errors.hpp"

namespace fesgssm::nn {

AdamState AdamState::for_params(const ParameterSet& ps) {
  AdamState s;
  for (const auto& e : ps.entries()) {
    s.m.emplace_back(e.value.rows(), e.value.cols());
    s.v.emplace_back(e.value.rows(), e.value.cols());
  }
  return s;
}

void adam_step(ParameterSet& params, const Gradients& grads, AdamState& state, const AdamHyper& hyper) {
  if (grads.values.size() != params.size() || state.m.size() != params.size()) {
    throw DimensionError("adam_step: gradients/state not aligned with parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads.present[i] || !params.trainable(i)) continue;
    if (!grads.values[i].all_finite()) {
      throw TrainingError("non-finite gradient for parameter '" + params.entry(i).name + "'");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads.present[i] || !params.trainable(i)) continue;
    auto& w = params.value(i).values();
    const auto& g = grads.values[i].values();
    auto& m = state.m[i].values();
    auto& v = state.v[i].values();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * g[k];
      v[k] = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * g[k] * g[k];
      w[k] -= hyper.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + hyper.eps);
    }
  }
}

}  // namespace fesgssm::nn
