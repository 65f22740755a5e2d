// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "fesgssm/nn/parameters.hpp"

namespace fesgssm::nn {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates aligned with one ParameterSet.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  static AdamState for_params(const ParameterSet& ps);
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam update of the trainable entries of `params`.
/// Entries without a present gradient, and frozen entries, are left alone.
/// Throws TrainingError naming the parameter if a gradient is not finite.
void adam_step(ParameterSet& params, const Gradients& grads, AdamState& state, const AdamHyper& hyper);

}  // namespace fesgssm::nn
