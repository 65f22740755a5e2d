// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "fesgssm/nn/parameters.hpp"
#include "fesgssm/nn/tape.hpp"

namespace fesgssm::nn {

/// Builds a scalar loss on the given tape from the parameters.
using LossBuilder = std::function<Var(Tape&, const ParameterSet&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
};

/// Relative-error measure used by the check: |a - n| / max(|a|, |n|, 1e-8).
double relative_error(double analytic, double numeric);

/// Compares the tape gradient of `loss` against central differences over
/// every trainable scalar of `params`.
GradCheckResult finite_diff_check(const LossBuilder& loss, ParameterSet& params, double epsilon = 1e-5);

/// Same, but against caller-supplied analytic gradients (used to plant
/// faults and to check hand-assembled gradients).
GradCheckResult finite_diff_check(const LossBuilder& loss, ParameterSet& params, const Gradients& analytic,
                                  double epsilon = 1e-5);

/// Evaluates the loss once without differentiation.
double evaluate_loss(const LossBuilder& loss, const ParameterSet& params);

}  // namespace fesgssm::nn
