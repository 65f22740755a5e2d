// SPDX-License-Identifier: Apache-2.0
#include "fesgssm/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace fesgssm::nn {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

double evaluate_loss(const LossBuilder& loss, const ParameterSet& params) {
  Tape tape;
  return loss(tape, params).value().item();
}

GradCheckResult finite_diff_check(const LossBuilder& loss, ParameterSet& params, double epsilon) {
  Tape tape;
  Var l = loss(tape, params);
  tape.backward(l);
  return finite_diff_check(loss, params, tape.gradients(params), epsilon);
}

GradCheckResult finite_diff_check(const LossBuilder& loss, ParameterSet& params, const Gradients& analytic,
                                  double epsilon) {
  GradCheckResult result;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params.trainable(i)) continue;
    Tensor& w = params.value(i);
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double saved = w[k];
      w[k] = saved + epsilon;
      const double up = evaluate_loss(loss, params);
      w[k] = saved - epsilon;
      const double down = evaluate_loss(loss, params);
      w[k] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic.present[i] ? analytic.values[i][k] : 0.0;
      const double err = relative_error(a, numeric);
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_parameter = params.entry(i).name;
        result.worst_index = k;
      }
    }
  }
  return result;
}

}  // namespace fesgssm::nn
