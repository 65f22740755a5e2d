// SPDX-License-Identifier: Apache-2.0
#include "fesgssm/gssm/transition_model.hpp"

namespace fesgssm::gssm {

DiagGaussian TransitionModel::predict(const nn::Tensor& input) const {
  nn::Tape tape;
  return predict(tape, tape.constant(input)).value();
}

void TransitionModel::regression_update(const nn::Tensor&, const nn::Tensor&, nn::AdamState&, const nn::AdamHyper&,
                                        Rng&) {}

}  // namespace fesgssm::gssm
