// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>

#include "fesgssm/gssm/gaussian.hpp"
#include "fesgssm/nn/adam.hpp"
#include "fesgssm/nn/parameters.hpp"
#include "fesgssm/rng.hpp"

namespace fesgssm::gssm {

/// Latent transition f_Tran: previous latent (optionally with the previous
/// action appended) to a DiagGaussian over the next latent. The gated and
/// ensemble variants are interchangeable behind this interface.
class TransitionModel {
 public:
  virtual ~TransitionModel() = default;

  virtual std::string kind() const = 0;
  virtual std::size_t latent_width() const = 0;
  virtual bool uses_action() const = 0;
  std::size_t input_width(std::size_t action_width) const {
    return latent_width() + (uses_action() ? action_width : 0);
  }

  virtual GaussianVar predict(nn::Tape& tape, nn::Var input) const = 0;
  DiagGaussian predict(const nn::Tensor& input) const;

  virtual nn::ParameterSet& params() = 0;
  virtual const nn::ParameterSet& params() const = 0;

  /// Optional supervised step on (input -> next latent) pairs, run once per
  /// GSSM update. Default: nothing.
  virtual void regression_update(const nn::Tensor& inputs, const nn::Tensor& targets, nn::AdamState& state,
                                 const nn::AdamHyper& hyper, Rng& rng);

  virtual std::unique_ptr<TransitionModel> clone() const = 0;
};

}  // namespace fesgssm::gssm
