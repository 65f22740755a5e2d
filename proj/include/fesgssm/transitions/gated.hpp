// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fesgssm/gssm/transition_model.hpp"
#include "fesgssm/nn/layers.hpp"

namespace fesgssm::transitions {

struct GatedConfig {
  std::size_t latent = 8;
  std::size_t action = 0;  // appended to the input only when use_action
  bool use_action = false;
  std::size_t hidden = 64;
};

/// Gated transition of the original GSSM:
///   mean = (1 - g(x)) * L(x) + g(x) * m(x)
///   var  = softplus(v(x)) + floor
/// with relu MLP gate g (sigmoid output), relu MLP proposal m, linear skip L
/// (initialised to the identity on the latent part), and relu MLP variance
/// head v.
class GatedTransition final : public gssm::TransitionModel {
 public:
  GatedTransition(const GatedConfig& cfg, Rng& rng);

  std::string kind() const override { return "gated"; }
  std::size_t latent_width() const override { return cfg_.latent; }
  bool uses_action() const override { return cfg_.use_action; }
  gssm::GaussianVar predict(nn::Tape& tape, nn::Var input) const override;
  using TransitionModel::predict;

  nn::ParameterSet& params() override { return ps_; }
  const nn::ParameterSet& params() const override { return ps_; }
  std::unique_ptr<TransitionModel> clone() const override { return std::make_unique<GatedTransition>(*this); }

  const GatedConfig& config() const { return cfg_; }

 private:
  GatedConfig cfg_;
  nn::ParameterSet ps_;
  nn::Mlp gate_;
  nn::Mlp proposal_;
  nn::Mlp linear_;
  nn::Mlp variance_;
};

gssm::DiagGaussian gated_predict(const GatedTransition& gt, const nn::Tensor& x_prev);

}  // namespace fesgssm::transitions
