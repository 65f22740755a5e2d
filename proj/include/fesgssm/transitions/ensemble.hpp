// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "fesgssm/gssm/transition_model.hpp"
#include "fesgssm/nn/layers.hpp"

namespace fesgssm::transitions {

struct EnsembleConfig {
  std::size_t latent = 8;
  std::size_t action = 0;
  bool use_action = false;
  std::size_t members = 10;
  std::size_t hidden = 64;
  double prior_scale = 1.0;
  double bootstrap_keep = 0.8;
  /// Per-dimension variance floor shared by all members, learned through
  /// the KL term. Off: the fixed global floor.
  bool learned_floor = true;
  double floor_init = 1e-2;
};

/// One randomised-prior member: trainable net plus a frozen prior net of the
/// same shape. Output = trainable(x) + beta * prior(x).
struct EnsembleMember {
  nn::Mlp trainable;
  nn::Mlp prior;
};

/// Ensemble of randomised-prior networks with moment-matched Gaussian
/// prediction: mean and unbiased variance across member outputs, the
/// variance clamped from below by the shared floor.
class EnsembleTransition final : public gssm::TransitionModel {
 public:
  /// Throws ConfigError when fewer than two members are requested.
  EnsembleTransition(const EnsembleConfig& cfg, Rng& rng);

  std::string kind() const override { return "ensemble"; }
  std::size_t latent_width() const override { return cfg_.latent; }
  bool uses_action() const override { return cfg_.use_action; }
  gssm::GaussianVar predict(nn::Tape& tape, nn::Var input) const override;
  using TransitionModel::predict;

  nn::ParameterSet& params() override { return ps_; }
  const nn::ParameterSet& params() const override { return ps_; }
  std::unique_ptr<TransitionModel> clone() const override { return std::make_unique<EnsembleTransition>(*this); }

  /// Bootstrap-masked squared-error step on the trainable nets.
  void regression_update(const nn::Tensor& inputs, const nn::Tensor& targets, nn::AdamState& state,
                         const nn::AdamHyper& hyper, Rng& rng) override;

  const EnsembleConfig& config() const { return cfg_; }
  std::size_t size() const { return members_.size(); }
  const EnsembleMember& member(std::size_t k) const { return members_[k]; }
  void set_prior_scale(double beta) { cfg_.prior_scale = beta; }

  nn::Var member_forward(nn::Tape& tape, std::size_t k, nn::Var x) const;
  nn::Tensor member_forward(std::size_t k, const nn::Tensor& x) const;

  /// Current floor per latent dimension (1 x latent).
  nn::Tensor floor() const;

  /// Copy of only the frozen prior entries (for freeze checks).
  nn::ParameterSet prior_snapshot() const;

 private:
  EnsembleConfig cfg_;
  nn::ParameterSet ps_;
  std::vector<EnsembleMember> members_;
};

gssm::DiagGaussian ensemble_predict(const EnsembleTransition& ens, const nn::Tensor& x_prev);

struct EnsembleTrainHyper {
  std::size_t epochs = 200;
  nn::AdamHyper adam{.lr = 1e-2};
};

/// Draws a Bernoulli(keep) mask per (sample, member), redrawing any member
/// column that came out empty. Result is samples x members.
nn::Tensor bootstrap_mask(std::size_t samples, std::size_t members, double keep, Rng& rng);

/// Squared-error regression of each member's trainable net on its bootstrap
/// subset of (x_prev -> x_next) pairs; priors stay untouched.
void train_ensemble(EnsembleTransition& ens, const nn::Tensor& x_prev, const nn::Tensor& x_next,
                    const EnsembleTrainHyper& hyper, Rng& rng);

}  // namespace fesgssm::transitions
