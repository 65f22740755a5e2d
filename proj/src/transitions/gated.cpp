// SPDX-License-Identifier: Apache-2.0
#include "fesgssm/transitions/gated.hpp"

#include "fesgssm/errors.hpp"

namespace fesgssm::transitions {

using nn::Activation;
using nn::Mlp;
using nn::Tensor;
using nn::Var;

GatedTransition::GatedTransition(const GatedConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.latent == 0) throw ConfigError("gated transition needs a latent width");
  const std::size_t in = cfg.latent + (cfg.use_action ? cfg.action : 0);
  const std::size_t L = cfg.latent;
  gate_ = Mlp::create(ps_, "gate", {{in, cfg.hidden, L}, {Activation::relu, Activation::sigmoid}}, rng);
  proposal_ = Mlp::create(ps_, "proposal", {{in, cfg.hidden, L}, {Activation::relu, Activation::identity}}, rng);
  linear_ = Mlp::create(ps_, "linear", {{in, L}, {Activation::identity}}, rng);
  variance_ = Mlp::create(ps_, "variance", {{in, cfg.hidden, L}, {Activation::relu, Activation::identity}}, rng);
  Tensor& w = ps_.value(linear_.weight_index(0));
  w = Tensor(in, L);
  for (std::size_t i = 0; i < L; ++i) w(i, i) = 1.0;
}

gssm::GaussianVar GatedTransition::predict(nn::Tape& tape, Var input) const {
  const std::size_t in = cfg_.latent + (cfg_.use_action ? cfg_.action : 0);
  if (input.cols() != in) {
    throw DimensionError("gated transition expects width " + std::to_string(in) + ", got " +
                         std::to_string(input.cols()));
  }
  Var g = gate_.forward(tape, ps_, input);
  Var lin = linear_.forward(tape, ps_, input);
  Var prop = proposal_.forward(tape, ps_, input);
  // (1 - g) * L + g * m = L + g * (m - L)
  Var mean = lin + g * (prop - lin);
  Var var = add_scalar(softplus(variance_.forward(tape, ps_, input)), gssm::kVarianceFloor);
  return {mean, var};
}

gssm::DiagGaussian gated_predict(const GatedTransition& gt, const Tensor& x_prev) { return gt.predict(x_prev); }

}  // namespace fesgssm::transitions
