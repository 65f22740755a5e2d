// SPDX-License-Identifier: Apache-2.0
#include "fesgssm/transitions/ensemble.hpp"

#include "fesgssm/errors.hpp"

namespace fesgssm::transitions {

using nn::Activation;
using nn::Mlp;
using nn::Tape;
using nn::Tensor;
using nn::Var;

EnsembleTransition::EnsembleTransition(const EnsembleConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.members < 2) throw ConfigError("ensemble needs at least 2 members, got " + std::to_string(cfg.members));
  if (cfg.latent == 0) throw ConfigError("ensemble transition needs a latent width");
  const std::size_t in = cfg.latent + (cfg.use_action ? cfg.action : 0);
  const nn::MlpSpec spec{{in, cfg.hidden, cfg.latent}, {Activation::tanh, Activation::identity}};
  for (std::size_t k = 0; k < cfg.members; ++k) {
    const std::string base = "member" + std::to_string(k);
    EnsembleMember m;
    m.trainable = Mlp::create(ps_, base + ".trainable", spec, rng, true);
    m.prior = Mlp::create(ps_, base + ".prior", spec, rng, false);
    // Priors get random biases too so members disagree even at the origin.
    for (std::size_t l = 0; l < m.prior.layer_count(); ++l) {
      for (double& b : ps_.value(m.prior.bias_index(l)).values()) b = rng.uniform(-0.5, 0.5);
    }
    members_.push_back(std::move(m));
  }
  if (cfg.learned_floor) {
    if (!(cfg.floor_init >= gssm::kVarianceFloor)) throw ConfigError("ensemble floor_init below the variance floor");
    ps_.add("noise.log_floor", Tensor(1, cfg.latent, std::log(cfg.floor_init)));
  }
}

Tensor EnsembleTransition::floor() const {
  Tensor f(1, cfg_.latent, gssm::kVarianceFloor);
  if (cfg_.learned_floor) {
    const Tensor& lf = ps_.at("noise.log_floor");
    for (std::size_t j = 0; j < cfg_.latent; ++j) f[j] = std::max(std::exp(lf[j]), gssm::kVarianceFloor);
  }
  return f;
}

Var EnsembleTransition::member_forward(Tape& tape, std::size_t k, Var x) const {
  const EnsembleMember& m = members_.at(k);
  Var out = m.trainable.forward(tape, ps_, x);
  if (cfg_.prior_scale != 0.0) out = out + scale(m.prior.forward(tape, ps_, x), cfg_.prior_scale);
  return out;
}

Tensor EnsembleTransition::member_forward(std::size_t k, const Tensor& x) const {
  Tape tape;
  return member_forward(tape, k, tape.constant(x)).value();
}

gssm::GaussianVar EnsembleTransition::predict(Tape& tape, Var input) const {
  const std::size_t in = cfg_.latent + (cfg_.use_action ? cfg_.action : 0);
  if (input.cols() != in) {
    throw DimensionError("ensemble transition expects width " + std::to_string(in) + ", got " +
                         std::to_string(input.cols()));
  }
  const std::size_t K = members_.size();
  std::vector<Var> outs;
  outs.reserve(K);
  for (std::size_t k = 0; k < K; ++k) outs.push_back(member_forward(tape, k, input));
  Var total = outs[0];
  for (std::size_t k = 1; k < K; ++k) total = total + outs[k];
  Var mean = scale(total, 1.0 / static_cast<double>(K));
  Var ss = square(outs[0] - mean);
  for (std::size_t k = 1; k < K; ++k) ss = ss + square(outs[k] - mean);
  Var var = clamp_min(scale(ss, 1.0 / static_cast<double>(K - 1)), gssm::kVarianceFloor);
  if (cfg_.learned_floor) {
    Var floor = add(tape.constant(Tensor(input.rows(), cfg_.latent)), exp(tape.param(ps_, "noise.log_floor")));
    var = clamp_min(maximum(var, floor), gssm::kVarianceFloor);
  }
  return {mean, var};
}

nn::ParameterSet EnsembleTransition::prior_snapshot() const {
  nn::ParameterSet out;
  for (const auto& e : ps_.entries()) {
    if (!e.trainable) out.add(e.name, e.value, false);
  }
  return out;
}

gssm::DiagGaussian ensemble_predict(const EnsembleTransition& ens, const Tensor& x_prev) { return ens.predict(x_prev); }

Tensor bootstrap_mask(std::size_t samples, std::size_t members, double keep, Rng& rng) {
  Tensor mask(samples, members);
  for (std::size_t k = 0; k < members; ++k) {
    bool any = false;
    while (!any) {
      for (std::size_t i = 0; i < samples; ++i) {
        mask(i, k) = rng.bernoulli(keep) ? 1.0 : 0.0;
        any = any || mask(i, k) > 0.0;
      }
      if (samples == 0) break;
    }
  }
  return mask;
}

namespace {

// Masked mean squared error summed over members.
Var masked_regression_loss(Tape& tape, const EnsembleTransition& ens, const Tensor& x, const Tensor& y,
                           const Tensor& mask) {
  Var xin = tape.constant(x);
  Var target = tape.constant(y);
  Var total;
  for (std::size_t k = 0; k < ens.size(); ++k) {
    Tensor col(x.rows(), 1);
    double count = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      col[i] = mask(i, k);
      count += col[i];
    }
    Var err = row_sum(square(ens.member_forward(tape, k, xin) - target));
    Var lk = scale(sum(mul_const(err, col)), 1.0 / std::max(count, 1.0));
    total = total.valid() ? total + lk : lk;
  }
  return total;
}

void check_pairs(const EnsembleTransition& ens, const Tensor& x, const Tensor& y) {
  if (x.rows() == 0) throw ContractError("train_ensemble: empty dataset");
  if (x.rows() != y.rows() || y.cols() != ens.latent_width()) throw DimensionError("train_ensemble: pair shapes");
}

}  // namespace

void EnsembleTransition::regression_update(const Tensor& inputs, const Tensor& targets, nn::AdamState& state,
                                           const nn::AdamHyper& hyper, Rng& rng) {
  check_pairs(*this, inputs, targets);
  const Tensor mask = bootstrap_mask(inputs.rows(), members_.size(), cfg_.bootstrap_keep, rng);
  Tape tape;
  Var loss = masked_regression_loss(tape, *this, inputs, targets, mask);
  tape.backward(loss);
  nn::adam_step(ps_, tape.gradients(ps_), state, hyper);
}

void train_ensemble(EnsembleTransition& ens, const Tensor& x_prev, const Tensor& x_next,
                    const EnsembleTrainHyper& hyper, Rng& rng) {
  check_pairs(ens, x_prev, x_next);
  const Tensor mask = bootstrap_mask(x_prev.rows(), ens.size(), ens.config().bootstrap_keep, rng);
  nn::AdamState state = nn::AdamState::for_params(ens.params());
  for (std::size_t e = 0; e < hyper.epochs; ++e) {
    Tape tape;
    Var loss = masked_regression_loss(tape, ens, x_prev, x_next, mask);
    if (!std::isfinite(loss.value().item())) throw TrainingError("train_ensemble: non-finite loss");
    tape.backward(loss);
    nn::adam_step(ens.params(), tape.gradients(ens.params()), state, hyper.adam);
  }
}

}  // namespace fesgssm::transitions
