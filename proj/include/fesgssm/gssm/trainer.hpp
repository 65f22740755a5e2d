// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <vector>

#include "fesgssm/gssm/filter.hpp"
#include "fesgssm/gssm/transition_model.hpp"
#include "fesgssm/nn/adam.hpp"

namespace fesgssm::gssm {

/// Filter, decoder, and transition trained together.
struct GssmModel {
  FilterParams filter;
  DecoderParams decoder;
  std::unique_ptr<TransitionModel> transition;

  GssmModel() = default;
  GssmModel(FilterParams f, DecoderParams d, std::unique_ptr<TransitionModel> t)
      : filter(std::move(f)), decoder(std::move(d)), transition(std::move(t)) {}
  GssmModel(const GssmModel& o);
  GssmModel& operator=(const GssmModel& o);
  GssmModel(GssmModel&&) = default;
  GssmModel& operator=(GssmModel&&) = default;
};

struct GssmHyper {
  double lr = 1e-3;
  /// Learning rate for the transition's KL-path step; 0 means `lr`.
  double transition_lr = 0.0;
  double kl_weight = 1.0;
  /// Fraction of `total_steps` over which the KL weight ramps up linearly.
  double warmup_fraction = 0.2;
  std::size_t total_steps = 1000;
  double clip_norm = 10.0;
  /// When false the KL gradient only shapes the filter; the transition then
  /// learns from the regression step alone.
  bool transition_kl_grad = true;
  /// Extra bootstrap regression of the transition on sampled latent pairs.
  bool transition_regression = true;
  double regression_lr = 1e-3;
};

/// Optimiser state and step counter for one GSSM.
struct GssmTrainerState {
  nn::AdamState filter;
  nn::AdamState decoder;
  nn::AdamState transition;
  nn::AdamState regression;
  std::uint64_t step = 0;

  static GssmTrainerState for_model(const GssmModel& m);
  friend bool operator==(const GssmTrainerState&, const GssmTrainerState&) = default;
};

/// Loss breakdown of one update, averaged over the batch.
struct GssmLossRecord {
  double total = 0.0;
  double nll = 0.0;
  double kl = 0.0;
  double kl_weight = 0.0;
  double grad_norm = 0.0;
};

/// KL weight after `step` updates under linear warm-up.
double kl_weight_at(const GssmHyper& hyper, std::uint64_t step);

/// Builds the batch loss on a tape: per sequence, NLL summed over steps plus
/// lambda * KL summed over steps 2..T, then averaged over sequences.
/// Sequences of equal length are unrolled together as one row batch. With
/// lambda == 0 the transition is never touched. The sampled latent pairs are
/// appended to `latent_pairs` (detached) when given.
struct GssmLossVars {
  nn::Var total;
  double nll = 0.0;
  double kl = 0.0;
};
GssmLossVars gssm_loss(nn::Tape& tape, const GssmModel& model, std::span<const ObservedSequence> batch, double lambda,
                       Rng& rng, std::vector<std::pair<nn::Tensor, nn::Tensor>>* latent_pairs = nullptr);

/// One optimiser step of train_gssm on `batch`: BPTT through the unrolled
/// filter, global-norm clipping, Adam on every trainable parameter, then the
/// optional transition regression step. Throws TrainingError on a non-finite
/// loss with the step, lambda, and gradient norms in the message.
GssmLossRecord train_gssm_step(GssmModel& model, GssmTrainerState& state, std::span<const ObservedSequence> batch,
                               const GssmHyper& hyper, Rng& rng);

/// Runs `steps` updates, each on `batch_size` sequences drawn uniformly with
/// replacement from `data`; returns the loss history.
std::vector<GssmLossRecord> train_gssm(GssmModel& model, GssmTrainerState& state,
                                       std::span<const ObservedSequence> data, std::size_t steps,
                                       std::size_t batch_size, const GssmHyper& hyper, Rng& rng);

}  // namespace fesgssm::gssm
