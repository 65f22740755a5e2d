// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "fesgssm/gssm/gaussian.hpp"
#include "fesgssm/nn/layers.hpp"

namespace fesgssm::gssm {

/// Widths of the filter/decoder networks.
struct GssmDims {
  std::size_t obs = 4;
  std::size_t action = 4;
  std::size_t latent = 8;
  std::size_t hidden = 64;     // GRU state
  std::size_t ws_hidden = 32;  // W_s hidden layer
  std::size_t wx_hidden = 64;  // W_x hidden layer
  std::size_t wg_hidden = 64;  // W_g hidden layer

  friend bool operator==(const GssmDims&, const GssmDims&) = default;
};

/// Recurrent filter: GRU over observations, W_s over [x_prev; a_prev], and
/// the W_x probabilistic head over the combined state.
struct FilterParams {
  GssmDims dims;
  nn::ParameterSet ps;
  nn::Gru gru;
  nn::Mlp w_s;
  nn::Mlp wx_trunk;
  nn::Mlp wx_mean;
  nn::Mlp wx_var;

  static FilterParams create(const GssmDims& dims, Rng& rng);
  /// Rebinds layer handles to a parameter set with the canonical layout.
  static FilterParams bind(const GssmDims& dims, nn::ParameterSet ps);
};

/// Observation model W_g: latent -> DiagGaussian over observations.
struct DecoderParams {
  GssmDims dims;
  nn::ParameterSet ps;
  nn::Mlp trunk;
  nn::Mlp mean;
  nn::Mlp var;

  static DecoderParams create(const GssmDims& dims, Rng& rng);
  static DecoderParams bind(const GssmDims& dims, nn::ParameterSet ps);
};

/// Initial recurrent state: zero hidden state, zero latent, zero action.
struct FilterState {
  nn::Tensor h;
  nn::Tensor x;
  nn::Tensor a;
};

FilterState filter_init(const GssmDims& dims, std::size_t batch = 1);

/// One filter step recorded on a tape.
struct FilterStepVars {
  nn::Var h;    // GRU hidden state h_t
  nn::Var h_c;  // 1/2 tanh(h_x + h_t)
  GaussianVar q;
  nn::Var x;    // reparameterised sample
};

/// h_x = W_s([x_prev; a_prev]); h_t = GRU(h_prev, o_t);
/// h_c = 1/2 tanh(h_x + h_t); q_t = W_x(h_c); x_t = mean + sqrt(var) * noise.
FilterStepVars filter_step(nn::Tape& tape, const FilterParams& fp, nn::Var h_prev, nn::Var x_prev, nn::Var a_prev,
                           nn::Var o_t, const nn::Tensor& noise);

/// Plain-value result of one filter step.
struct FilterStep {
  nn::Tensor h;
  nn::Tensor h_c;
  DiagGaussian q;
  nn::Tensor x;
  nn::Tensor noise;
};

/// Inference step; draws the reparameterisation noise from `rng`.
/// Throws InputError on non-finite observations.
FilterStep filter_step(const FilterParams& fp, const nn::Tensor& h_prev, const nn::Tensor& x_prev,
                       const nn::Tensor& a_prev, const nn::Tensor& o_t, Rng& rng);

GaussianVar decode(nn::Tape& tape, const DecoderParams& dp, nn::Var x);
DiagGaussian decode(const DecoderParams& dp, const nn::Tensor& x);

/// An observed sequence: row t of `obs` is o_t, row t of `actions` is the
/// action a_t taken after observing o_t. `actions` has T or T-1 rows (the
/// action after the final observation is never used by the filter).
struct ObservedSequence {
  nn::Tensor obs;
  nn::Tensor actions;

  std::size_t length() const { return obs.rows(); }
};

/// Per-step filter record for one sequence.
struct LatentStep {
  nn::Tensor obs;
  nn::Tensor action_prev;
  DiagGaussian q;
  nn::Tensor x;
  nn::Tensor h;
  nn::Tensor noise;
};

struct LatentTrajectory {
  std::vector<LatentStep> steps;
  std::vector<DiagGaussian> reconstructions;

  std::size_t length() const { return steps.size(); }
  /// Filter means stacked as a T x latent tensor.
  nn::Tensor means() const;
};

/// Runs filter_init then one filter step per observation, feeding the
/// previous action (a_init = 0 for the first step), and decodes each sample.
LatentTrajectory filter_trajectory(const FilterParams& fp, const DecoderParams& dp, const ObservedSequence& seq,
                                   Rng& rng);

/// Filter means for several equally long sequences processed as one row
/// batch; `rngs[b]` supplies the noise of sequence b. Result[b] is T x latent.
std::vector<nn::Tensor> filter_means_batch(const FilterParams& fp, std::span<const ObservedSequence* const> seqs,
                                           std::span<Rng> rngs);

/// Previous-action row for step t of a sequence (zeros at t = 0).
nn::Tensor previous_action(const ObservedSequence& seq, std::size_t t, std::size_t action_width);

}  // namespace fesgssm::gssm
