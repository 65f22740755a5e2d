// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "fesgssm/nn/parameters.hpp"
#include "fesgssm/nn/tape.hpp"
#include "fesgssm/rng.hpp"

namespace fesgssm::nn {

/// Layer widths plus one activation per weight layer.
struct MlpSpec {
  std::vector<std::size_t> sizes;
  std::vector<Activation> activations;

  std::size_t input_width() const { return sizes.front(); }
  std::size_t output_width() const { return sizes.back(); }
};

/// Fully connected network whose weights live in an external ParameterSet
/// under `<prefix>.l<k>.w` / `<prefix>.l<k>.b`.
class Mlp {
 public:
  Mlp() = default;

  /// Registers freshly initialised parameters (uniform Glorot weights, zero
  /// biases) in `ps`.
  static Mlp create(ParameterSet& ps, const std::string& prefix, MlpSpec spec, Rng& rng, bool trainable = true);
  /// Binds to parameters already present in `ps` (e.g. a loaded checkpoint).
  static Mlp bind(const ParameterSet& ps, const std::string& prefix, MlpSpec spec);

  Var forward(Tape& tape, const ParameterSet& ps, Var input) const;
  /// Convenience inference without gradient bookkeeping.
  Tensor apply(const ParameterSet& ps, const Tensor& input) const;

  const MlpSpec& spec() const { return spec_; }
  const std::string& prefix() const { return prefix_; }
  std::size_t layer_count() const { return weights_.size(); }
  std::size_t weight_index(std::size_t layer) const { return weights_[layer]; }
  std::size_t bias_index(std::size_t layer) const { return biases_[layer]; }

 private:
  std::string prefix_;
  MlpSpec spec_;
  std::vector<std::size_t> weights_;
  std::vector<std::size_t> biases_;
};

/// Free-function form: forward pass for the network described by `spec`
/// stored in `params` under `prefix`.
Tensor mlp_forward(const ParameterSet& params, const Tensor& input, const MlpSpec& spec, const std::string& prefix = "mlp");

/// Gated recurrent unit:
///   z = sigmoid(x Wz + h Uz + bz)
///   r = sigmoid(x Wr + h Ur + br)
///   n = tanh(x Wn + bn + r * (h Un + bhn))
///   h' = (1 - z) * n + z * h
class Gru {
 public:
  /// Scaled-uniform init: every entry uniform in +-1/sqrt(hidden).
  static constexpr double init_scale_numerator = 1.0;

  static Gru create(ParameterSet& ps, const std::string& prefix, std::size_t input_width, std::size_t hidden_width,
                    Rng& rng, bool trainable = true);
  static Gru bind(const ParameterSet& ps, const std::string& prefix, std::size_t input_width, std::size_t hidden_width);

  Var step(Tape& tape, const ParameterSet& ps, Var h_prev, Var input) const;
  Tensor step(const ParameterSet& ps, const Tensor& h_prev, const Tensor& input) const;

  std::size_t input_width() const { return input_width_; }
  std::size_t hidden_width() const { return hidden_width_; }
  const std::string& prefix() const { return prefix_; }

 private:
  std::string prefix_;
  std::size_t input_width_ = 0;
  std::size_t hidden_width_ = 0;
  // Order: wz uz bz wr ur br wn un bn bhn
  std::vector<std::size_t> idx_;
};

Tensor gru_step(const ParameterSet& params, const Tensor& h_prev, const Tensor& input, const Gru& cell);

}  // namespace fesgssm::nn
