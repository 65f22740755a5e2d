// SPDX-License-Identifier: Apache-2.0
#include "fesgssm/nn/layers.hpp"

#include <cmath>

#include "fesgssm/errors.hpp"

namespace fesgssm::nn {

namespace {

Tensor uniform_tensor(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  Tensor t(rows, cols);
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

void validate(const MlpSpec& spec) {
  if (spec.sizes.size() < 2 || spec.activations.size() != spec.sizes.size() - 1) {
    throw ConfigError("MLP spec needs n+1 sizes for n activations");
  }
}

}  // namespace

Mlp Mlp::create(ParameterSet& ps, const std::string& prefix, MlpSpec spec, Rng& rng, bool trainable) {
  validate(spec);
  Mlp m;
  m.prefix_ = prefix;
  for (std::size_t k = 0; k + 1 < spec.sizes.size(); ++k) {
    const std::size_t in = spec.sizes[k], out = spec.sizes[k + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    const std::string base = prefix + ".l" + std::to_string(k);
    m.weights_.push_back(ps.add(base + ".w", uniform_tensor(in, out, bound, rng), trainable));
    m.biases_.push_back(ps.add(base + ".b", Tensor(1, out), trainable));
  }
  m.spec_ = std::move(spec);
  return m;
}

Mlp Mlp::bind(const ParameterSet& ps, const std::string& prefix, MlpSpec spec) {
  validate(spec);
  Mlp m;
  m.prefix_ = prefix;
  for (std::size_t k = 0; k + 1 < spec.sizes.size(); ++k) {
    const std::string base = prefix + ".l" + std::to_string(k);
    const auto wi = ps.index_of(base + ".w");
    const auto bi = ps.index_of(base + ".b");
    if (ps.value(wi).rows() != spec.sizes[k] || ps.value(wi).cols() != spec.sizes[k + 1]) {
      throw DimensionError("layer " + base + " has shape " + ps.value(wi).shape_string());
    }
    m.weights_.push_back(wi);
    m.biases_.push_back(bi);
  }
  m.spec_ = std::move(spec);
  return m;
}

Var Mlp::forward(Tape& tape, const ParameterSet& ps, Var input) const {
  Var h = input;
  for (std::size_t k = 0; k < weights_.size(); ++k) {
    if (h.cols() != spec_.sizes[k]) {
      throw DimensionError("layer " + prefix_ + ".l" + std::to_string(k) + " expects width " +
                           std::to_string(spec_.sizes[k]) + ", got " + std::to_string(h.cols()));
    }
    h = affine(h, tape.param(ps, weights_[k]), tape.param(ps, biases_[k]));
    h = activate(h, spec_.activations[k]);
  }
  return h;
}

Tensor Mlp::apply(const ParameterSet& ps, const Tensor& input) const {
  Tape tape;
  return forward(tape, ps, tape.constant(input)).value();
}

Tensor mlp_forward(const ParameterSet& params, const Tensor& input, const MlpSpec& spec, const std::string& prefix) {
  return Mlp::bind(params, prefix, spec).apply(params, input);
}

namespace {
const char* const kGruNames[] = {"wz", "uz", "bz", "wr", "ur", "br", "wn", "un", "bn", "bhn"};
}

Gru Gru::create(ParameterSet& ps, const std::string& prefix, std::size_t input_width, std::size_t hidden_width, Rng& rng,
                bool trainable) {
  Gru g;
  g.prefix_ = prefix;
  g.input_width_ = input_width;
  g.hidden_width_ = hidden_width;
  const double bound = init_scale_numerator / std::sqrt(static_cast<double>(hidden_width));
  for (const char* name : kGruNames) {
    const std::string n(name);
    const std::size_t rows = n[0] == 'w' ? input_width : (n[0] == 'u' ? hidden_width : 1);
    g.idx_.push_back(ps.add(prefix + "." + n, uniform_tensor(rows, hidden_width, bound, rng), trainable));
  }
  return g;
}

Gru Gru::bind(const ParameterSet& ps, const std::string& prefix, std::size_t input_width, std::size_t hidden_width) {
  Gru g;
  g.prefix_ = prefix;
  g.input_width_ = input_width;
  g.hidden_width_ = hidden_width;
  for (const char* name : kGruNames) g.idx_.push_back(ps.index_of(prefix + "." + name));
  if (ps.value(g.idx_[0]).rows() != input_width || ps.value(g.idx_[1]).rows() != hidden_width) {
    throw DimensionError("GRU " + prefix + " parameter shapes do not match widths");
  }
  return g;
}

Var Gru::step(Tape& tape, const ParameterSet& ps, Var h_prev, Var input) const {
  if (h_prev.cols() != hidden_width_) {
    throw DimensionError("GRU " + prefix_ + ": hidden width " + std::to_string(h_prev.cols()) + ", expected " +
                         std::to_string(hidden_width_));
  }
  if (input.cols() != input_width_) {
    throw DimensionError("GRU " + prefix_ + ": input width " + std::to_string(input.cols()) + ", expected " +
                         std::to_string(input_width_));
  }
  auto p = [&](std::size_t k) { return tape.param(ps, idx_[k]); };
  Var z = sigmoid(affine(input, p(0), p(2)) + matmul(h_prev, p(1)));
  Var r = sigmoid(affine(input, p(3), p(5)) + matmul(h_prev, p(4)));
  Var n = tanh(affine(input, p(6), p(8)) + r * affine(h_prev, p(7), p(9)));
  // (1 - z) * n + z * h = n + z * (h - n)
  return n + z * (h_prev - n);
}

Tensor Gru::step(const ParameterSet& ps, const Tensor& h_prev, const Tensor& input) const {
  Tape tape;
  return step(tape, ps, tape.constant(h_prev), tape.constant(input)).value();
}

Tensor gru_step(const ParameterSet& params, const Tensor& h_prev, const Tensor& input, const Gru& cell) {
  return cell.step(params, h_prev, input);
}

}  // namespace fesgssm::nn
