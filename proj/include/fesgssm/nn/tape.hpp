// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "fesgssm/nn/parameters.hpp"
#include "fesgssm/nn/tensor.hpp"

namespace fesgssm::nn {

class Tape;

/// Handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::int32_t id = -1;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Define-by-run record of primitive operations for reverse-mode
/// differentiation. Nodes are appended in execution order, so a reverse
/// sweep over node ids is a valid reverse topological order.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::int32_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf holding a copy of `value`; never receives gradient.
  Var constant(Tensor value);
  /// Leaf that requires gradient but is not bound to a parameter set
  /// (used for input-gradient checks).
  Var variable(Tensor value);
  /// Leaf bound to entry `index` of `ps`. The tensor is referenced, not
  /// copied, so `ps` must outlive the tape. Repeated calls return the same
  /// node. Frozen entries become constants.
  Var param(const ParameterSet& ps, std::size_t index);
  Var param(const ParameterSet& ps, const std::string& name) { return param(ps, ps.index_of(name)); }

  /// Records a computed node. `backward` may be empty when no input needs
  /// gradient.
  Var record(Tensor value, std::vector<std::int32_t> inputs, BackwardFn backward);

  const Tensor& value(std::int32_t id) const;
  bool requires_grad(std::int32_t id) const { return nodes_[id].requires_grad; }
  bool any_requires_grad(std::initializer_list<Var> vars) const;

  /// Gradient accumulated at a node after `backward` (zeros if unreached).
  const Tensor& grad(Var v);
  /// Adds `g` into the gradient buffer of node `id`.
  void accumulate(std::int32_t id, const Tensor& g);
  Tensor& grad_buffer(std::int32_t id);

  /// Reverse sweep from a 1 x 1 loss node.
  void backward(Var loss);

  /// Gradients for the trainable entries of `ps` reached by the last sweep.
  Gradients gradients(const ParameterSet& ps) const;

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* ref = nullptr;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::int32_t> inputs;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::map<std::pair<const ParameterSet*, std::size_t>, std::int32_t> bound_;
  bool swept_ = false;
};

enum class Activation { identity, tanh, relu, sigmoid, softplus };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

// Elementwise and linear-algebra primitives. Binary elementwise ops accept
// equal shapes or a 1 x cols right operand broadcast over rows.
Var matmul(Var a, Var b);
/// x * w + b with b a 1 x out row.
Var affine(Var x, Var w, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var softplus(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);
Var activate(Var a, Activation act);
/// max(a, floor); gradient flows only where a > floor.
Var clamp_min(Var a, double floor);
/// Clamp into [lo, hi]; gradient flows only strictly inside.
Var clamp(Var a, double lo, double hi);
Var minimum(Var a, Var b);
Var maximum(Var a, Var b);
/// Sum of all entries, 1 x 1.
Var sum(Var a);
Var mean(Var a);
/// Per-row sum over columns, rows x 1.
Var row_sum(Var a);
Var concat_cols(std::span<const Var> parts);
Var concat_cols(std::initializer_list<Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
/// Vertical stack of equally wide nodes.
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
/// Elementwise multiply by a constant mask (no gradient into the mask).
Var mul_const(Var a, const Tensor& mask);
/// Same value, no gradient.
Var detach(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator-(Var a) { return neg(a); }

}  // namespace fesgssm::nn
