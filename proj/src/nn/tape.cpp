// SPDX-License-Identifier: Apache-2.0
#include "fesgssm/nn/tape.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "fesgssm/errors.hpp"

namespace fesgssm::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

MapC view(const Tensor& t) { return MapC(t.data(), t.rows(), t.cols()); }
Map view(Tensor& t) { return Map(t.data(), t.rows(), t.cols()); }

Tape& tape_of(std::initializer_list<Var> vars) {
  Tape* t = nullptr;
  for (const Var& v : vars) {
    if (!v.valid()) throw ContractError("operation on an invalid Var");
    if (t != nullptr && v.tape != t) throw ContractError("operands recorded on different tapes");
    t = v.tape;
  }
  return *t;
}

// Right operand either matches `a` or is a single row broadcast over rows.
bool broadcasts(const Tensor& a, const Tensor& b) { return b.rows() == 1 && b.cols() == a.cols() && a.rows() > 1; }

void check_binary(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b) && !broadcasts(a, b)) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " + b.shape_string());
  }
}

// Sums a gradient with the shape of `a` down to the shape of `b`.
Tensor reduce_to(const Tensor& g, const Tensor& b) {
  if (g.same_shape(b)) return g;
  Tensor out(1, g.cols());
  for (std::size_t r = 0; r < g.rows(); ++r) {
    for (std::size_t c = 0; c < g.cols(); ++c) out[c] += g(r, c);
  }
  return out;
}

template <class F>
Tensor binary_map(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.rows(), a.cols());
  const bool bc = !a.same_shape(b);
  const std::size_t cols = a.cols();
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[bc ? i % cols : i]);
  return out;
}

template <class F>
Tensor unary_map(const Tensor& a, F f) {
  Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

double softplus_value(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Records y = f(x) whose derivative is expressed through (x, y).
template <class F, class D>
Var unary(Var a, F f, D dfdx) {
  Tape& t = tape_of({a});
  Tensor y = unary_map(a.value(), f);
  const std::int32_t ia = a.id;
  return t.record(std::move(y), {ia}, [ia, dfdx](Tape& tp, std::int32_t self) {
    const Tensor& x = tp.value(ia);
    const Tensor& y = tp.value(self);
    const Tensor& gy = tp.grad_buffer(self);
    Tensor gx(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] = gy[i] * dfdx(x[i], y[i]);
    tp.accumulate(ia, gx);
  });
}

}  // namespace

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::variable(Tensor value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::param(const ParameterSet& ps, std::size_t index) {
  const auto key = std::make_pair(&ps, index);
  if (auto it = bound_.find(key); it != bound_.end()) return {this, it->second};
  Node n;
  n.ref = &ps.value(index);
  n.requires_grad = ps.trainable(index);
  nodes_.push_back(std::move(n));
  const auto id = static_cast<std::int32_t>(nodes_.size() - 1);
  bound_.emplace(key, id);
  return {this, id};
}

Var Tape::record(Tensor value, std::vector<std::int32_t> inputs, BackwardFn backward) {
  Node n;
  n.owned = std::move(value);
  for (auto i : inputs) n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
  if (n.requires_grad) {
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

const Tensor& Tape::value(std::int32_t id) const {
  const Node& n = nodes_[id];
  return n.ref != nullptr ? *n.ref : n.owned;
}

bool Tape::any_requires_grad(std::initializer_list<Var> vars) const {
  return std::any_of(vars.begin(), vars.end(), [this](const Var& v) { return nodes_[v.id].requires_grad; });
}

Tensor& Tape::grad_buffer(std::int32_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    const Tensor& v = value(id);
    n.grad = Tensor(v.rows(), v.cols());
    n.has_grad = true;
  }
  return n.grad;
}

const Tensor& Tape::grad(Var v) { return grad_buffer(v.id); }

void Tape::accumulate(std::int32_t id, const Tensor& g) {
  if (!nodes_[id].requires_grad) return;
  Tensor& buf = grad_buffer(id);
  if (!buf.same_shape(g)) throw DimensionError("gradient shape " + g.shape_string() + " vs node " + buf.shape_string());
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("backward: loss recorded on another tape");
  const Tensor& lv = value(loss.id);
  if (lv.rows() != 1 || lv.cols() != 1) throw ContractError("backward: loss must be scalar, got " + lv.shape_string());
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  grad_buffer(loss.id)[0] = 1.0;
  for (std::int32_t id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.requires_grad || !n.backward) continue;
    n.backward(*this, id);
  }
  swept_ = true;
}

Gradients Tape::gradients(const ParameterSet& ps) const {
  Gradients g = Gradients::zeros_like(ps);
  for (const auto& [key, id] : bound_) {
    if (key.first != &ps) continue;
    const Node& n = nodes_[id];
    if (!n.requires_grad || !ps.trainable(key.second)) continue;
    g.present[key.second] = true;
    if (swept_ && n.has_grad) g.values[key.second] = n.grad;
  }
  return g;
}

Activation parse_activation(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "softplus") return Activation::softplus;
  throw ConfigError("unknown activation '" + name + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::softplus: return "softplus";
  }
  return "?";
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of({a, b});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: " + av.shape_string() + " x " + bv.shape_string());
  }
  Tensor out(av.rows(), bv.cols());
  view(out).noalias() = view(av) * view(bv);
  const auto ia = a.id, ib = b.id;
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::int32_t self) {
    const Tensor& g = tp.grad_buffer(self);
    if (tp.requires_grad(ia)) {
      const Tensor& bv = tp.value(ib);
      Tensor ga(g.rows(), bv.rows());
      view(ga).noalias() = view(g) * view(bv).transpose();
      tp.accumulate(ia, ga);
    }
    if (tp.requires_grad(ib)) {
      const Tensor& av = tp.value(ia);
      Tensor gb(av.cols(), g.cols());
      view(gb).noalias() = view(av).transpose() * view(g);
      tp.accumulate(ib, gb);
    }
  });
}

Var affine(Var x, Var w, Var b) {
  Tape& t = tape_of({x, w, b});
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.cols() != wv.rows() || bv.rows() != 1 || bv.cols() != wv.cols()) {
    throw DimensionError("affine: x" + xv.shape_string() + " w" + wv.shape_string() + " b" + bv.shape_string());
  }
  Tensor out(xv.rows(), wv.cols());
  view(out).noalias() = view(xv) * view(wv);
  view(out).rowwise() += view(bv).row(0);
  const auto ix = x.id, iw = w.id, ib = b.id;
  return t.record(std::move(out), {ix, iw, ib}, [ix, iw, ib](Tape& tp, std::int32_t self) {
    const Tensor& g = tp.grad_buffer(self);
    if (tp.requires_grad(ix)) {
      const Tensor& wv = tp.value(iw);
      Tensor gx(g.rows(), wv.rows());
      view(gx).noalias() = view(g) * view(wv).transpose();
      tp.accumulate(ix, gx);
    }
    if (tp.requires_grad(iw)) {
      const Tensor& xv = tp.value(ix);
      Tensor gw(xv.cols(), g.cols());
      view(gw).noalias() = view(xv).transpose() * view(g);
      tp.accumulate(iw, gw);
    }
    if (tp.requires_grad(ib)) {
      tp.accumulate(ib, reduce_to(g, tp.value(ib)));
    }
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of({a, b});
  check_binary("add", a.value(), b.value());
  const auto ia = a.id, ib = b.id;
  return t.record(binary_map(a.value(), b.value(), [](double x, double y) { return x + y; }), {ia, ib},
                  [ia, ib](Tape& tp, std::int32_t self) {
                    const Tensor& g = tp.grad_buffer(self);
                    tp.accumulate(ia, g);
                    if (tp.requires_grad(ib)) tp.accumulate(ib, reduce_to(g, tp.value(ib)));
                  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of({a, b});
  check_binary("sub", a.value(), b.value());
  const auto ia = a.id, ib = b.id;
  return t.record(binary_map(a.value(), b.value(), [](double x, double y) { return x - y; }), {ia, ib},
                  [ia, ib](Tape& tp, std::int32_t self) {
                    const Tensor& g = tp.grad_buffer(self);
                    tp.accumulate(ia, g);
                    if (tp.requires_grad(ib)) {
                      Tensor ng = reduce_to(g, tp.value(ib));
                      for (double& v : ng.values()) v = -v;
                      tp.accumulate(ib, ng);
                    }
                  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of({a, b});
  check_binary("mul", a.value(), b.value());
  const auto ia = a.id, ib = b.id;
  return t.record(binary_map(a.value(), b.value(), [](double x, double y) { return x * y; }), {ia, ib},
                  [ia, ib](Tape& tp, std::int32_t self) {
                    const Tensor& g = tp.grad_buffer(self);
                    const Tensor& av = tp.value(ia);
                    const Tensor& bv = tp.value(ib);
                    if (tp.requires_grad(ia)) tp.accumulate(ia, binary_map(g, bv, [](double x, double y) { return x * y; }));
                    if (tp.requires_grad(ib)) {
                      Tensor gb(g.rows(), g.cols());
                      for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * av[i];
                      tp.accumulate(ib, reduce_to(gb, bv));
                    }
                  });
}

Var div(Var a, Var b) {
  Tape& t = tape_of({a, b});
  check_binary("div", a.value(), b.value());
  const auto ia = a.id, ib = b.id;
  return t.record(binary_map(a.value(), b.value(), [](double x, double y) { return x / y; }), {ia, ib},
                  [ia, ib](Tape& tp, std::int32_t self) {
                    const Tensor& g = tp.grad_buffer(self);
                    const Tensor& bv = tp.value(ib);
                    const Tensor& y = tp.value(self);
                    if (tp.requires_grad(ia)) tp.accumulate(ia, binary_map(g, bv, [](double x, double d) { return x / d; }));
                    if (tp.requires_grad(ib)) {
                      const bool bc = !g.same_shape(bv);
                      Tensor gb(g.rows(), g.cols());
                      for (std::size_t i = 0; i < g.size(); ++i) gb[i] = -g[i] * y[i] / bv[bc ? i % g.cols() : i];
                      tp.accumulate(ib, reduce_to(gb, bv));
                    }
                  });
}

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(a, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var softplus(Var a) {
  return unary(a, softplus_value, [](double x, double) { return sigmoid_value(x); });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sqrt(Var a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var activate(Var a, Activation act) {
  switch (act) {
    case Activation::identity: return a;
    case Activation::tanh: return tanh(a);
    case Activation::relu: return relu(a);
    case Activation::sigmoid: return sigmoid(a);
    case Activation::softplus: return softplus(a);
  }
  return a;
}

Var clamp_min(Var a, double floor) {
  return unary(a, [floor](double x) { return x > floor ? x : floor; },
               [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

Var clamp(Var a, double lo, double hi) {
  return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var minimum(Var a, Var b) {
  Tape& t = tape_of({a, b});
  if (!a.value().same_shape(b.value())) throw DimensionError("minimum: shape mismatch");
  const auto ia = a.id, ib = b.id;
  return t.record(binary_map(a.value(), b.value(), [](double x, double y) { return std::min(x, y); }), {ia, ib},
                  [ia, ib](Tape& tp, std::int32_t self) {
                    const Tensor& g = tp.grad_buffer(self);
                    const Tensor& av = tp.value(ia);
                    const Tensor& bv = tp.value(ib);
                    Tensor ga(g.rows(), g.cols()), gb(g.rows(), g.cols());
                    for (std::size_t i = 0; i < g.size(); ++i) (av[i] <= bv[i] ? ga[i] : gb[i]) = g[i];
                    tp.accumulate(ia, ga);
                    tp.accumulate(ib, gb);
                  });
}

Var maximum(Var a, Var b) { return neg(minimum(neg(a), neg(b))); }

Var sum(Var a) {
  Tape& t = tape_of({a});
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const auto ia = a.id;
  return t.record(Tensor::scalar(s), {ia}, [ia](Tape& tp, std::int32_t self) {
    const double g = tp.grad_buffer(self)[0];
    const Tensor& av = tp.value(ia);
    tp.accumulate(ia, Tensor(av.rows(), av.cols(), g));
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var row_sum(Var a) {
  Tape& t = tape_of({a});
  const Tensor& av = a.value();
  Tensor out(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < av.cols(); ++c) s += av(r, c);
    out[r] = s;
  }
  const auto ia = a.id;
  return t.record(std::move(out), {ia}, [ia](Tape& tp, std::int32_t self) {
    const Tensor& g = tp.grad_buffer(self);
    const Tensor& av = tp.value(ia);
    Tensor ga(av.rows(), av.cols());
    for (std::size_t r = 0; r < av.rows(); ++r) {
      for (std::size_t c = 0; c < av.cols(); ++c) ga(r, c) = g[r];
    }
    tp.accumulate(ia, ga);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  Tape& t = *parts.front().tape;
  std::vector<Tensor> values;
  std::vector<std::int32_t> ids;
  for (const Var& p : parts) {
    if (p.tape != &t) throw ContractError("concat_cols: operands on different tapes");
    values.push_back(p.value());
    ids.push_back(p.id);
  }
  Tensor out = hstack(values);
  return t.record(std::move(out), ids, [ids](Tape& tp, std::int32_t self) {
    const Tensor& g = tp.grad_buffer(self);
    std::size_t off = 0;
    for (auto id : ids) {
      const std::size_t w = tp.value(id).cols();
      if (tp.requires_grad(id)) {
        Tensor part(g.rows(), w);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          std::copy_n(g.data() + r * g.cols() + off, w, part.data() + r * w);
        }
        tp.accumulate(id, part);
      }
      off += w;
    }
  });
}

Var concat_cols(std::initializer_list<Var> parts) { return concat_cols(std::span<const Var>(parts.begin(), parts.size())); }

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Tape& t = tape_of({a});
  const Tensor& av = a.value();
  if (begin + count > av.cols()) throw DimensionError("slice_cols: range exceeds " + av.shape_string());
  Tensor out(av.rows(), count);
  for (std::size_t r = 0; r < av.rows(); ++r) std::copy_n(av.data() + r * av.cols() + begin, count, out.data() + r * count);
  const auto ia = a.id;
  return t.record(std::move(out), {ia}, [ia, begin, count](Tape& tp, std::int32_t self) {
    const Tensor& g = tp.grad_buffer(self);
    const Tensor& av = tp.value(ia);
    Tensor ga(av.rows(), av.cols());
    for (std::size_t r = 0; r < av.rows(); ++r) std::copy_n(g.data() + r * count, count, ga.data() + r * av.cols() + begin);
    tp.accumulate(ia, ga);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no operands");
  Tape& t = *parts.front().tape;
  std::vector<Tensor> values;
  std::vector<std::int32_t> ids;
  for (const Var& p : parts) {
    values.push_back(p.value());
    ids.push_back(p.id);
  }
  Tensor out = vstack(values);
  return t.record(std::move(out), ids, [ids](Tape& tp, std::int32_t self) {
    const Tensor& g = tp.grad_buffer(self);
    std::size_t off = 0;
    for (auto id : ids) {
      const Tensor& v = tp.value(id);
      if (tp.requires_grad(id)) {
        Tensor part(v.rows(), v.cols());
        std::copy_n(g.data() + off * g.cols(), v.size(), part.data());
        tp.accumulate(id, part);
      }
      off += v.rows();
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Tape& t = tape_of({a});
  const Tensor& av = a.value();
  if (begin + count > av.rows()) throw DimensionError("slice_rows: range exceeds " + av.shape_string());
  Tensor out(count, av.cols());
  std::copy_n(av.data() + begin * av.cols(), count * av.cols(), out.data());
  const auto ia = a.id;
  return t.record(std::move(out), {ia}, [ia, begin, count](Tape& tp, std::int32_t self) {
    const Tensor& g = tp.grad_buffer(self);
    const Tensor& av = tp.value(ia);
    Tensor ga(av.rows(), av.cols());
    std::copy_n(g.data(), count * av.cols(), ga.data() + begin * av.cols());
    tp.accumulate(ia, ga);
  });
}

Var mul_const(Var a, const Tensor& mask) {
  Tape& t = tape_of({a});
  check_binary("mul_const", a.value(), mask);
  const auto ia = a.id;
  return t.record(binary_map(a.value(), mask, [](double x, double m) { return x * m; }), {ia},
                  [ia, mask](Tape& tp, std::int32_t self) {
                    tp.accumulate(ia, binary_map(tp.grad_buffer(self), mask, [](double g, double m) { return g * m; }));
                  });
}

Var detach(Var a) {
  Tape& t = tape_of({a});
  return t.constant(a.value());
}

}  // namespace fesgssm::nn
