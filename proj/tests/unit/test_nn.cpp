// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "fesgssm/errors.hpp"
#include "fesgssm/nn/adam.hpp"
#include "fesgssm/nn/gradcheck.hpp"
#include "fesgssm/nn/layers.hpp"
#include "test_support.hpp"

using namespace fesgssm;
using namespace fesgssm::nn;

namespace {

// Independent forward pass: explicit triple loops over the stored weights.
Tensor oracle_mlp(const ParameterSet& ps, const std::string& prefix, const MlpSpec& spec, const Tensor& x) {
  std::vector<double> h(x.values().begin(), x.values().end());
  for (std::size_t k = 0; k + 1 < spec.sizes.size(); ++k) {
    const Tensor& w = ps.at(prefix + ".l" + std::to_string(k) + ".w");
    const Tensor& b = ps.at(prefix + ".l" + std::to_string(k) + ".b");
    std::vector<double> next(spec.sizes[k + 1]);
    for (std::size_t j = 0; j < next.size(); ++j) {
      double s = b[j];
      for (std::size_t i = 0; i < h.size(); ++i) s += h[i] * w(i, j);
      switch (spec.activations[k]) {
        case Activation::tanh: s = std::tanh(s); break;
        case Activation::relu: s = s > 0 ? s : 0; break;
        case Activation::sigmoid: s = 1 / (1 + std::exp(-s)); break;
        case Activation::softplus: s = std::log1p(std::exp(s)); break;
        case Activation::identity: break;
      }
      next[j] = s;
    }
    h = next;
  }
  return Tensor::row(h);
}

}  // namespace

TEST_CASE("mlp_forward identity and zero cases") {
  ParameterSet ps;
  Rng rng(1);
  MlpSpec spec{{2, 2}, {Activation::identity}};
  auto net = Mlp::create(ps, "id", spec, rng);
  ps.at("id.l0.w") = Tensor(2, 2, {1, 0, 0, 1});
  const Tensor y = mlp_forward(ps, Tensor::row({1, 2}), spec, "id");
  CHECK(y == Tensor::row({1, 2}));

  ParameterSet zs;
  MlpSpec sig{{3, 4}, {Activation::sigmoid}};
  Mlp::create(zs, "z", sig, rng);
  zs.at("z.l0.w") = Tensor(3, 4);
  const Tensor s = mlp_forward(zs, Tensor::row({5, -3, 2}), sig, "z");
  for (double v : s.values()) CHECK(v == 0.5);
}

TEST_CASE("mlp_forward matches hand-rolled oracle") {
  ParameterSet ps;
  Rng rng(7);
  MlpSpec spec{{2, 8, 8, 2}, {Activation::tanh, Activation::relu, Activation::identity}};
  auto net = Mlp::create(ps, "net", spec, rng);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (double& v : ps.value(i).values()) v = rng.uniform(-1, 1);
  }
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = Tensor::row({rng.uniform(-2, 2), rng.uniform(-2, 2)});
    const Tensor got = net.apply(ps, x);
    const Tensor want = oracle_mlp(ps, "net", spec, x);
    for (std::size_t j = 0; j < 2; ++j) CHECK(std::abs(got[j] - want[j]) <= 1e-12);
  }
}

TEST_CASE("mlp shape mismatch names the layer") {
  ParameterSet ps;
  Rng rng(1);
  auto net = Mlp::create(ps, "enc", {{3, 4, 2}, {Activation::tanh, Activation::identity}}, rng);
  try {
    net.apply(ps, Tensor::row({1, 2}));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("enc.l0") != std::string::npos);
  }
}

TEST_CASE("gru_step cases") {
  Rng rng(3);
  SUBCASE("zero parameters keep a zero state") {
    ParameterSet ps;
    auto cell = Gru::create(ps, "gru", 3, 5, rng);
    for (std::size_t i = 0; i < ps.size(); ++i) ps.value(i) = Tensor(ps.value(i).rows(), ps.value(i).cols());
    const Tensor h = gru_step(ps, Tensor(1, 5), Tensor::row({0.3, -1.0, 2.0}), cell);
    for (double v : h.values()) CHECK(v == 0.0);
  }
  SUBCASE("saturated update gate copies the previous state") {
    ParameterSet ps;
    auto cell = Gru::create(ps, "gru", 3, 5, rng);
    for (double& b : ps.at("gru.bz").values()) b = 40.0;
    const Tensor h_prev = Tensor::row({0.1, -0.4, 0.7, 0.0, -0.9});
    const Tensor h = gru_step(ps, h_prev, Tensor::row({0.3, -1.0, 2.0}), cell);
    for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(h[j] - h_prev[j]) < 1e-6);
  }
  SUBCASE("state stays inside (-1, 1)") {
    ParameterSet ps;
    auto cell = Gru::create(ps, "gru", 4, 16, rng);
    Tensor h(1, 16);
    for (int t = 0; t < 50; ++t) {
      Tensor x(1, 4);
      for (double& v : x.values()) v = rng.uniform(-2, 2);
      h = gru_step(ps, h, x, cell);
      for (double v : h.values()) CHECK(std::abs(v) < 1.0);
    }
  }
  SUBCASE("width mismatch") {
    ParameterSet ps;
    auto cell = Gru::create(ps, "gru", 3, 5, rng);
    CHECK_THROWS_AS(gru_step(ps, Tensor(1, 4), Tensor(1, 3), cell), DimensionError);
  }
}

TEST_CASE("backward on linear and quadratic losses") {
  ParameterSet ps;
  ps.add("w", Tensor::row({0.5, -1.5, 2.0}));
  const Tensor x = Tensor::row({3.0, 4.0, -1.0});
  {
    Tape tape;
    Var loss = sum(tape.param(ps, "w") * tape.constant(x));
    tape.backward(loss);
    CHECK(tape.gradients(ps).values[0] == x);
  }
  {
    Tape tape;
    Var loss = sum(square(tape.param(ps, "w")));
    tape.backward(loss);
    CHECK(tape.gradients(ps).values[0] == Tensor::row({1.0, -3.0, 4.0}));
  }
  {
    Tape tape;
    Var v = tape.param(ps, "w");
    CHECK_THROWS_AS(tape.backward(v), ContractError);
  }
}

TEST_CASE("gradient map covers exactly the trainable parameters touched") {
  ParameterSet ps;
  ps.add("used", Tensor::row({1.0, 2.0}));
  ps.add("frozen", Tensor::row({1.0, 2.0}), false);
  ps.add("unused", Tensor::row({1.0}));
  Tape tape;
  Var loss = sum(tape.param(ps, "used") * tape.param(ps, "frozen"));
  tape.backward(loss);
  const Gradients g = tape.gradients(ps);
  CHECK(g.present[0]);
  CHECK_FALSE(g.present[1]);
  CHECK_FALSE(g.present[2]);
  CHECK(g.named(ps).size() == 1);
}

TEST_CASE("every primitive agrees with finite differences") {
  Rng rng(11);
  ParameterSet ps;
  auto rnd = [&](std::size_t r, std::size_t c, double lo, double hi) {
    Tensor t(r, c);
    for (double& v : t.values()) v = rng.uniform(lo, hi);
    return t;
  };
  ps.add("a", rnd(3, 4, -1, 1));
  ps.add("b", rnd(3, 4, 0.5, 2));
  ps.add("row", rnd(1, 4, -1, 1));
  ps.add("m", rnd(4, 2, -1, 1));
  LossBuilder loss = [](Tape& t, const ParameterSet& p) {
    Var a = t.param(p, "a"), b = t.param(p, "b"), row = t.param(p, "row"), m = t.param(p, "m");
    Var x = tanh(a) * b + sigmoid(a + row) - div(a, b) + softplus(a - row) + exp(scale(a, 0.3));
    Var y = log(b) + sqrt(b) + square(a) + clamp_min(a, -0.2) + clamp(a, -0.5, 0.5) + minimum(a, b);
    Var z = concat_cols({slice_cols(x, 1, 2), y});
    Var w = matmul(slice_cols(z, 0, 4), m);
    Var stacked = concat_rows(std::vector<Var>{w, slice_rows(w, 1, 2)});
    return add(mean(row_sum(stacked)), sum(relu(x - add_scalar(y, 0.1))));
  };
  const auto res = finite_diff_check(loss, ps, 1e-6);
  CHECK(res.max_relative_error < 1e-4);
}

TEST_CASE("finite_diff_check on MLP, linear, and planted fault") {
  Rng rng(5);
  ParameterSet ps;
  auto net = Mlp::create(ps, "net", {{3, 6, 2}, {Activation::tanh, Activation::identity}}, rng);
  const Tensor x = Tensor(4, 3, {0.1, -0.2, 0.3, 1.0, 0.5, -0.7, -1.2, 0.2, 0.9, 0.0, 0.4, -0.3});
  LossBuilder mlp_loss = [&](Tape& t, const ParameterSet& p) { return sum(square(net.forward(t, p, t.constant(x)))); };
  CHECK(finite_diff_check(mlp_loss, ps).max_relative_error < 1e-4);

  ParameterSet lin;
  lin.add("w", Tensor::row({0.3, 0.7, -0.2}));
  LossBuilder linear = [](Tape& t, const ParameterSet& p) {
    return sum(t.param(p, "w") * t.constant(Tensor::row({2.0, -1.0, 4.0})));
  };
  CHECK(finite_diff_check(linear, lin).max_relative_error < 1e-9);

  Tape tape;
  tape.backward(mlp_loss(tape, ps));
  Gradients doubled = tape.gradients(ps);
  doubled.scale(2.0);
  const double planted = finite_diff_check(mlp_loss, ps, doubled).max_relative_error;
  CHECK(planted == doctest::Approx(0.5).epsilon(1e-3));
}

TEST_CASE("adam_step") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParameterSet ps;
    ps.add("w", Tensor::row({1.0, -2.0}));
    auto state = AdamState::for_params(ps);
    Gradients g = Gradients::zeros_like(ps);
    g.present[0] = true;
    adam_step(ps, g, state, {});
    CHECK(ps.at("w") == Tensor::row({1.0, -2.0}));
  }
  SUBCASE("first step moves by lr against the gradient sign") {
    ParameterSet ps;
    ps.add("w", Tensor::scalar(1.0));
    ps.add("frozen", Tensor::scalar(3.0), false);
    auto state = AdamState::for_params(ps);
    Gradients g = Gradients::zeros_like(ps);
    g.values[0][0] = 1.0;
    g.present[0] = true;
    g.values[1][0] = 1.0;
    g.present[1] = true;
    adam_step(ps, g, state, {.lr = 0.01});
    // m_hat = 1, v_hat = 1 after bias correction: step = lr / (1 + eps).
    CHECK(ps.at("w").item() == doctest::Approx(1.0 - 0.01 / (1.0 + 1e-8)).epsilon(1e-14));
    CHECK(ps.at("frozen").item() == 3.0);
  }
  SUBCASE("non-finite gradient names the parameter") {
    ParameterSet ps;
    ps.add("bad.weight", Tensor::scalar(1.0));
    auto state = AdamState::for_params(ps);
    Gradients g = Gradients::zeros_like(ps);
    g.values[0][0] = std::nan("");
    g.present[0] = true;
    try {
      adam_step(ps, g, state, {});
      FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
      CHECK(std::string(e.what()).find("bad.weight") != std::string::npos);
    }
  }
  SUBCASE("identical seeds give bit-identical trajectories") {
    auto run = [] {
      Rng rng(42);
      ParameterSet ps;
      auto net = Mlp::create(ps, "n", {{2, 8, 1}, {Activation::tanh, Activation::identity}}, rng);
      auto state = AdamState::for_params(ps);
      for (int i = 0; i < 30; ++i) {
        Tensor x(8, 2), y(8, 1);
        for (std::size_t r = 0; r < 8; ++r) {
          x(r, 0) = rng.normal();
          x(r, 1) = rng.normal();
          y[r] = std::sin(x(r, 0)) + x(r, 1);
        }
        Tape tape;
        Var loss = mean(square(net.forward(tape, ps, tape.constant(x)) - tape.constant(y)));
        tape.backward(loss);
        adam_step(ps, tape.gradients(ps), state, {.lr = 0.01});
      }
      return ps;
    };
    CHECK(run() == run());
  }
}

TEST_CASE("global-norm clipping") {
  ParameterSet ps;
  ps.add("w", Tensor::row({0, 0}));
  Gradients g = Gradients::zeros_like(ps);
  g.present[0] = true;
  g.values[0] = Tensor::row({30.0, 40.0});
  Gradients* groups[] = {&g};
  CHECK(clip_global_norm(groups, 10.0) == doctest::Approx(50.0));
  CHECK(std::sqrt(g.squared_norm()) == doctest::Approx(10.0));
}

TEST_CASE("forward passes are deterministic functions of params and input") {
  Rng rng(9);
  ParameterSet ps;
  auto net = Mlp::create(ps, "n", {{4, 16, 3}, {Activation::softplus, Activation::sigmoid}}, rng);
  const Tensor x = test_support::random_tensor(5, 4, rng);
  CHECK(net.apply(ps, x) == net.apply(ps, x));
}
