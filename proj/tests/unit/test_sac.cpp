// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "fesgssm/errors.hpp"
#include "fesgssm/nn/gradcheck.hpp"
#include "fesgssm/sac/sac.hpp"
#include "test_support.hpp"

using namespace fesgssm;
using namespace fesgssm::sac;
using nn::Tensor;

namespace {

SacConfig tiny_config(std::size_t action = 4, std::size_t hidden = 16) {
  SacConfig c;
  c.obs = 2;
  c.latent = 2;
  c.target = 1;
  c.action = action;
  c.hidden = hidden;
  c.batch = 32;
  return c;
}

// Zeroes the actor and sets the output biases to (mean, log_std) per dim.
void pin_actor(SacAgent& ag, double mean, double log_std) {
  for (std::size_t i = 0; i < ag.actor.size(); ++i) {
    for (double& v : ag.actor.value(i).values()) v = 0.0;
  }
  Tensor& b = ag.actor.at("actor.l2.b");
  for (std::size_t k = 0; k < ag.cfg.action; ++k) {
    b(0, k) = mean;
    b(0, ag.cfg.action + k) = log_std;
  }
}

Tensor repeat_row(const Tensor& row, std::size_t n) {
  Tensor t(n, row.cols());
  for (std::size_t i = 0; i < n; ++i) std::ranges::copy(row.row_span(0), t.row_span(i).begin());
  return t;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

Episode make_episode(std::size_t len, Rng& rng, std::size_t action = 4) {
  Episode ep;
  std::vector<double> o = {rng.normal(), rng.normal(), rng.normal(), rng.normal()};
  std::vector<double> c = {0.3, 0.9};
  for (std::size_t t = 0; t < len; ++t) {
    ExperienceTuple e;
    e.obs = o;
    e.target = c;
    for (std::size_t k = 0; k < action; ++k) e.action.push_back(rng.uniform());
    e.reward = -rng.uniform();
    for (double& v : o) v += 0.1 * rng.normal();
    if (t == len / 2) c = {1.1, 0.2};
    e.next_obs = o;
    e.next_target = c;
    e.done = false;
    ep.push_back(e);
  }
  return ep;
}

}  // namespace

TEST_CASE("actor_sample degenerate and centred cases") {
  Rng rng(1);
  SacAgent ag = SacAgent::create(tiny_config(), rng);
  const Tensor s = test_support::random_tensor(5, ag.cfg.state_width(), rng);

  SUBCASE("sigma at the floor gives sigmoid(mean)") {
    pin_actor(ag, 0.8, -20.0);
    auto smp = actor_sample(ag, s, rng);
    const Tensor det = actor_deterministic(ag, s);
    for (std::size_t i = 0; i < smp.a.size(); ++i) {
      CHECK(smp.a[i] == doctest::Approx(1.0 / (1.0 + std::exp(-0.8))).epsilon(1e-7));
      CHECK(det[i] == doctest::Approx(smp.a[i]).epsilon(1e-7));
    }
  }
  SUBCASE("zero mean at the floor gives one half") {
    pin_actor(ag, 0.0, -20.0);
    auto smp = actor_sample(ag, s, rng);
    for (double v : smp.a.values()) CHECK(v == doctest::Approx(0.5).epsilon(1e-8));
  }
  SUBCASE("log_std is clamped to the declared range") {
    pin_actor(ag, 0.0, 50.0);
    auto p = policy(ag, s);
    for (double v : p.log_std.values()) CHECK(v == 2.0);
    pin_actor(ag, 0.0, -50.0);
    p = policy(ag, s);
    for (double v : p.log_std.values()) CHECK(v == -20.0);
  }
  SUBCASE("actions stay in the open interval with finite log_prob") {
    test_support::randomize(ag.actor, rng, 1.0);
    auto smp = actor_sample(ag, test_support::random_tensor(200, ag.cfg.state_width(), rng, 3.0), rng);
    for (double v : smp.a.values()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
    CHECK(smp.log_prob.all_finite());
  }
}

TEST_CASE("actor log_prob matches a histogram density over 1e6 samples") {
  Rng rng(2);
  SacAgent ag = SacAgent::create(tiny_config(1, 4), rng);
  constexpr double mu = 0.3, sigma = 0.3;
  pin_actor(ag, mu, std::log(sigma));
  const Tensor s(1, ag.cfg.state_width());
  constexpr std::size_t kChunk = 100000, kChunks = 10;
  constexpr double lo = 0.46, hi = 0.70, width = 0.02;
  const std::size_t bins = static_cast<std::size_t>(std::lround((hi - lo) / width));
  std::vector<double> counts(bins, 0.0);
  const Tensor states = repeat_row(s, kChunk);
  for (std::size_t c = 0; c < kChunks; ++c) {
    auto smp = actor_sample(ag, states, rng);
    for (double a : smp.a.values()) {
      if (a >= lo && a < hi) counts[static_cast<std::size_t>((a - lo) / width)] += 1.0;
    }
  }
  // Density at a, read back through the noise that maps onto it.
  auto density = [&](double a) {
    const Tensor noise(1, 1, (std::log(a / (1.0 - a)) - mu) / sigma);
    return std::exp(actor_sample(ag, s, noise).log_prob[0]);
  };
  double worst = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    const double a0 = lo + b * width;
    // Simpson integral of the density over the bin.
    constexpr int kPanels = 10;
    const double h = width / kPanels;
    double mass = density(a0) + density(a0 + width);
    for (int k = 1; k < kPanels; ++k) mass += (k % 2 ? 4.0 : 2.0) * density(a0 + k * h);
    mass *= h / 3.0;
    const double empirical = counts[b] / (kChunk * kChunks);
    worst = std::max(worst, std::abs(empirical - mass) / mass);
  }
  CHECK(worst < 0.02);
}

TEST_CASE("build_rl_state") {
  SacConfig cfg;
  const std::vector<double> o = {1, 2, 3, 4}, x = {5, 6, 7, 8, 9, 10, 11, 12}, c = {13, 14};
  SUBCASE("gssm mode layout") {
    const Tensor s = build_rl_state(o, std::span<const double>(x), c, cfg);
    REQUIRE(s.cols() == 14);
    for (std::size_t i = 0; i < 14; ++i) CHECK(s[i] == static_cast<double>(i + 1));
  }
  SUBCASE("vanilla mode zero slot") {
    const Tensor s = build_rl_state(o, std::nullopt, c, cfg);
    REQUIRE(s.cols() == 14);
    for (std::size_t i = 4; i < 12; ++i) CHECK(s[i] == 0.0);
    CHECK(s[0] == 1.0);
    CHECK(s[12] == 13.0);
    CHECK(s[13] == 14.0);
  }
  SUBCASE("width mismatches") {
    const std::vector<double> short_x = {1, 2, 3};
    CHECK_THROWS_AS(build_rl_state(o, std::span<const double>(short_x), c, cfg), DimensionError);
    CHECK_THROWS_AS(build_rl_state(x, std::nullopt, c, cfg), DimensionError);
    CHECK_THROWS_AS(build_rl_state(o, std::nullopt, o, cfg), DimensionError);
    const std::vector<double> bad = {1, NAN, 3, 4};
    CHECK_THROWS_AS(build_rl_state(bad, std::nullopt, c, cfg), ContractError);
  }
}

TEST_CASE("buffers") {
  Rng rng(3);
  SUBCASE("trajectory buffer evicts whole episodes first in first out") {
    TrajectoryBuffer tb(2);
    tb.add(make_episode(3, rng));
    tb.add(make_episode(4, rng));
    tb.add(make_episode(5, rng));
    CHECK(tb.size() == 2);
    CHECK(tb.episode(0).size() == 4);
    CHECK(tb.tuple_count() == 9);
    CHECK_THROWS_AS(tb.add({}), ContractError);
  }
  SUBCASE("sequence view") {
    TrajectoryBuffer tb(4);
    tb.add(make_episode(5, rng));
    const std::vector<double> scale = {1, 1, 0.5, 0.5};
    auto seq = tb.sequence(0, scale);
    CHECK(seq.obs.rows() == 6);
    CHECK(seq.actions.rows() == 5);
    CHECK(seq.obs(5, 2) == tb.episode(0)[4].next_obs[2] * 0.5);
    CHECK(seq.obs(2, 0) == tb.episode(0)[2].obs[0]);
  }
  SUBCASE("replay ring order and sampling") {
    ReplayBuffer rb(3, 2, 1);
    CHECK_THROWS_AS(rb.sample(4, rng), ContractError);
    for (int i = 0; i < 5; ++i) {
      const std::vector<double> s = {double(i), 0}, a = {0.5};
      rb.add(s, a, i, s, i == 4);
    }
    CHECK(rb.size() == 3);
    CHECK(rb.row(0).r[0] == 2.0);
    CHECK(rb.row(2).r[0] == 4.0);
    CHECK(rb.row(2).done[0] == 1.0);
    auto b = rb.sample(50, rng);
    for (double r : b.r.values()) CHECK((r >= 2.0 && r <= 4.0));
    const std::vector<double> wide = {1, 2, 3};
    CHECK_THROWS_AS(rb.add(wide, wide, 0, wide, false), DimensionError);
  }
}

TEST_CASE("critic target") {
  Rng rng(4);
  SacAgent ag = SacAgent::create(tiny_config(), rng);
  const std::size_t n = 6;
  Batch b{test_support::random_tensor(n, ag.cfg.state_width(), rng), Tensor(n, 4, 0.5),
          test_support::random_tensor(n, 1, rng), test_support::random_tensor(n, ag.cfg.state_width(), rng),
          Tensor(n, 1)};
  const Tensor noise = test_support::random_tensor(n, 4, rng);

  SUBCASE("gamma zero reduces to the reward") {
    ag.cfg.gamma = 0.0;
    CHECK(critic_target(ag, b, 0.2, noise) == b.r);
  }
  SUBCASE("done removes the bootstrap term") {
    for (double& d : b.done.values()) d = 1.0;
    CHECK(critic_target(ag, b, 0.2, noise) == b.r);
  }
  SUBCASE("clipped double-Q with the entropy bonus") {
    const Tensor y = critic_target(ag, b, 0.3, noise);
    const auto next = actor_sample(ag, b.s2, noise);
    const Tensor q1 = q_value(ag.target1, ag.cfg, b.s2, next.a);
    const Tensor q2 = q_value(ag.target2, ag.cfg, b.s2, next.a);
    for (std::size_t i = 0; i < n; ++i) {
      const double expect = b.r[i] + 0.99 * (std::min(q1[i], q2[i]) - 0.3 * next.log_prob[i]);
      CHECK(y[i] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("critic converges to the reward on a one-step toy problem") {
  Rng rng(5);
  SacConfig cfg = tiny_config(1, 32);
  SacAgent ag = SacAgent::create(cfg, rng);
  ag.cfg.lr = 3e-3;
  pin_actor(ag, 0.0, -20.0);  // deterministic policy
  // Five states, one-hot in the first slots, reward depends on state only.
  const double rewards[5] = {-1.0, -0.5, 0.0, 0.4, 1.0};
  const std::size_t n = 5;
  Batch b{Tensor(n, cfg.state_width()), Tensor(n, 1, 0.5), Tensor(n, 1), Tensor(n, cfg.state_width()), Tensor(n, 1, 1.0)};
  for (std::size_t i = 0; i < n; ++i) {
    b.s(i, i) = 1.0;
    b.s2(i, (i + 1) % n) = 1.0;
    b.r[i] = rewards[i];
  }
  CriticLosses l;
  for (int k = 0; k < 1500; ++k) l = critic_update(ag, b, 0.0, rng);
  CHECK(l.q1 < 1e-4);
  CHECK(l.q2 < 1e-4);
  const Tensor q = q_value(ag.critic1, cfg, b.s, b.a);
  for (std::size_t i = 0; i < n; ++i) CHECK(q[i] == doctest::Approx(rewards[i]).epsilon(0.02).scale(1.0));
}

TEST_CASE("actor_update") {
  Rng rng(6);
  SacConfig cfg = tiny_config(1, 32);
  cfg.lr = 3e-3;
  SacAgent ag = SacAgent::create(cfg, rng);
  const Tensor s(64, cfg.state_width());

  SUBCASE("critics are untouched") {
    const SacAgent before = ag;
    Batch b{s, Tensor(64, 1), Tensor(64, 1), s, Tensor(64, 1)};
    actor_update(ag, b, 0.2, rng);
    CHECK(ag.critic1 == before.critic1);
    CHECK(ag.critic2 == before.critic2);
    CHECK(ag.target1 == before.target1);
    CHECK(!(ag.actor == before.actor));
  }

  SUBCASE("bandit optimum at 0.7") {
    // Fit the critics to Q(a) = -(a - 0.7)^2 on uniform actions, then let
    // the actor climb them.
    const std::size_t n = 256;
    for (int k = 0; k < 1500; ++k) {
      Batch b{Tensor(n, cfg.state_width()), Tensor(n, 1), Tensor(n, 1),
              Tensor(n, cfg.state_width()), Tensor(n, 1, 1.0)};
      for (std::size_t i = 0; i < n; ++i) {
        b.a[i] = rng.uniform();
        b.r[i] = -(b.a[i] - 0.7) * (b.a[i] - 0.7);
      }
      critic_update(ag, b, 0.0, rng);
    }
    Batch b{Tensor(n, cfg.state_width()), Tensor(n, 1), Tensor(n, 1), Tensor(n, cfg.state_width()), Tensor(n, 1)};
    for (int k = 0; k < 1000; ++k) actor_update(ag, b, 1e-4, rng);
    const double a = actor_deterministic(ag, Tensor(1, cfg.state_width()))[0];
    CHECK(a == doctest::Approx(0.7).epsilon(0.05 / 0.7));
  }

  SUBCASE("a dominant entropy weight widens the policy") {
    SacConfig c4 = tiny_config(4, 32);
    SacAgent a4 = SacAgent::create(c4, rng);
    const Tensor s4 = test_support::random_tensor(64, c4.state_width(), rng);
    Batch b{s4, Tensor(64, 4), Tensor(64, 1), s4, Tensor(64, 1)};
    auto median_log_std = [&] {
      const auto p = policy(a4, s4);
      return median(std::vector<double>(p.log_std.values().begin(), p.log_std.values().end()));
    };
    const double before = median_log_std();
    for (int k = 0; k < 200; ++k) actor_update(a4, b, 100.0, rng);
    CHECK(median_log_std() > before + 0.1);
  }
}

TEST_CASE("alpha_update moves toward the target entropy") {
  Rng rng(7);
  SacAgent ag = SacAgent::create(tiny_config(), rng);
  CHECK(ag.alpha_value() == doctest::Approx(0.2).epsilon(1e-12));
  // Entropy below target (log_prob high): temperature rises.
  const double up = alpha_update(ag, 10.0);
  CHECK(up > 0.2);
  SacAgent ag2 = SacAgent::create(tiny_config(), rng);
  CHECK(alpha_update(ag2, -10.0) < 0.2);
}

TEST_CASE("target_soft_update") {
  Rng rng(8);
  SacAgent ag = SacAgent::create(tiny_config(), rng);
  test_support::randomize(ag.critic1, rng, 0.5);
  test_support::randomize(ag.critic2, rng, 0.5);
  SUBCASE("tau one copies") {
    target_soft_update(ag, 1.0);
    CHECK(ag.target1 == ag.critic1);
    CHECK(ag.target2 == ag.critic2);
  }
  SUBCASE("1000 small steps land within 1 percent") {
    const double start = nn::ParameterSet::abs_difference(ag.target1, ag.critic1);
    for (int k = 0; k < 1000; ++k) target_soft_update(ag, 0.005);
    CHECK(nn::ParameterSet::abs_difference(ag.target1, ag.critic1) < 0.01 * start);
    CHECK(nn::ParameterSet::abs_difference(ag.target2, ag.critic2) < 0.01 * start);
  }
  SUBCASE("idempotent when equal") {
    target_soft_update(ag, 1.0);
    const auto t = ag.target1;
    target_soft_update(ag, 0.005);
    CHECK(nn::ParameterSet::abs_difference(ag.target1, t) < 1e-12);
  }
  CHECK_THROWS_AS(target_soft_update(ag, 0.0), ContractError);
}

TEST_CASE("actor and critic gradients match finite differences") {
  Rng rng(9);
  SacConfig cfg = tiny_config(2, 8);
  SacAgent ag = SacAgent::create(cfg, rng);
  test_support::randomize(ag.actor, rng, 0.4);
  test_support::randomize(ag.critic1, rng, 0.4);
  const Tensor s = test_support::random_tensor(4, cfg.state_width(), rng);
  const Tensor noise = test_support::random_tensor(4, 2, rng);
  const Tensor a = Tensor(4, 2, 0.3);

  CHECK(ag.actor.scalar_count() <= 1000);
  nn::LossBuilder actor_loss = [&](nn::Tape& tape, const nn::ParameterSet&) {
    auto smp = actor_sample(tape, ag, tape.constant(s), noise);
    return nn::sum(smp.log_prob) + nn::sum(nn::square(smp.a));
  };
  CHECK(nn::finite_diff_check(actor_loss, ag.actor, 1e-6).max_relative_error < 1e-4);

  CHECK(ag.critic1.scalar_count() <= 1000);
  const auto spec = ag.critic_spec();
  nn::LossBuilder critic_loss = [&](nn::Tape& tape, const nn::ParameterSet& ps) {
    nn::Var q = nn::Mlp::bind(ps, "q", spec).forward(tape, ps, tape.constant(nn::hstack(std::vector<Tensor>{s, a})));
    return nn::mean(nn::square(nn::add_scalar(q, -0.4)));
  };
  CHECK(nn::finite_diff_check(critic_loss, ag.critic1, 1e-6).max_relative_error < 1e-4);
}

TEST_CASE("sac_update bookkeeping") {
  Rng rng(10);
  SacAgent ag = SacAgent::create(tiny_config(), rng);
  const SacAgent before = ag;
  const Tensor s = test_support::random_tensor(16, ag.cfg.state_width(), rng);
  Batch b{s, Tensor(16, 4, 0.5), test_support::random_tensor(16, 1, rng), s, Tensor(16, 1)};
  auto st = sac_update(ag, b, rng);
  CHECK(ag.updates == 1);
  CHECK(std::isfinite(st.critic.q1));
  CHECK(st.alpha == ag.alpha_value());
  CHECK(!(ag.target1 == before.target1));
  for (double& v : b.r.values()) v = NAN;
  CHECK_THROWS_AS(sac_update(ag, b, rng), TrainingError);
}

TEST_CASE("relabel_experience") {
  Rng rng(11);
  SacConfig cfg;
  cfg.replay_capacity = 1000;
  TrajectoryBuffer tb(10);
  tb.add(make_episode(6, rng));
  tb.add(make_episode(6, rng));
  tb.add(make_episode(1, rng));
  tb.add(make_episode(9, rng));
  const std::vector<double> scale = {1, 1, 0.2, 0.2};
  gssm::GssmDims dims;
  Rng frng(12);
  auto filter = gssm::FilterParams::create(dims, frng);

  SUBCASE("counts and skipped episodes") {
    std::size_t skipped = 0;
    Rng r1(1);
    auto rb = relabel_experience(tb, &filter, cfg, scale, r1, &skipped);
    CHECK(skipped == 1);
    CHECK(rb.size() == 21);
  }
  SUBCASE("determinism") {
    Rng r1(1), r2(1);
    CHECK(relabel_experience(tb, &filter, cfg, scale, r1) == relabel_experience(tb, &filter, cfg, scale, r2));
  }
  SUBCASE("layout: next state of t is the state of t + 1") {
    Rng r1(1);
    auto rb = relabel_experience(tb, &filter, cfg, scale, r1);
    for (std::size_t t = 0; t + 1 < 6; ++t) {
      CHECK(rb.row(t).s2 == rb.row(t + 1).s);
    }
    const auto& e = tb.episode(0)[0];
    auto r0 = rb.row(0);
    CHECK(r0.s[2] == e.obs[2] * 0.2);
    CHECK(r0.s[12] == e.target[0]);
    CHECK(r0.a[1] == e.action[1]);
    CHECK(r0.r[0] == e.reward);
  }
  SUBCASE("vanilla mode leaves the latent slot at zero") {
    Rng r1(1);
    auto rb = relabel_experience(tb, nullptr, cfg, scale, r1);
    for (std::size_t i = 0; i < rb.size(); ++i) {
      auto row = rb.row(i);
      for (std::size_t k = 4; k < 12; ++k) {
        CHECK(row.s[k] == 0.0);
        CHECK(row.s2[k] == 0.0);
      }
    }
  }
  SUBCASE("a changed filter changes stored latents") {
    Rng r1(1), r2(1);
    auto before = relabel_experience(tb, &filter, cfg, scale, r1);
    auto changed = filter;
    test_support::randomize(changed.ps, frng, 0.3);
    auto after = relabel_experience(tb, &changed, cfg, scale, r2);
    double diff = 0.0;
    for (std::size_t i = 0; i < before.size(); ++i) {
      for (std::size_t k = 4; k < 12; ++k) diff += std::abs(before.row(i).s[k] - after.row(i).s[k]);
    }
    CHECK(diff > 1e-3);
  }
}
