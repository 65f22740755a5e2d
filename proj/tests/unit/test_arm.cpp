// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "fesgssm/arm/arm.hpp"
#include "fesgssm/errors.hpp"

using namespace fesgssm;
using namespace fesgssm::arm;

namespace {

// Fine-grid RK4 integration of the fatigue ODE under constant activation.
double fatigue_rk4(double phi, double a, double tau_fat, double tau_rec, double T, std::size_t n) {
  auto f = [&](double p) { return -a * p / tau_fat + (1.0 - p) / tau_rec; };
  const double h = T / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double k1 = f(phi), k2 = f(phi + 0.5 * h * k1), k3 = f(phi + 0.5 * h * k2), k4 = f(phi + h * k3);
    phi += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return phi;
}

ArmState mid_pose() {
  ArmState s;
  s.theta = {deg2rad(40.0), deg2rad(70.0)};
  return s;
}

// Theta after one control step integrated with n substeps.
JointVec one_step(const ArmState& s, const MuscleVec& e, std::size_t n) {
  const ArmConfig cfg;
  return integrate(s, e, cfg, default_muscles(), n).theta;
}

double joint_distance(const JointVec& a, const JointVec& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

}  // namespace

TEST_CASE("activation_step") {
  CHECK(activation_step(0.0, 1.0, 0.1, 0.1) == doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-15));
  CHECK(std::abs(activation_step(0.0, 1.0, 0.1, 0.1) - 0.6321) < 1e-4);
  CHECK(activation_step(0.37, 0.37, 0.1, 0.05) == 0.37);
  CHECK(activation_step(1.0, 0.0, 0.1, 1e3) < 1e-12);
  // Two half steps compose to one full step since the update is exact.
  const double half = activation_step(activation_step(0.2, 0.9, 0.1, 0.03), 0.9, 0.1, 0.03);
  CHECK(std::abs(half - activation_step(0.2, 0.9, 0.1, 0.06)) < 1e-15);
  CHECK_THROWS_AS(activation_step(0.0, 1.2, 0.1, 0.1), InputError);
  CHECK_THROWS_AS(activation_step(0.0, -0.1, 0.1, 0.1), InputError);
}

TEST_CASE("fatigue_step") {
  CHECK(fatigue_step(1.0, 0.0, 30, 60, 0.01) == 1.0);
  double phi = 0.5;
  for (int i = 0; i < 100; ++i) {
    const double next = fatigue_step(phi, 0.0, 30, 60, 0.1);
    CHECK(next > phi);
    phi = next;
  }
  SUBCASE("constant activation converges to the declared equilibrium") {
    const double eq = fatigue_equilibrium(1.0, 30, 60);
    CHECK(eq == doctest::Approx((1.0 / 60) / (1.0 / 30 + 1.0 / 60)));
    double p = 1.0;
    for (int i = 0; i < 200000; ++i) p = fatigue_step(p, 1.0, 30, 60, 0.01, 0.2);
    CHECK(std::abs(p - eq) < 1e-9);
  }
  SUBCASE("Euler trajectory follows a fine RK4 oracle") {
    double p = 1.0;
    for (int i = 0; i < 1000; ++i) p = fatigue_step(p, 1.0, 30, 60, 0.01, 0.0);
    CHECK(std::abs(p - fatigue_rk4(1.0, 1.0, 30, 60, 10.0, 100000)) < 1e-4);
  }
  SUBCASE("monotone until the equilibrium") {
    const double eq = fatigue_equilibrium(1.0, 30, 60);
    double p = 1.0;
    while (p - eq > 1e-6) {
      const double next = fatigue_step(p, 1.0, 30, 60, 0.01);
      REQUIRE(next <= p);
      p = next;
    }
  }
  CHECK(fatigue_step(0.21, 1.0, 0.01, 1e9, 1.0) == 0.2);
}

TEST_CASE("muscle_torques") {
  const auto muscles = default_muscles();
  ArmState s;
  CHECK(muscle_torques(s, muscles) == JointVec{0.0, 0.0});
  s.act = {1.0, 0.0, 0.0, 0.0};
  auto m5 = muscles;
  m5.muscles[0].f_max = 5.0;
  CHECK(muscle_torques(s, m5) == JointVec{0.0, 5.0});
  s.act = {0.3, 0.6, 0.2, 0.9};
  const JointVec full = muscle_torques(s, muscles);
  s.phi = {0.5, 0.5, 0.5, 0.5};
  const JointVec half = muscle_torques(s, muscles);
  CHECK(half[0] == doctest::Approx(0.5 * full[0]));
  CHECK(half[1] == doctest::Approx(0.5 * full[1]));
  CHECK(full[0] == doctest::Approx(15.0 * (0.9 - 0.2)));
  CHECK(full[1] == doctest::Approx(10.0 * (0.3 - 0.6)));
}

TEST_CASE("arm_dynamics") {
  ArmConfig cfg;
  CHECK(arm_dynamics({0.4, 0.9}, {0, 0}, {0, 0}, cfg) == JointVec{0.0, 0.0});

  SUBCASE("M(q) times the acceleration reproduces the applied torque at rest") {
    // Finite-difference the kinetic energy to recover M independently.
    const JointVec q{0.3, 1.1}, tau{1.2, -0.7};
    const JointVec acc = arm_dynamics(q, {0, 0}, tau, cfg);
    const double m11 = 2.0 * kinetic_energy(q, {1, 0}, cfg);
    const double m22 = 2.0 * kinetic_energy(q, {0, 1}, cfg);
    const double m12 = kinetic_energy(q, {1, 1}, cfg) - 0.5 * m11 - 0.5 * m22;
    CHECK(m11 * acc[0] + m12 * acc[1] == doctest::Approx(tau[0]).epsilon(1e-12));
    CHECK(m12 * acc[0] + m22 * acc[1] == doctest::Approx(tau[1]).epsilon(1e-12));
  }
  SUBCASE("energy is conserved without damping or torque") {
    cfg.damping_s = cfg.damping_e = 0.0;
    cfg.shoulder = {-100, 100};
    cfg.elbow = {-100, 100};
    JointVec q{0.2, 0.8}, dq{1.5, -2.0};
    const double e0 = kinetic_energy(q, dq, cfg);
    const double h = 1e-3;
    for (int i = 0; i < 1000; ++i) {
      const JointVec a = arm_dynamics(q, dq, {0, 0}, cfg);
      for (int j = 0; j < 2; ++j) {
        dq[j] += h * a[j];
        q[j] += h * dq[j];
      }
    }
    CHECK(std::abs(kinetic_energy(q, dq, cfg) - e0) / e0 < 1e-3);
  }
  SUBCASE("damping dissipates energy monotonically") {
    ArmState s = mid_pose();
    s.dtheta = {2.0, -1.5};
    double prev = kinetic_energy(s.theta, s.dtheta, cfg);
    for (int i = 0; i < 30; ++i) {
      s = integrate(s, {0, 0, 0, 0}, cfg, default_muscles(), 10);
      const double e = kinetic_energy(s.theta, s.dtheta, cfg);
      CHECK(e <= prev);
      prev = e;
    }
  }
}

TEST_CASE("integrate and step") {
  const ArmConfig cfg;
  const auto muscles = default_muscles();

  SUBCASE("zero excitation from rest stays at rest") {
    const ArmState s = mid_pose();
    const ArmState n = integrate(s, {0, 0, 0, 0}, cfg, muscles, 10);
    CHECK(joint_distance(n.theta, s.theta) < 1e-9);
  }
  SUBCASE("determinism") {
    ArmState s = mid_pose();
    s.act = {0.2, 0.1, 0.4, 0.3};
    CHECK(integrate(s, {0.5, 0.1, 0.9, 0.3}, cfg, muscles, 10) == integrate(s, {0.5, 0.1, 0.9, 0.3}, cfg, muscles, 10));
  }
  SUBCASE("step halving") {
    const ArmState s = mid_pose();
    const MuscleVec e{0.5, 0.0, 0.0, 0.5};
    const JointVec t10 = one_step(s, e, 10), t20 = one_step(s, e, 20), t40 = one_step(s, e, 40);
    const JointVec ref = one_step(s, e, 20480);
    CHECK(joint_distance(t10, t20) < 1e-4);
    const double ratio = joint_distance(t10, ref) / joint_distance(t20, ref);
    MESSAGE("change " << joint_distance(t10, t20) << " rad, ratio " << ratio << ", next " << joint_distance(t20, ref) / joint_distance(t40, ref));
    CHECK(ratio >= 1.7);
    CHECK(ratio <= 2.3);
  }
  SUBCASE("joint limits clamp and stop the joint") {
    ArmState s;
    s.theta = {cfg.shoulder.hi - 1e-3, cfg.elbow.hi - 1e-3};
    s.act = {1, 0, 0, 1};
    const ArmState n = integrate(s, {1, 0, 0, 1}, cfg, muscles, 10);
    CHECK(n.theta[0] == cfg.shoulder.hi);
    CHECK(n.theta[1] == cfg.elbow.hi);
    CHECK(n.dtheta == JointVec{0.0, 0.0});
  }
  SUBCASE("non-finite state raises a simulation error with a dump") {
    ArmState s = mid_pose();
    s.dtheta[0] = std::numeric_limits<double>::infinity();
    try {
      integrate(s, {0, 0, 0, 0}, cfg, muscles, 10);
      FAIL("expected SimulationError");
    } catch (const SimulationError& err) {
      CHECK(std::string(err.what()).find("before: theta=") != std::string::npos);
    }
  }
  CHECK_THROWS_AS(integrate(mid_pose(), {0, 0, 1.5, 0}, cfg, muscles, 10), InputError);
}

TEST_CASE("reward") {
  CHECK(reward({0.3, 0.4}, {0.3, 0.4}, {0, 0, 0, 0}) == 0.0);
  CHECK(reward({0.4, 0.5}, {0.3, 0.4}, {0.5, 0.5, 0.5, 0.5}) == doctest::Approx(-0.52).epsilon(1e-12));
  CHECK(reward({0.1, 0.2}, {0.3, 0.9}, {0.1, 0.2, 0.3, 0.4}) == reward({0.1, 0.2}, {0.3, 0.9}, {0.4, 0.3, 0.1, 0.2}));
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const MuscleVec e{rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
    CHECK(reward({rng.uniform(-2, 2), rng.uniform(-2, 2)}, {rng.uniform(-2, 2), rng.uniform(-2, 2)}, e) <= 0.0);
  }
}

TEST_CASE("env_reset") {
  const ArmConfig cfg;
  const auto ranges = ResetRanges::from(cfg);
  Rng a(4), b(4);
  const auto ra = env_reset(a, ranges), rb = env_reset(b, ranges);
  CHECK(ra.state == rb.state);
  CHECK(ra.target == rb.target);
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const auto r = env_reset(rng, ranges);
    for (double p : r.state.phi) CHECK((p >= 0.4 && p <= 1.0));
    CHECK((r.state.theta[0] >= cfg.shoulder.lo && r.state.theta[0] <= cfg.shoulder.hi));
    CHECK((r.state.theta[1] >= cfg.elbow.lo && r.state.theta[1] <= cfg.elbow.hi));
    CHECK((r.target.shoulder >= cfg.shoulder.lo && r.target.shoulder <= cfg.shoulder.hi));
    CHECK(r.state.dtheta == JointVec{0, 0});
    CHECK(r.state.act == MuscleVec{0, 0, 0, 0});
  }
  const ResetRanges point{.shoulder = {0.5, 0.5}, .elbow = {1.0, 1.0}, .phi = {0.7, 0.7}};
  const auto p = env_reset(rng, point);
  CHECK(p.state.theta == JointVec{0.5, 1.0});
  CHECK(p.state.phi == MuscleVec{0.7, 0.7, 0.7, 0.7});
  CHECK(p.target == Target{0.5, 1.0});
}

TEST_CASE("mid_episode_retarget") {
  const ArmConfig cfg;
  Rng rng(6), again(6);
  CHECK_FALSE(mid_episode_retarget(49, rng, cfg).has_value());
  CHECK_FALSE(mid_episode_retarget(0, rng, cfg).has_value());
  Rng r1(7), r2(7);
  const auto t = mid_episode_retarget(50, r1, cfg);
  REQUIRE(t.has_value());
  CHECK(*t == *mid_episode_retarget(50, r2, cfg));
  CHECK((t->shoulder >= cfg.shoulder.lo && t->shoulder <= cfg.shoulder.hi));
  CHECK((t->elbow >= cfg.elbow.lo && t->elbow <= cfg.elbow.hi));

  ArmEnv env(cfg, default_muscles(), Rng(8));
  env.reset();
  const Target first = env.target();
  std::size_t retargets = 0, steps = 0;
  StepResult r;
  do {
    r = env.step({0.1, 0.1, 0.1, 0.1});
    ++steps;
    if (r.retargeted) {
      ++retargets;
      CHECK(env.step_index() == 50);
    }
  } while (!r.done);
  CHECK(steps == 100);
  CHECK(retargets == 1);
  CHECK_FALSE(env.target() == first);
}

TEST_CASE("hidden fatigue changes successors but not observations") {
  const ArmConfig cfg;
  ArmState fresh = mid_pose(), tired = mid_pose();
  tired.phi = {0.4, 0.4, 0.4, 0.4};
  CHECK(observe(fresh) == observe(tired));
  const MuscleVec e{0.6, 0.0, 0.0, 0.6};
  const auto a = integrate(fresh, e, cfg, default_muscles(), 10);
  const auto b = integrate(tired, e, cfg, default_muscles(), 10);
  CHECK(joint_distance(a.theta, b.theta) > 1e-3);
}

TEST_CASE("random fuzz keeps states in range") {
  ArmEnv env(ArmConfig{}, default_muscles(), Rng(9));
  Rng pick(10);
  env.reset();
  for (int i = 0; i < 20000; ++i) {
    const MuscleVec e{pick.uniform(), pick.uniform(), pick.uniform(), pick.uniform()};
    const auto r = env.step(e);
    const auto& s = env.state();
    for (double a : s.act) REQUIRE((a >= 0.0 && a <= 1.0));
    for (double p : s.phi) REQUIRE((p >= 0.2 && p <= 1.0));
    REQUIRE(std::isfinite(r.reward));
    if (r.done) env.reset();
  }
}

TEST_CASE("trajectory csv") {
  std::ostringstream os;
  TrajectoryRow row;
  row.t = 0.1;
  row.state = mid_pose();
  write_trajectory_csv(os, {row, row});
  const std::string text = os.str();
  CHECK(text.rfind("t,theta_s,theta_e,dtheta_s,dtheta_e,e1,e2,e3,e4,a1,a2,a3,a4,phi1,phi2,phi3,phi4,target_s,target_e,r\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
}

TEST_CASE("config validation") {
  ArmConfig bad;
  bad.l1 = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  ArmConfig unordered;
  unordered.elbow = {1.0, 0.5};
  CHECK_THROWS_AS(unordered.validate(), ConfigError);
  auto m = default_muscles();
  m.muscles[2].sign = 0;
  CHECK_THROWS_AS(m.validate(), ConfigError);
  CHECK_NOTHROW(ArmConfig{}.validate());
  CHECK_NOTHROW(default_muscles().validate());
}
