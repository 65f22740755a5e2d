// SPDX-License-Identifier: Apache-2.0
#include "fesgssm/arm/arm.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <sstream>

#include "fesgssm/errors.hpp"

namespace fesgssm::arm {

double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }
double rad2deg(double rad) { return rad * 180.0 / std::numbers::pi; }

void ArmConfig::validate() const {
  auto positive = [](double v, const char* what) {
    if (!(v > 0.0)) throw ConfigError(std::string("arm: ") + what + " must be > 0");
  };
  positive(l1, "l1");
  positive(l2, "l2");
  positive(m1, "m1");
  positive(m2, "m2");
  positive(i1, "i1");
  positive(i2, "i2");
  positive(dt, "dt");
  if (damping_s < 0.0 || damping_e < 0.0) throw ConfigError("arm: damping must be >= 0");
  if (!(shoulder.lo < shoulder.hi) || !(elbow.lo < elbow.hi)) throw ConfigError("arm: joint limits must be ordered");
  if (substeps == 0) throw ConfigError("arm: substeps must be >= 1");
  if (episode_steps == 0) throw ConfigError("arm: episode_steps must be >= 1");
}

void MuscleSet::validate() const {
  for (const auto& m : muscles) {
    if (!(m.tau > 0.0) || !(m.f_max > 0.0) || !(m.tau_fat > 0.0) || !(m.tau_rec > 0.0)) {
      throw ConfigError("muscle " + m.name + ": time constants and strength must be > 0");
    }
    if (m.joint >= kJoints) throw ConfigError("muscle " + m.name + ": joint must be 0 or 1");
    if (m.sign != 1 && m.sign != -1) throw ConfigError("muscle " + m.name + ": sign must be +1 or -1");
  }
  if (!(phi_min > 0.0 && phi_min < 1.0)) throw ConfigError("phi_min must lie in (0, 1)");
}

MuscleSet default_muscles() {
  MuscleSet set;
  set.muscles[0] = {.name = "brachialis", .joint = 1, .sign = 1, .f_max = 10.0};
  set.muscles[1] = {.name = "triceps_medial", .joint = 1, .sign = -1, .f_max = 10.0};
  set.muscles[2] = {.name = "deltoid_posterior", .joint = 0, .sign = -1, .f_max = 15.0};
  set.muscles[3] = {.name = "pectoralis_major_c", .joint = 0, .sign = 1, .f_max = 15.0};
  return set;
}

std::string describe(const ArmState& s) {
  std::ostringstream os;
  os << std::setprecision(17) << "theta=[" << s.theta[0] << ", " << s.theta[1] << "] dtheta=[" << s.dtheta[0] << ", "
     << s.dtheta[1] << "] act=[";
  for (std::size_t m = 0; m < kMuscles; ++m) os << (m ? ", " : "") << s.act[m];
  os << "] phi=[";
  for (std::size_t m = 0; m < kMuscles; ++m) os << (m ? ", " : "") << s.phi[m];
  os << "]";
  return os.str();
}

double activation_step(double a, double e, double tau, double dt) {
  if (!(e >= 0.0 && e <= 1.0)) throw InputError("excitation must lie in [0, 1], got " + std::to_string(e));
  const double next = e + (a - e) * std::exp(-dt / tau);
  return std::clamp(next, 0.0, 1.0);
}

double fatigue_step(double phi, double a, double tau_fat, double tau_rec, double dt, double phi_min) {
  const double dphi = -a * phi / tau_fat + (1.0 - phi) / tau_rec;
  return std::clamp(phi + dt * dphi, phi_min, 1.0);
}

double fatigue_equilibrium(double a, double tau_fat, double tau_rec) {
  return (1.0 / tau_rec) / (a / tau_fat + 1.0 / tau_rec);
}

JointVec muscle_torques(const ArmState& s, const MuscleSet& muscles) {
  JointVec tq{};
  for (std::size_t m = 0; m < kMuscles; ++m) {
    const auto& p = muscles.muscles[m];
    tq[p.joint] += p.sign * p.f_max * s.act[m] * s.phi[m];
  }
  return tq;
}

namespace {

struct MassMatrix {
  double m11, m12, m22, h;
};

MassMatrix mass_matrix(double theta_e, const ArmConfig& c) {
  const double lc1 = 0.5 * c.l1, lc2 = 0.5 * c.l2;
  const double cs = std::cos(theta_e);
  return {.m11 = c.i1 + c.i2 + c.m1 * lc1 * lc1 + c.m2 * (c.l1 * c.l1 + lc2 * lc2 + 2.0 * c.l1 * lc2 * cs),
          .m12 = c.i2 + c.m2 * (lc2 * lc2 + c.l1 * lc2 * cs),
          .m22 = c.i2 + c.m2 * lc2 * lc2,
          .h = c.m2 * c.l1 * lc2 * std::sin(theta_e)};
}

}  // namespace

JointVec arm_dynamics(const JointVec& theta, const JointVec& dtheta, const JointVec& torque, const ArmConfig& cfg) {
  const MassMatrix M = mass_matrix(theta[1], cfg);
  const double qs = dtheta[0], qe = dtheta[1];
  const double rhs0 = torque[0] + M.h * (2.0 * qs * qe + qe * qe) - cfg.damping_s * qs;
  const double rhs1 = torque[1] - M.h * qs * qs - cfg.damping_e * qe;
  const double det = M.m11 * M.m22 - M.m12 * M.m12;
  return {(M.m22 * rhs0 - M.m12 * rhs1) / det, (M.m11 * rhs1 - M.m12 * rhs0) / det};
}

double kinetic_energy(const JointVec& theta, const JointVec& dtheta, const ArmConfig& cfg) {
  const MassMatrix M = mass_matrix(theta[1], cfg);
  return 0.5 * (M.m11 * dtheta[0] * dtheta[0] + 2.0 * M.m12 * dtheta[0] * dtheta[1] + M.m22 * dtheta[1] * dtheta[1]);
}

ArmState integrate(const ArmState& s, const MuscleVec& e, const ArmConfig& cfg, const MuscleSet& muscles,
                   std::size_t substeps) {
  for (double v : e) {
    if (!(v >= 0.0 && v <= 1.0)) throw InputError("excitation must lie in [0, 1], got " + std::to_string(v));
  }
  const double h = cfg.dt / static_cast<double>(substeps);
  const JointLimits limits[kJoints] = {cfg.shoulder, cfg.elbow};
  ArmState x = s;
  for (std::size_t k = 0; k < substeps; ++k) {
    const JointVec acc = arm_dynamics(x.theta, x.dtheta, muscle_torques(x, muscles), cfg);
    for (std::size_t j = 0; j < kJoints; ++j) {
      x.dtheta[j] += h * acc[j];
      x.theta[j] += h * x.dtheta[j];
      if (x.theta[j] < limits[j].lo) {
        x.theta[j] = limits[j].lo;
        x.dtheta[j] = 0.0;
      } else if (x.theta[j] > limits[j].hi) {
        x.theta[j] = limits[j].hi;
        x.dtheta[j] = 0.0;
      }
    }
    for (std::size_t m = 0; m < kMuscles; ++m) {
      const auto& p = muscles.muscles[m];
      if (!muscles.freeze_fatigue) x.phi[m] = fatigue_step(x.phi[m], x.act[m], p.tau_fat, p.tau_rec, h, muscles.phi_min);
      x.act[m] = activation_step(x.act[m], e[m], p.tau, h);
    }
  }
  const bool finite = std::isfinite(x.theta[0]) && std::isfinite(x.theta[1]) && std::isfinite(x.dtheta[0]) &&
                      std::isfinite(x.dtheta[1]);
  if (!finite) throw SimulationError("non-finite arm state; before: " + describe(s) + "; after: " + describe(x));
  return x;
}

Observation observe(const ArmState& s) { return {s.theta[0], s.theta[1], s.dtheta[0], s.dtheta[1]}; }

double reward(const JointVec& theta, const Target& target, const MuscleVec& e) {
  const double ds = theta[0] - target.shoulder, de = theta[1] - target.elbow;
  double mean_e = 0.0;
  for (double v : e) mean_e += v;
  mean_e /= static_cast<double>(kMuscles);
  return -(ds * ds + de * de) - mean_e;
}

ResetRanges ResetRanges::from(const ArmConfig& cfg) { return {.shoulder = cfg.shoulder, .elbow = cfg.elbow}; }

ResetResult env_reset(Rng& rng, const ResetRanges& r) {
  ResetResult out;
  out.state.theta = {rng.uniform(r.shoulder.lo, r.shoulder.hi), rng.uniform(r.elbow.lo, r.elbow.hi)};
  for (double& p : out.state.phi) p = rng.uniform(r.phi.lo, r.phi.hi);
  out.target = {rng.uniform(r.shoulder.lo, r.shoulder.hi), rng.uniform(r.elbow.lo, r.elbow.hi)};
  out.obs = observe(out.state);
  return out;
}

Target random_target(Rng& rng, const ArmConfig& cfg) {
  const double s = rng.uniform(cfg.shoulder.lo, cfg.shoulder.hi);
  return {s, rng.uniform(cfg.elbow.lo, cfg.elbow.hi)};
}

std::optional<Target> mid_episode_retarget(std::size_t step, Rng& rng, const ArmConfig& cfg) {
  if (step != cfg.retarget_step) return std::nullopt;
  return random_target(rng, cfg);
}

ArmEnv::ArmEnv(ArmConfig cfg, MuscleSet muscles, Rng rng)
    : cfg_(std::move(cfg)), muscles_(std::move(muscles)), rng_(std::move(rng)) {
  cfg_.validate();
  muscles_.validate();
}

Observation ArmEnv::reset() { return reset(ResetRanges::from(cfg_)); }

Observation ArmEnv::reset(const ResetRanges& ranges) {
  auto r = env_reset(rng_, ranges);
  state_ = r.state;
  target_ = r.target;
  step_ = 0;
  return r.obs;
}

Observation ArmEnv::reset_to(const ArmState& state, const Target& target) {
  state_ = state;
  target_ = target;
  step_ = 0;
  return observe(state_);
}

StepResult ArmEnv::step(const MuscleVec& e) {
  state_ = integrate(state_, e, cfg_, muscles_, cfg_.substeps);
  StepResult out;
  out.obs = observe(state_);
  out.reward = reward(state_.theta, target_, e);
  ++step_;
  out.done = step_ >= cfg_.episode_steps;
  if (retarget_ && !out.done) {
    if (auto t = mid_episode_retarget(step_, rng_, cfg_)) {
      target_ = *t;
      out.retargeted = true;
    }
  }
  return out;
}

void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryRow>& rows) {
  out << "t,theta_s,theta_e,dtheta_s,dtheta_e,e1,e2,e3,e4,a1,a2,a3,a4,phi1,phi2,phi3,phi4,target_s,target_e,r\n";
  out << std::setprecision(10);
  for (const auto& row : rows) {
    const auto& s = row.state;
    out << row.t << ',' << s.theta[0] << ',' << s.theta[1] << ',' << s.dtheta[0] << ',' << s.dtheta[1];
    for (double v : row.e) out << ',' << v;
    for (double v : s.act) out << ',' << v;
    for (double v : s.phi) out << ',' << v;
    out << ',' << row.target.shoulder << ',' << row.target.elbow << ',' << row.reward << '\n';
  }
}

}  // namespace fesgssm::arm
