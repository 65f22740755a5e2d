// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fesgssm/rng.hpp"

namespace fesgssm::arm {

inline constexpr std::size_t kJoints = 2;
inline constexpr std::size_t kMuscles = 4;
inline constexpr std::size_t kObsWidth = 4;

using JointVec = std::array<double, kJoints>;
using MuscleVec = std::array<double, kMuscles>;
using Observation = std::array<double, kObsWidth>;

double deg2rad(double deg);
double rad2deg(double rad);

struct JointLimits {
  double lo = 0.0;
  double hi = 0.0;
};

/// Gravity-free two-link planar arm. Link inertias are about the centre of
/// mass, which sits at mid-link.
struct ArmConfig {
  double l1 = 0.30, l2 = 0.33;
  double m1 = 2.0, m2 = 1.5;
  double i1 = 2.0 * 0.30 * 0.30 / 12.0;
  double i2 = 1.5 * 0.33 * 0.33 / 12.0;
  double damping_s = 0.3, damping_e = 0.3;
  JointLimits shoulder{deg2rad(-60.0), deg2rad(150.0)};
  JointLimits elbow{deg2rad(0.0), deg2rad(150.0)};
  std::size_t substeps = 10;
  double dt = 0.1;
  std::size_t episode_steps = 100;
  std::size_t retarget_step = 50;

  /// Throws ConfigError on non-positive constants or unordered limits.
  void validate() const;
};

/// Torque-equivalent muscle acting on one joint through a constant moment arm.
struct MuscleParams {
  std::string name;
  std::size_t joint = 0;  // 0 shoulder, 1 elbow
  int sign = 1;
  double f_max = 10.0;
  double tau = 0.1;
  double tau_fat = 30.0;
  double tau_rec = 60.0;
};

struct MuscleSet {
  std::array<MuscleParams, kMuscles> muscles;
  double phi_min = 0.2;
  bool freeze_fatigue = false;  // oracle runs with capacity held fixed

  void validate() const;
};

/// Brachialis (elbow +), Triceps medial (elbow -), Deltoid posterior
/// (shoulder -), Pectoralis major c (shoulder +). Action index order.
MuscleSet default_muscles();

struct ArmState {
  JointVec theta{};
  JointVec dtheta{};
  MuscleVec act{};
  MuscleVec phi{1.0, 1.0, 1.0, 1.0};

  friend bool operator==(const ArmState&, const ArmState&) = default;
};

struct Target {
  double shoulder = 0.0;
  double elbow = 0.0;

  friend bool operator==(const Target&, const Target&) = default;
};

std::string describe(const ArmState& s);

/// Exact solution of da/dt = (e - a) / tau over dt. Throws InputError when e
/// is outside [0, 1].
double activation_step(double a, double e, double tau, double dt);

/// Forward-Euler step of dphi/dt = -a phi / tau_fat + (1 - phi) / tau_rec,
/// clamped to [phi_min, 1].
double fatigue_step(double phi, double a, double tau_fat, double tau_rec, double dt, double phi_min = 0.2);

/// Equilibrium capacity under constant activation a.
double fatigue_equilibrium(double a, double tau_fat, double tau_rec);

JointVec muscle_torques(const ArmState& s, const MuscleSet& muscles);

/// Joint accelerations from M(q) q'' + C(q, q') q' + D q' = tau.
JointVec arm_dynamics(const JointVec& theta, const JointVec& dtheta, const JointVec& torque, const ArmConfig& cfg);

double kinetic_energy(const JointVec& theta, const JointVec& dtheta, const ArmConfig& cfg);

/// Advances the state by one control interval with `substeps` semi-implicit
/// Euler steps. Angles hitting a limit are clamped and their velocity
/// zeroed. Throws SimulationError on a non-finite result.
ArmState integrate(const ArmState& s, const MuscleVec& e, const ArmConfig& cfg, const MuscleSet& muscles,
                   std::size_t substeps);

Observation observe(const ArmState& s);

/// -sum of squared joint errors (rad) - mean excitation.
double reward(const JointVec& theta, const Target& target, const MuscleVec& e);

struct ResetRanges {
  JointLimits shoulder;
  JointLimits elbow;
  JointLimits phi{0.4, 1.0};

  static ResetRanges from(const ArmConfig& cfg);
};

struct ResetResult {
  ArmState state;
  Observation obs;
  Target target;
};

/// Random pose at rest, zero activation, random capacities, random target.
ResetResult env_reset(Rng& rng, const ResetRanges& ranges);

Target random_target(Rng& rng, const ArmConfig& cfg);

/// A fresh target exactly at the retarget step, otherwise nothing.
std::optional<Target> mid_episode_retarget(std::size_t step, Rng& rng, const ArmConfig& cfg);

struct StepResult {
  Observation obs;
  double reward = 0.0;
  bool done = false;
  bool retargeted = false;
};

/// One environment instance with its own random stream.
class ArmEnv {
 public:
  ArmEnv(ArmConfig cfg, MuscleSet muscles, Rng rng);

  Observation reset();
  Observation reset(const ResetRanges& ranges);
  /// Resets to a given state and target without consuming randomness.
  Observation reset_to(const ArmState& state, const Target& target);

  /// The reward scores the post-step pose against the target active during
  /// the step; a retarget takes effect for the next step.
  StepResult step(const MuscleVec& e);

  const ArmState& state() const { return state_; }
  const Target& target() const { return target_; }
  void set_target(const Target& t) { target_ = t; }
  std::size_t step_index() const { return step_; }
  const ArmConfig& config() const { return cfg_; }
  const MuscleSet& muscles() const { return muscles_; }
  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }
  /// When false, no random retarget happens mid-episode.
  void set_retargeting(bool on) { retarget_ = on; }

 private:
  ArmConfig cfg_;
  MuscleSet muscles_;
  Rng rng_;
  ArmState state_;
  Target target_;
  std::size_t step_ = 0;
  bool retarget_ = true;
};

struct TrajectoryRow {
  double t = 0.0;
  ArmState state;
  MuscleVec e{};
  Target target;
  double reward = 0.0;
};

void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryRow>& rows);

}  // namespace fesgssm::arm
