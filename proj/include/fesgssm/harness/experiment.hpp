// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fesgssm/arm/arm.hpp"
#include "fesgssm/gssm/trainer.hpp"
#include "fesgssm/harness/config.hpp"
#include "fesgssm/sac/sac.hpp"

namespace fesgssm::harness {

/// One row of metrics.csv. Training rows carry the episode return and mean
/// losses; evaluation rows carry the RMSE.
struct MetricsRow {
  std::uint64_t seed = 0;
  sac::Mode mode = sac::Mode::gssm;
  std::size_t episode = 0;  // 1-based count of finished training episodes
  bool eval = false;
  double episode_return = 0.0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double alpha = 0.0;
  double gssm_loss = 0.0;
  double rmse_deg = 0.0;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

struct MetricsLog {
  std::vector<MetricsRow> rows;

  std::vector<MetricsRow> evals() const;
  friend bool operator==(const MetricsLog&, const MetricsLog&) = default;
};

/// Header comment lines with the source hash and the full config.
std::string provenance_header(const ExperimentConfig& cfg);
void write_metrics_csv(std::ostream& out, const MetricsLog& log, const ExperimentConfig& cfg);

/// Call counters used to check mode isolation and loop accounting.
struct Counters {
  std::uint64_t gssm_updates = 0;
  std::uint64_t gssm_constructions = 0;
  std::uint64_t relabels = 0;
  std::uint64_t evaluations = 0;
  std::uint64_t sac_updates = 0;

  friend bool operator==(const Counters&, const Counters&) = default;
};

/// All mutable state of one training run.
struct RunState {
  ExperimentConfig cfg;
  std::uint64_t seed = 0;
  std::size_t next_episode = 0;
  sac::SacAgent agent;
  std::optional<gssm::GssmModel> model;
  std::optional<gssm::GssmTrainerState> gssm_state;
  sac::TrajectoryBuffer traj;
  sac::ReplayBuffer replay;
  Rng env_rng, act_rng, update_rng, filter_rng, gssm_rng, relabel_rng;
  MetricsLog metrics;
  Counters counters;
};

/// Fresh state for (cfg, seed). Builds the GSSM only in gssm mode.
RunState init_run(const ExperimentConfig& cfg, std::uint64_t seed);

gssm::GssmModel make_arm_gssm(const ExperimentConfig& cfg, Rng& rng);

/// Runs one training episode plus, on the cadence, the GSSM update (gssm
/// mode), the replay relabel, and an evaluation.
void run_episode(RunState& st);

/// Runs episodes until `until_episode` (default: cfg.episodes) have
/// finished. On a training or simulation error the state is checkpointed to
/// `failure_checkpoint` (when non-empty) and the error is rethrown with the
/// episode index.
void run_training(RunState& st, std::optional<std::size_t> until_episode = std::nullopt,
                  const std::string& failure_checkpoint = "");

/// Batch policy on RL states (rows) returning excitations in [0, 1].
using PolicyFn = std::function<nn::Tensor(const nn::Tensor& states)>;

PolicyFn deterministic_policy(const sac::SacAgent& agent);

/// Squared-error accumulator for joint-angle RMSE in degrees.
struct RmseAccumulator {
  double sum_sq = 0.0;
  std::size_t count = 0;

  void add(const arm::JointVec& theta, const arm::Target& target);
  double rmse_deg() const;
};

/// RMSE over `n_episodes` fresh episodes (both joints, all steps), run as
/// one batch with exploration off. Environments and filter noise come from
/// streams derived from `eval_seed`, so equal seeds give equal results.
double evaluate_rmse(const PolicyFn& policy, const gssm::FilterParams* filter, const ExperimentConfig& cfg,
                     std::size_t n_episodes, std::uint64_t eval_seed);
double evaluate_rmse(const sac::SacAgent& agent, const gssm::FilterParams* filter, const ExperimentConfig& cfg,
                     std::size_t n_episodes, std::uint64_t eval_seed);

/// Piecewise-linear joint-angle schedule in degrees; repeated knot times
/// give steps.
struct TrackingSchedule {
  std::vector<double> t;
  std::vector<double> shoulder_deg;
  std::vector<double> elbow_deg;

  double duration() const { return t.back(); }
  /// Target in radians at time `time`.
  arm::Target at(double time) const;
};

/// CSV with header t,shoulder_deg,elbow_deg; times non-decreasing from 0.
TrackingSchedule parse_schedule(std::istream& in);
TrackingSchedule load_schedule(const std::string& path);

struct TrackingResult {
  std::vector<arm::TrajectoryRow> rows;
  double rmse_deg = 0.0;
  std::vector<double> segment_rmse_deg;  // one per 20 s segment
};

/// 60 s (or schedule duration) of closed-loop tracking from rest at the
/// first schedule pose with full capacity; fatigue accumulates throughout.
/// The target at step k is the schedule at the start of the step.
TrackingResult run_tracking_trial(const PolicyFn& policy, const gssm::FilterParams* filter,
                                  const ExperimentConfig& cfg, const TrackingSchedule& schedule,
                                  std::uint64_t seed, double segment_seconds = 20.0);

/// Outcome of one (seed, mode) arm of the A/B experiment.
struct AbRun {
  std::uint64_t seed = 0;
  sac::Mode mode = sac::Mode::gssm;
  bool failed = false;
  std::string error;
  std::vector<std::pair<std::size_t, double>> curve;  // (episode, rmse)
  double final_rmse = 0.0;
  double tracking_rmse = 0.0;
  std::vector<double> tracking_segments;
};

struct AbModeSummary {
  sac::Mode mode = sac::Mode::gssm;
  std::size_t ok_seeds = 0;
  double final_mean = 0.0;
  double final_std = 0.0;
  double median_tracking_delta = 0.0;  // last segment minus first
  double median_tracking_rmse = 0.0;
};

struct AbReport {
  std::vector<AbRun> runs;
  AbModeSummary vanilla;
  AbModeSummary gssm;
};

AbModeSummary summarise_mode(const std::vector<AbRun>& runs, sac::Mode mode);

/// Trains both modes on every seed (matched environment streams), tracks
/// the schedule with each trained agent, and writes learning_curves.csv,
/// report.csv, tracking_<mode>_<seed>.csv, and config.resolved into
/// `out_dir` when non-empty. With `force_mode` both labels train that mode
/// (the null A/B check). A failing run is recorded and left out of the
/// summaries.
AbReport run_ab_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                           std::optional<sac::Mode> force_mode = std::nullopt);

void write_learning_curves_csv(std::ostream& out, const AbReport& rep, const ExperimentConfig& cfg);
void write_ab_report_csv(std::ostream& out, const AbReport& rep, const ExperimentConfig& cfg);

}  // namespace fesgssm::harness
