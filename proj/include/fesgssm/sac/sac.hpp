// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "fesgssm/gssm/filter.hpp"
#include "fesgssm/nn/adam.hpp"
#include "fesgssm/nn/layers.hpp"
#include "fesgssm/rng.hpp"

namespace fesgssm::sac {

enum class Mode { vanilla, gssm };

Mode parse_mode(const std::string& s);
std::string to_string(Mode m);

struct SacConfig {
  std::size_t obs = 4;
  std::size_t latent = 8;
  std::size_t target = 2;
  std::size_t action = 4;
  std::size_t hidden = 256;
  double gamma = 0.99;
  double lr = 3e-4;
  double tau = 0.005;
  std::size_t batch = 256;
  double init_alpha = 0.2;
  double target_entropy = -4.0;
  double log_std_min = -20.0;
  double log_std_max = 2.0;
  std::size_t replay_capacity = 100000;
  std::size_t trajectory_capacity = 500;

  std::size_t state_width() const { return obs + latent + target; }
  void validate() const;
};

/// [o; x_mean or zeros; c] as one row. Throws DimensionError on widths
/// that do not fit the mode, ContractError on non-finite entries.
nn::Tensor build_rl_state(std::span<const double> o, const std::optional<std::span<const double>>& latent_mean,
                          std::span<const double> c, const SacConfig& cfg);

/// Raw interaction record; never holds latents.
struct ExperienceTuple {
  std::vector<double> obs;
  std::vector<double> target;
  std::vector<double> action;
  double reward = 0.0;
  std::vector<double> next_obs;
  std::vector<double> next_target;
  bool done = false;

  friend bool operator==(const ExperienceTuple&, const ExperienceTuple&) = default;
};

using Episode = std::vector<ExperienceTuple>;

/// FIFO store of whole episodes.
class TrajectoryBuffer {
 public:
  explicit TrajectoryBuffer(std::size_t capacity_episodes = 500);

  /// Throws ContractError on an empty episode.
  void add(Episode episode);
  std::size_t size() const { return episodes_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t tuple_count() const;
  const Episode& episode(std::size_t i) const { return episodes_.at(i); }
  const std::deque<Episode>& episodes() const { return episodes_; }

  /// Observation sequence o_0..o_T and actions a_0..a_{T-1} of one episode,
  /// with observations multiplied by `obs_scale`.
  gssm::ObservedSequence sequence(std::size_t i, std::span<const double> obs_scale) const;

  friend bool operator==(const TrajectoryBuffer&, const TrajectoryBuffer&) = default;

 private:
  std::size_t capacity_;
  std::deque<Episode> episodes_;
};

struct Batch {
  nn::Tensor s, a, r, s2, done;
};

/// Ring buffer of latent-augmented transitions in flat storage.
class ReplayBuffer {
 public:
  ReplayBuffer() = default;
  ReplayBuffer(std::size_t capacity, std::size_t state_width, std::size_t action_width);

  void add(std::span<const double> s, std::span<const double> a, double r, std::span<const double> s2, bool done);
  void clear();
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t state_width() const { return state_width_; }
  std::size_t action_width() const { return action_width_; }

  /// Uniform sample with replacement. Throws ContractError when empty.
  Batch sample(std::size_t n, Rng& rng) const;
  /// Row i in insertion order (oldest first).
  Batch row(std::size_t i) const;

  friend bool operator==(const ReplayBuffer&, const ReplayBuffer&) = default;

  // Raw storage, exposed for serialisation.
  nn::Tensor s, a, r, s2, done;
  std::size_t head = 0;

 private:
  std::size_t capacity_ = 0;
  std::size_t state_width_ = 0;
  std::size_t action_width_ = 0;
  std::size_t size_ = 0;

  friend void restore_replay_counts(ReplayBuffer& rb, std::size_t size);
};

void restore_replay_counts(ReplayBuffer& rb, std::size_t size);

/// Actor, twin critics with targets, entropy temperature, and their
/// optimiser states.
struct SacAgent {
  SacConfig cfg;
  nn::ParameterSet actor;
  nn::ParameterSet critic1, critic2;
  nn::ParameterSet target1, target2;
  nn::ParameterSet alpha;  // single entry "log_alpha"
  nn::AdamState actor_opt, critic1_opt, critic2_opt, alpha_opt;
  std::uint64_t updates = 0;

  static SacAgent create(const SacConfig& cfg, Rng& rng);

  nn::MlpSpec actor_spec() const;
  nn::MlpSpec critic_spec() const;
  double alpha_value() const;

  friend bool operator==(const SacAgent&, const SacAgent&) = default;
};

struct PolicyOut {
  nn::Tensor mean;     // pre-squash
  nn::Tensor log_std;  // clamped
};

PolicyOut policy(const SacAgent& agent, const nn::Tensor& s);

struct ActionSample {
  nn::Tensor a;         // in (0, 1)
  nn::Tensor log_prob;  // rows x 1
};

/// u ~ N(mean, std), a = sigmoid(u) clamped to [1e-6, 1 - 1e-6], and the
/// log-density with the sigmoid change of variables.
ActionSample actor_sample(const SacAgent& agent, const nn::Tensor& s, Rng& rng);
/// Same with the caller's standard-normal noise.
ActionSample actor_sample(const SacAgent& agent, const nn::Tensor& s, const nn::Tensor& noise);

/// sigmoid(mean): the exploration-free action.
nn::Tensor actor_deterministic(const SacAgent& agent, const nn::Tensor& s);

struct SampleVars {
  nn::Var a;
  nn::Var log_prob;
};

SampleVars actor_sample(nn::Tape& tape, const SacAgent& agent, nn::Var s, const nn::Tensor& noise);

nn::Tensor q_value(const nn::ParameterSet& critic, const SacConfig& cfg, const nn::Tensor& s, const nn::Tensor& a);

/// Soft Bellman target r + gamma (1 - done) (min target Q(s', a') - alpha log pi(a'|s')).
nn::Tensor critic_target(const SacAgent& agent, const Batch& b, double alpha, const nn::Tensor& next_noise);

struct CriticLosses {
  double q1 = 0.0;
  double q2 = 0.0;
};

/// Regresses both critics onto the soft target. Throws TrainingError on a
/// non-finite loss.
CriticLosses critic_update(SacAgent& agent, const Batch& b, double alpha, Rng& rng);

/// One step on alpha * log pi - min Q(s, a(s)) for the actor only; returns
/// the loss and the batch-mean log-probability.
struct ActorLoss {
  double loss = 0.0;
  double mean_log_prob = 0.0;
};
ActorLoss actor_update(SacAgent& agent, const Batch& b, double alpha, Rng& rng);

/// Temperature step toward the target entropy; returns the new alpha.
double alpha_update(SacAgent& agent, double mean_log_prob);

/// target <- tau online + (1 - tau) target for both critics.
void target_soft_update(SacAgent& agent, double tau);

struct UpdateStats {
  CriticLosses critic;
  ActorLoss actor;
  double alpha = 0.0;
};

/// Critic, actor, temperature, then target blending.
UpdateStats sac_update(SacAgent& agent, const Batch& b, Rng& rng);

/// Relabels every stored episode with the filter's latent means (zeros in
/// vanilla mode) and returns a fresh replay buffer. Episodes shorter than 2
/// steps are skipped and counted in `skipped`.
/// The agent sees observations multiplied by `obs_scale`, the same scaling
/// the filter is trained on.
ReplayBuffer relabel_experience(const TrajectoryBuffer& traj, const gssm::FilterParams* filter, const SacConfig& cfg,
                                std::span<const double> obs_scale, Rng& rng, std::size_t* skipped = nullptr);

}  // namespace fesgssm::sac
