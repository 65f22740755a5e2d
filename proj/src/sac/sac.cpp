// SPDX-License-Identifier: Apache-2.0
#include "fesgssm/sac/sac.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "fesgssm/errors.hpp"

namespace fesgssm::sac {

using nn::Tape;
using nn::Tensor;
using nn::Var;

Mode parse_mode(const std::string& s) {
  if (s == "vanilla") return Mode::vanilla;
  if (s == "gssm") return Mode::gssm;
  throw ConfigError("mode must be vanilla or gssm, got '" + s + "'");
}

std::string to_string(Mode m) { return m == Mode::vanilla ? "vanilla" : "gssm"; }

void SacConfig::validate() const {
  if (obs == 0 || target == 0 || action == 0 || hidden == 0) throw ConfigError("sac: widths must be >= 1");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("sac: gamma must lie in (0, 1)");
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("sac: tau must lie in (0, 1]");
  if (!(lr > 0.0)) throw ConfigError("sac: lr must be > 0");
  if (!(init_alpha > 0.0)) throw ConfigError("sac: init_alpha must be > 0");
  if (!(log_std_min < log_std_max)) throw ConfigError("sac: log_std bounds must be ordered");
  if (batch == 0 || replay_capacity == 0 || trajectory_capacity == 0) {
    throw ConfigError("sac: batch and buffer capacities must be >= 1");
  }
}

Tensor build_rl_state(std::span<const double> o, const std::optional<std::span<const double>>& latent_mean,
                      std::span<const double> c, const SacConfig& cfg) {
  if (o.size() != cfg.obs) {
    throw DimensionError("rl state: observation width " + std::to_string(o.size()) + ", expected " +
                         std::to_string(cfg.obs));
  }
  if (c.size() != cfg.target) {
    throw DimensionError("rl state: target width " + std::to_string(c.size()) + ", expected " +
                         std::to_string(cfg.target));
  }
  if (latent_mean && latent_mean->size() != cfg.latent) {
    throw DimensionError("rl state: latent width " + std::to_string(latent_mean->size()) + ", expected " +
                         std::to_string(cfg.latent));
  }
  Tensor s(1, cfg.state_width());
  std::copy(o.begin(), o.end(), s.data());
  if (latent_mean) std::copy(latent_mean->begin(), latent_mean->end(), s.data() + cfg.obs);
  std::copy(c.begin(), c.end(), s.data() + cfg.obs + cfg.latent);
  if (!s.all_finite()) throw ContractError("rl state: non-finite entry");
  return s;
}

// ---------------------------------------------------------------- buffers

TrajectoryBuffer::TrajectoryBuffer(std::size_t capacity_episodes) : capacity_(capacity_episodes) {
  if (capacity_ == 0) throw ConfigError("trajectory buffer: capacity must be >= 1");
}

void TrajectoryBuffer::add(Episode episode) {
  if (episode.empty()) throw ContractError("trajectory buffer: empty episode");
  if (episodes_.size() == capacity_) episodes_.pop_front();
  episodes_.push_back(std::move(episode));
}

std::size_t TrajectoryBuffer::tuple_count() const {
  std::size_t n = 0;
  for (const auto& e : episodes_) n += e.size();
  return n;
}

gssm::ObservedSequence TrajectoryBuffer::sequence(std::size_t i, std::span<const double> obs_scale) const {
  const Episode& ep = episodes_.at(i);
  const std::size_t T = ep.size();
  const std::size_t ow = ep.front().obs.size(), aw = ep.front().action.size();
  if (obs_scale.size() != ow) throw DimensionError("trajectory buffer: obs_scale width mismatch");
  gssm::ObservedSequence seq{Tensor(T + 1, ow), Tensor(T, aw)};
  for (std::size_t t = 0; t <= T; ++t) {
    const auto& o = t < T ? ep[t].obs : ep[T - 1].next_obs;
    for (std::size_t k = 0; k < ow; ++k) seq.obs(t, k) = o[k] * obs_scale[k];
  }
  for (std::size_t t = 0; t < T; ++t) std::copy(ep[t].action.begin(), ep[t].action.end(), seq.actions.row_span(t).begin());
  return seq;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::size_t state_width, std::size_t action_width)
    : s(capacity, state_width),
      a(capacity, action_width),
      r(capacity, 1),
      s2(capacity, state_width),
      done(capacity, 1),
      capacity_(capacity),
      state_width_(state_width),
      action_width_(action_width) {
  if (capacity == 0) throw ConfigError("replay buffer: capacity must be >= 1");
}

void ReplayBuffer::add(std::span<const double> sv, std::span<const double> av, double rv, std::span<const double> s2v,
                       bool d) {
  if (sv.size() != state_width_ || s2v.size() != state_width_ || av.size() != action_width_) {
    throw DimensionError("replay buffer: tuple widths do not match the buffer");
  }
  std::copy(sv.begin(), sv.end(), s.row_span(head).begin());
  std::copy(av.begin(), av.end(), a.row_span(head).begin());
  r(head, 0) = rv;
  std::copy(s2v.begin(), s2v.end(), s2.row_span(head).begin());
  done(head, 0) = d ? 1.0 : 0.0;
  head = (head + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

void ReplayBuffer::clear() {
  head = 0;
  size_ = 0;
}

namespace {

Batch gather(const ReplayBuffer& rb, std::span<const std::size_t> idx) {
  const std::size_t n = idx.size();
  Batch b{Tensor(n, rb.state_width()), Tensor(n, rb.action_width()), Tensor(n, 1), Tensor(n, rb.state_width()),
          Tensor(n, 1)};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = idx[i];
    std::ranges::copy(rb.s.row_span(k), b.s.row_span(i).begin());
    std::ranges::copy(rb.a.row_span(k), b.a.row_span(i).begin());
    b.r(i, 0) = rb.r(k, 0);
    std::ranges::copy(rb.s2.row_span(k), b.s2.row_span(i).begin());
    b.done(i, 0) = rb.done(k, 0);
  }
  return b;
}

}  // namespace

Batch ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  if (size_ == 0) throw ContractError("replay buffer: sample from an empty buffer");
  std::vector<std::size_t> idx(n);
  for (auto& k : idx) k = rng.index(size_);
  return gather(*this, idx);
}

Batch ReplayBuffer::row(std::size_t i) const {
  if (i >= size_) throw ContractError("replay buffer: row out of range");
  const std::size_t start = size_ < capacity_ ? 0 : head;
  const std::size_t k = (start + i) % capacity_;
  return gather(*this, std::span<const std::size_t>(&k, 1));
}

void restore_replay_counts(ReplayBuffer& rb, std::size_t size) {
  if (size > rb.capacity_ || rb.head >= std::max<std::size_t>(rb.capacity_, 1)) {
    throw IoError("replay buffer: inconsistent stored counts");
  }
  rb.size_ = size;
}

// ------------------------------------------------------------------ agent

nn::MlpSpec SacAgent::actor_spec() const {
  return {{cfg.state_width(), cfg.hidden, cfg.hidden, 2 * cfg.action},
          {nn::Activation::relu, nn::Activation::relu, nn::Activation::identity}};
}

nn::MlpSpec SacAgent::critic_spec() const {
  return {{cfg.state_width() + cfg.action, cfg.hidden, cfg.hidden, 1},
          {nn::Activation::relu, nn::Activation::relu, nn::Activation::identity}};
}

double SacAgent::alpha_value() const { return std::exp(alpha.value(0)[0]); }

SacAgent SacAgent::create(const SacConfig& cfg, Rng& rng) {
  cfg.validate();
  SacAgent ag;
  ag.cfg = cfg;
  nn::Mlp::create(ag.actor, "actor", ag.actor_spec(), rng);
  nn::Mlp::create(ag.critic1, "q", ag.critic_spec(), rng);
  nn::Mlp::create(ag.critic2, "q", ag.critic_spec(), rng);
  ag.target1 = ag.critic1;
  ag.target2 = ag.critic2;
  ag.alpha.add("log_alpha", Tensor::scalar(std::log(cfg.init_alpha)));
  ag.actor_opt = nn::AdamState::for_params(ag.actor);
  ag.critic1_opt = nn::AdamState::for_params(ag.critic1);
  ag.critic2_opt = nn::AdamState::for_params(ag.critic2);
  ag.alpha_opt = nn::AdamState::for_params(ag.alpha);
  return ag;
}

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;
constexpr double kActionEps = 1e-6;

Var critic_forward(Tape& tape, const nn::ParameterSet& critic, const nn::MlpSpec& spec, Var s, Var a) {
  return nn::Mlp::bind(critic, "q", spec).forward(tape, critic, nn::concat_cols({s, a}));
}

void check_finite(double v, const char* what, std::uint64_t update) {
  if (!std::isfinite(v)) {
    throw TrainingError(std::string("sac ") + what + " loss is not finite at update " + std::to_string(update));
  }
}

Tensor standard_normal(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t(rows, cols);
  for (double& v : t.values()) v = rng.normal();
  return t;
}

// Restores trainable flags on scope exit.
class FreezeGuard {
 public:
  explicit FreezeGuard(nn::ParameterSet& ps) : ps_(ps) {
    for (std::size_t i = 0; i < ps.size(); ++i) flags_.push_back(ps.trainable(i));
    ps.freeze_all();
  }
  ~FreezeGuard() {
    for (std::size_t i = 0; i < ps_.size(); ++i) ps_.set_trainable(i, flags_[i]);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  nn::ParameterSet& ps_;
  std::vector<bool> flags_;
};

}  // namespace

SampleVars actor_sample(Tape& tape, const SacAgent& agent, Var s, const Tensor& noise) {
  const std::size_t A = agent.cfg.action;
  if (noise.rows() != s.rows() || noise.cols() != A) throw DimensionError("actor_sample: noise shape mismatch");
  Var out = nn::Mlp::bind(agent.actor, "actor", agent.actor_spec()).forward(tape, agent.actor, s);
  Var mean = nn::slice_cols(out, 0, A);
  Var log_std = nn::clamp(nn::slice_cols(out, A, A), agent.cfg.log_std_min, agent.cfg.log_std_max);
  Var u = mean + nn::mul_const(nn::exp(log_std), noise);
  // Clamped so the emitted action never rounds to 0 or 1.
  Var a = nn::clamp(nn::sigmoid(u), kActionEps, 1.0 - kActionEps);
  Tensor half_sq(noise.rows(), A);
  for (std::size_t i = 0; i < noise.size(); ++i) half_sq[i] = -0.5 * noise[i] * noise[i] - kHalfLog2Pi;
  Var log_normal = tape.constant(std::move(half_sq)) - log_std;
  Var log_jac = nn::log(a) + nn::log(nn::add_scalar(nn::neg(a), 1.0));
  return {a, nn::row_sum(log_normal - log_jac)};
}

PolicyOut policy(const SacAgent& agent, const Tensor& s) {
  const std::size_t A = agent.cfg.action;
  Tensor out = nn::mlp_forward(agent.actor, s, agent.actor_spec(), "actor");
  PolicyOut p{Tensor(s.rows(), A), Tensor(s.rows(), A)};
  for (std::size_t r = 0; r < s.rows(); ++r) {
    for (std::size_t k = 0; k < A; ++k) {
      p.mean(r, k) = out(r, k);
      p.log_std(r, k) = std::clamp(out(r, A + k), agent.cfg.log_std_min, agent.cfg.log_std_max);
    }
  }
  return p;
}

ActionSample actor_sample(const SacAgent& agent, const Tensor& s, const Tensor& noise) {
  Tape tape;
  auto v = actor_sample(tape, agent, tape.constant(s), noise);
  return {v.a.value(), v.log_prob.value()};
}

ActionSample actor_sample(const SacAgent& agent, const Tensor& s, Rng& rng) {
  return actor_sample(agent, s, standard_normal(s.rows(), agent.cfg.action, rng));
}

Tensor actor_deterministic(const SacAgent& agent, const Tensor& s) {
  Tensor m = policy(agent, s).mean;
  for (double& v : m.values()) v = 1.0 / (1.0 + std::exp(-v));
  return m;
}

Tensor q_value(const nn::ParameterSet& critic, const SacConfig& cfg, const Tensor& s, const Tensor& a) {
  SacAgent shape;
  shape.cfg = cfg;
  Tape tape;
  return critic_forward(tape, critic, shape.critic_spec(), tape.constant(s), tape.constant(a)).value();
}

Tensor critic_target(const SacAgent& agent, const Batch& b, double alpha, const Tensor& next_noise) {
  const ActionSample next = actor_sample(agent, b.s2, next_noise);
  const Tensor q1 = q_value(agent.target1, agent.cfg, b.s2, next.a);
  const Tensor q2 = q_value(agent.target2, agent.cfg, b.s2, next.a);
  Tensor y(b.r.rows(), 1);
  for (std::size_t i = 0; i < y.rows(); ++i) {
    const double soft = std::min(q1[i], q2[i]) - alpha * next.log_prob[i];
    y[i] = b.r[i] + agent.cfg.gamma * (1.0 - b.done[i]) * soft;
  }
  return y;
}

CriticLosses critic_update(SacAgent& agent, const Batch& b, double alpha, Rng& rng) {
  const Tensor y = critic_target(agent, b, alpha, standard_normal(b.s2.rows(), agent.cfg.action, rng));
  const nn::MlpSpec spec = agent.critic_spec();
  const nn::AdamHyper hyper{.lr = agent.cfg.lr};
  CriticLosses out;
  auto fit = [&](nn::ParameterSet& critic, nn::AdamState& opt) {
    Tape tape;
    Var q = critic_forward(tape, critic, spec, tape.constant(b.s), tape.constant(b.a));
    Var loss = nn::mean(nn::square(q - tape.constant(y)));
    const double l = loss.value().item();
    check_finite(l, "critic", agent.updates);
    tape.backward(loss);
    nn::adam_step(critic, tape.gradients(critic), opt, hyper);
    return l;
  };
  out.q1 = fit(agent.critic1, agent.critic1_opt);
  out.q2 = fit(agent.critic2, agent.critic2_opt);
  return out;
}

ActorLoss actor_update(SacAgent& agent, const Batch& b, double alpha, Rng& rng) {
  const nn::MlpSpec spec = agent.critic_spec();
  FreezeGuard g1(agent.critic1), g2(agent.critic2);
  Tape tape;
  Var s = tape.constant(b.s);
  auto smp = actor_sample(tape, agent, s, standard_normal(b.s.rows(), agent.cfg.action, rng));
  Var q = nn::minimum(critic_forward(tape, agent.critic1, spec, s, smp.a),
                      critic_forward(tape, agent.critic2, spec, s, smp.a));
  Var loss = nn::mean(nn::scale(smp.log_prob, alpha) - q);
  ActorLoss out{loss.value().item(), 0.0};
  check_finite(out.loss, "actor", agent.updates);
  for (double v : smp.log_prob.value().values()) out.mean_log_prob += v;
  out.mean_log_prob /= static_cast<double>(b.s.rows());
  tape.backward(loss);
  nn::adam_step(agent.actor, tape.gradients(agent.actor), agent.actor_opt, nn::AdamHyper{.lr = agent.cfg.lr});
  return out;
}

double alpha_update(SacAgent& agent, double mean_log_prob) {
  // d/dlog_alpha of -log_alpha * (log_pi + target_entropy)
  nn::Gradients g = nn::Gradients::zeros_like(agent.alpha);
  g.values[0][0] = -(mean_log_prob + agent.cfg.target_entropy);
  g.present[0] = true;
  nn::adam_step(agent.alpha, g, agent.alpha_opt, nn::AdamHyper{.lr = agent.cfg.lr});
  return agent.alpha_value();
}

void target_soft_update(SacAgent& agent, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw ContractError("target_soft_update: tau must lie in (0, 1]");
  agent.target1.blend_from(agent.critic1, tau);
  agent.target2.blend_from(agent.critic2, tau);
}

UpdateStats sac_update(SacAgent& agent, const Batch& b, Rng& rng) {
  UpdateStats st;
  const double alpha = agent.alpha_value();
  st.critic = critic_update(agent, b, alpha, rng);
  st.actor = actor_update(agent, b, alpha, rng);
  st.alpha = alpha_update(agent, st.actor.mean_log_prob);
  target_soft_update(agent, agent.cfg.tau);
  ++agent.updates;
  return st;
}

// -------------------------------------------------------------- relabel

ReplayBuffer relabel_experience(const TrajectoryBuffer& traj, const gssm::FilterParams* filter, const SacConfig& cfg,
                                std::span<const double> obs_scale, Rng& rng, std::size_t* skipped) {
  if (obs_scale.size() != cfg.obs) throw DimensionError("relabel: obs_scale width mismatch");
  if (filter && filter->dims.latent != cfg.latent) throw DimensionError("relabel: filter latent width mismatch");
  ReplayBuffer rb(cfg.replay_capacity, cfg.state_width(), cfg.action);
  std::size_t skip = 0;

  // One noise stream per episode, drawn in buffer order.
  std::vector<Rng> rngs;
  rngs.reserve(traj.size());
  for (std::size_t i = 0; i < traj.size(); ++i) rngs.emplace_back(rng.next_u64());

  std::vector<gssm::ObservedSequence> seqs(traj.size());
  std::vector<Tensor> means(traj.size());
  std::map<std::size_t, std::vector<std::size_t>> by_length;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    if (traj.episode(i).size() < 2) {
      ++skip;
      continue;
    }
    seqs[i] = traj.sequence(i, obs_scale);
    by_length[seqs[i].length()].push_back(i);
  }
  if (filter) {
    for (const auto& [len, ids] : by_length) {
      std::vector<const gssm::ObservedSequence*> ptrs;
      std::vector<Rng> group_rngs;
      for (std::size_t i : ids) {
        ptrs.push_back(&seqs[i]);
        group_rngs.push_back(rngs[i]);
      }
      auto out = gssm::filter_means_batch(*filter, ptrs, group_rngs);
      for (std::size_t k = 0; k < ids.size(); ++k) means[ids[k]] = std::move(out[k]);
    }
  }

  std::vector<double> o(cfg.obs), o2(cfg.obs);
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const Episode& ep = traj.episode(i);
    if (ep.size() < 2) continue;
    for (std::size_t t = 0; t < ep.size(); ++t) {
      const auto& e = ep[t];
      for (std::size_t k = 0; k < cfg.obs; ++k) {
        o[k] = e.obs[k] * obs_scale[k];
        o2[k] = e.next_obs[k] * obs_scale[k];
      }
      std::optional<std::span<const double>> m, m2;
      if (filter) {
        m = means[i].row_span(t);
        m2 = means[i].row_span(t + 1);
      }
      const Tensor s = build_rl_state(o, m, e.target, cfg);
      const Tensor s2 = build_rl_state(o2, m2, e.next_target, cfg);
      rb.add(s.row_span(0), e.action, e.reward, s2.row_span(0), e.done);
    }
  }
  if (skipped) *skipped = skip;
  return rb;
}

}  // namespace fesgssm::sac
