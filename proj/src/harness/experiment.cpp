// SPDX-License-Identifier: Apache-2.0
#include "fesgssm/harness/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "fesgssm/errors.hpp"
#include "fesgssm/harness/checkpoint.hpp"
#include "fesgssm/transitions/ensemble.hpp"
#include "fesgssm/transitions/gated.hpp"

namespace fesgssm::harness {

using nn::Tensor;

std::vector<MetricsRow> MetricsLog::evals() const {
  std::vector<MetricsRow> out;
  for (const auto& r : rows) {
    if (r.eval) out.push_back(r);
  }
  return out;
}

std::string provenance_header(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "# source " << source_hash() << '\n';
  std::istringstream ini(to_ini(cfg));
  for (std::string line; std::getline(ini, line);) out << "# " << line << '\n';
  return out.str();
}

void write_metrics_csv(std::ostream& out, const MetricsLog& log, const ExperimentConfig& cfg) {
  out << provenance_header(cfg);
  out << "episode,seed,mode,kind,return,critic_loss,actor_loss,alpha,gssm_loss,rmse_deg\n";
  out << std::setprecision(12);
  for (const auto& r : log.rows) {
    out << r.episode << ',' << r.seed << ',' << sac::to_string(r.mode) << ',' << (r.eval ? "eval" : "train") << ','
        << r.episode_return << ',' << r.critic_loss << ',' << r.actor_loss << ',' << r.alpha << ',' << r.gssm_loss
        << ',' << r.rmse_deg << '\n';
  }
}

gssm::GssmModel make_arm_gssm(const ExperimentConfig& cfg, Rng& rng) {
  auto fp = gssm::FilterParams::create(cfg.dims, rng);
  auto dp = gssm::DecoderParams::create(cfg.dims, rng);
  std::unique_ptr<gssm::TransitionModel> tr;
  if (cfg.transition == "gated") {
    tr = std::make_unique<transitions::GatedTransition>(
        transitions::GatedConfig{.latent = cfg.dims.latent, .hidden = cfg.transition_hidden}, rng);
  } else {
    tr = std::make_unique<transitions::EnsembleTransition>(
        transitions::EnsembleConfig{.latent = cfg.dims.latent,
                                    .members = cfg.ensemble_members,
                                    .hidden = cfg.transition_hidden,
                                    .prior_scale = cfg.prior_scale,
                                    .learned_floor = cfg.learned_floor,
                                    .floor_init = cfg.floor_init},
        rng);
  }
  return gssm::GssmModel(std::move(fp), std::move(dp), std::move(tr));
}

namespace {

gssm::GssmHyper resolved_hyper(const ExperimentConfig& cfg) {
  gssm::GssmHyper h = cfg.gssm_hyper;
  if (h.total_steps == 0) h.total_steps = std::max<std::size_t>(1, cfg.gssm_steps * (cfg.episodes / cfg.eval_every));
  return h;
}

std::vector<double> scaled(const arm::Observation& o, const std::array<double, 4>& sc) {
  return {o[0] * sc[0], o[1] * sc[1], o[2] * sc[2], o[3] * sc[3]};
}

std::uint64_t eval_seed_for(std::uint64_t seed) { return Rng::derive(seed, "eval").next_u64(); }

// Online filter plus RL-state assembly for a batch of environments.
class StateBuilder {
 public:
  StateBuilder(const gssm::FilterParams* filter, const ExperimentConfig& cfg, std::size_t batch)
      : filter_(filter), cfg_(cfg), a_prev_(batch, cfg.sac.action) {
    if (filter_) fs_ = gssm::filter_init(filter_->dims, batch);
  }

  Tensor build(const std::vector<arm::Observation>& obs, const std::vector<arm::Target>& targets, Rng& rng) {
    const std::size_t n = obs.size();
    Tensor o(n, cfg_.sac.obs);
    for (std::size_t i = 0; i < n; ++i) {
      const auto os = scaled(obs[i], cfg_.obs_scale);
      std::ranges::copy(os, o.row_span(i).begin());
    }
    Tensor means;
    if (filter_) {
      auto step = gssm::filter_step(*filter_, fs_.h, fs_.x, a_prev_, o, rng);
      fs_.h = std::move(step.h);
      fs_.x = std::move(step.x);
      means = std::move(step.q.mean);
    }
    Tensor s(n, cfg_.sac.state_width());
    for (std::size_t i = 0; i < n; ++i) {
      std::optional<std::span<const double>> m;
      if (filter_) m = means.row_span(i);
      const double c[2] = {targets[i].shoulder, targets[i].elbow};
      const Tensor row = sac::build_rl_state(o.row_span(i), m, c, cfg_.sac);
      std::ranges::copy(row.row_span(0), s.row_span(i).begin());
    }
    return s;
  }

  void set_actions(const Tensor& a) { a_prev_ = a; }

 private:
  const gssm::FilterParams* filter_;
  const ExperimentConfig& cfg_;
  gssm::FilterState fs_;
  Tensor a_prev_;
};

arm::MuscleVec to_excitation(const Tensor& a, std::size_t row) {
  arm::MuscleVec e{};
  for (std::size_t k = 0; k < arm::kMuscles; ++k) e[k] = std::clamp(a(row, k), 0.0, 1.0);
  return e;
}

}  // namespace

RunState init_run(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  RunState st;
  st.cfg = cfg;
  st.seed = seed;
  Rng agent_rng = Rng::derive(seed, "agent-init");
  st.agent = sac::SacAgent::create(cfg.sac, agent_rng);
  if (cfg.mode == sac::Mode::gssm) {
    Rng model_rng = Rng::derive(seed, "gssm-init");
    st.model = make_arm_gssm(cfg, model_rng);
    st.gssm_state = gssm::GssmTrainerState::for_model(*st.model);
    ++st.counters.gssm_constructions;
  }
  st.traj = sac::TrajectoryBuffer(cfg.sac.trajectory_capacity);
  st.replay = sac::ReplayBuffer(cfg.sac.replay_capacity, cfg.sac.state_width(), cfg.sac.action);
  st.env_rng = Rng::derive(seed, "env");
  st.act_rng = Rng::derive(seed, "act");
  st.update_rng = Rng::derive(seed, "sac-update");
  st.filter_rng = Rng::derive(seed, "filter");
  st.gssm_rng = Rng::derive(seed, "gssm-train");
  st.relabel_rng = Rng::derive(seed, "relabel");
  return st;
}

void run_episode(RunState& st) {
  const ExperimentConfig& cfg = st.cfg;
  const gssm::FilterParams* filter = st.model ? &st.model->filter : nullptr;
  arm::ArmEnv env(cfg.arm, cfg.muscles(), st.env_rng);
  std::vector<arm::Observation> obs{env.reset(cfg.reset_ranges())};
  StateBuilder builder(filter, cfg, 1);
  Tensor s = builder.build(obs, {env.target()}, st.filter_rng);

  const bool updating = st.next_episode >= cfg.update_start_episode;
  MetricsRow row{.seed = st.seed, .mode = cfg.mode, .episode = st.next_episode + 1};
  std::size_t updates = 0;
  sac::Episode ep;
  ep.reserve(cfg.arm.episode_steps);
  for (std::size_t t = 0; t < cfg.arm.episode_steps; ++t) {
    const auto smp = sac::actor_sample(st.agent, s, st.act_rng);
    const arm::MuscleVec e = to_excitation(smp.a, 0);
    const arm::Target target = env.target();
    const arm::StepResult res = env.step(e);

    sac::ExperienceTuple tup;
    tup.obs.assign(obs[0].begin(), obs[0].end());
    tup.target = {target.shoulder, target.elbow};
    tup.action.assign(e.begin(), e.end());
    tup.reward = res.reward;
    tup.next_obs.assign(res.obs.begin(), res.obs.end());
    tup.next_target = {env.target().shoulder, env.target().elbow};
    tup.done = false;  // the episode end is a time limit, not a terminal state
    ep.push_back(tup);

    builder.set_actions(smp.a);
    obs[0] = res.obs;
    Tensor s2 = builder.build(obs, {env.target()}, st.filter_rng);
    st.replay.add(s.row_span(0), tup.action, res.reward, s2.row_span(0), tup.done);
    s = std::move(s2);
    row.episode_return += res.reward;

    if (updating && st.replay.size() >= cfg.sac.batch) {
      const sac::Batch b = st.replay.sample(cfg.sac.batch, st.update_rng);
      const auto u = sac::sac_update(st.agent, b, st.update_rng);
      row.critic_loss += 0.5 * (u.critic.q1 + u.critic.q2);
      row.actor_loss += u.actor.loss;
      ++updates;
      ++st.counters.sac_updates;
    }
    if (res.done) break;
  }
  if (updates > 0) {
    row.critic_loss /= static_cast<double>(updates);
    row.actor_loss /= static_cast<double>(updates);
  }
  row.alpha = st.agent.alpha_value();
  st.env_rng = env.rng();
  st.traj.add(std::move(ep));
  ++st.next_episode;

  if (st.next_episode % cfg.eval_every == 0) {
    if (st.model) {
      std::vector<gssm::ObservedSequence> seqs;
      seqs.reserve(st.traj.size());
      for (std::size_t i = 0; i < st.traj.size(); ++i) seqs.push_back(st.traj.sequence(i, cfg.obs_scale));
      const auto hist = gssm::train_gssm(*st.model, *st.gssm_state, seqs, cfg.gssm_steps, cfg.gssm_batch,
                                         resolved_hyper(cfg), st.gssm_rng);
      double total = 0.0;
      for (const auto& h : hist) total += h.total;
      row.gssm_loss = total / static_cast<double>(hist.size());
      ++st.counters.gssm_updates;
    }
    st.replay = sac::relabel_experience(st.traj, filter, cfg.sac, cfg.obs_scale, st.relabel_rng);
    ++st.counters.relabels;
  }
  st.metrics.rows.push_back(row);

  if (st.next_episode % cfg.eval_every == 0) {
    MetricsRow ev{.seed = st.seed, .mode = cfg.mode, .episode = st.next_episode, .eval = true};
    ev.alpha = row.alpha;
    ev.rmse_deg = evaluate_rmse(st.agent, filter, cfg, cfg.eval_episodes, eval_seed_for(st.seed));
    ++st.counters.evaluations;
    st.metrics.rows.push_back(ev);
  }
}

void run_training(RunState& st, std::optional<std::size_t> until_episode, const std::string& failure_checkpoint) {
  const std::size_t until = std::min(until_episode.value_or(st.cfg.episodes), st.cfg.episodes);
  while (st.next_episode < until) {
    try {
      run_episode(st);
    } catch (const std::runtime_error& e) {
      const bool fatal = dynamic_cast<const TrainingError*>(&e) || dynamic_cast<const SimulationError*>(&e) ||
                         dynamic_cast<const NumericalError*>(&e);
      if (!fatal) throw;
      if (!failure_checkpoint.empty()) save_checkpoint(failure_checkpoint, st);
      throw TrainingError("seed " + std::to_string(st.seed) + " episode " + std::to_string(st.next_episode + 1) +
                          ": " + e.what());
    }
  }
}

PolicyFn deterministic_policy(const sac::SacAgent& agent) {
  return [&agent](const Tensor& s) { return sac::actor_deterministic(agent, s); };
}

void RmseAccumulator::add(const arm::JointVec& theta, const arm::Target& target) {
  const double ds = theta[0] - target.shoulder, de = theta[1] - target.elbow;
  sum_sq += ds * ds + de * de;
  count += 2;
}

double RmseAccumulator::rmse_deg() const {
  if (count == 0) return 0.0;
  return arm::rad2deg(std::sqrt(sum_sq / static_cast<double>(count)));
}

double evaluate_rmse(const PolicyFn& policy, const gssm::FilterParams* filter, const ExperimentConfig& cfg,
                     std::size_t n_episodes, std::uint64_t eval_seed) {
  if (n_episodes == 0) throw ContractError("evaluate_rmse: need at least one episode");
  Rng env_master = Rng::derive(eval_seed, "eval-env");
  Rng filter_rng = Rng::derive(eval_seed, "eval-filter");
  std::vector<arm::ArmEnv> envs;
  envs.reserve(n_episodes);
  std::vector<arm::Observation> obs(n_episodes);
  std::vector<arm::Target> targets(n_episodes);
  for (std::size_t i = 0; i < n_episodes; ++i) {
    envs.emplace_back(cfg.arm, cfg.muscles(), Rng(env_master.next_u64()));
    obs[i] = envs[i].reset(cfg.reset_ranges());
    targets[i] = envs[i].target();
  }
  StateBuilder builder(filter, cfg, n_episodes);
  RmseAccumulator acc;
  for (std::size_t t = 0; t < cfg.arm.episode_steps; ++t) {
    const Tensor s = builder.build(obs, targets, filter_rng);
    const Tensor a = policy(s);
    if (a.rows() != n_episodes || a.cols() != cfg.sac.action) throw DimensionError("evaluate_rmse: policy output shape");
    for (std::size_t i = 0; i < n_episodes; ++i) {
      const arm::Target active = envs[i].target();
      const auto res = envs[i].step(to_excitation(a, i));
      acc.add(envs[i].state().theta, active);
      obs[i] = res.obs;
      targets[i] = envs[i].target();
    }
    builder.set_actions(a);
  }
  return acc.rmse_deg();
}

double evaluate_rmse(const sac::SacAgent& agent, const gssm::FilterParams* filter, const ExperimentConfig& cfg,
                     std::size_t n_episodes, std::uint64_t eval_seed) {
  return evaluate_rmse(deterministic_policy(agent), filter, cfg, n_episodes, eval_seed);
}

// ------------------------------------------------------------- tracking

arm::Target TrackingSchedule::at(double time) const {
  std::size_t i = 0;
  while (i + 1 < t.size() && t[i + 1] <= time) ++i;
  double s = shoulder_deg[i], e = elbow_deg[i];
  if (i + 1 < t.size() && t[i + 1] > t[i]) {
    const double w = std::clamp((time - t[i]) / (t[i + 1] - t[i]), 0.0, 1.0);
    s += w * (shoulder_deg[i + 1] - s);
    e += w * (elbow_deg[i + 1] - e);
  }
  return {arm::deg2rad(s), arm::deg2rad(e)};
}

TrackingSchedule parse_schedule(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("schedule: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "t,shoulder_deg,elbow_deg") throw ConfigError("schedule: header must be t,shoulder_deg,elbow_deg");
  TrackingSchedule s;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    double t = 0, sh = 0, el = 0;
    if (!(ls >> t >> sh >> el)) throw ConfigError("schedule: bad row at line " + std::to_string(lineno));
    if (!s.t.empty() && t < s.t.back()) throw ConfigError("schedule: times decrease at line " + std::to_string(lineno));
    s.t.push_back(t);
    s.shoulder_deg.push_back(sh);
    s.elbow_deg.push_back(el);
  }
  if (s.t.size() < 2 || s.t.front() != 0.0) throw ConfigError("schedule: needs >= 2 rows starting at t = 0");
  return s;
}

TrackingSchedule load_schedule(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("schedule: cannot open " + path);
  return parse_schedule(in);
}

TrackingResult run_tracking_trial(const PolicyFn& policy, const gssm::FilterParams* filter,
                                  const ExperimentConfig& cfg, const TrackingSchedule& schedule, std::uint64_t seed,
                                  double segment_seconds) {
  arm::ArmConfig ac = cfg.arm;
  const auto steps = static_cast<std::size_t>(std::llround(schedule.duration() / ac.dt));
  ac.episode_steps = std::max<std::size_t>(steps, 1);
  arm::ArmEnv env(ac, cfg.muscles(), Rng::derive(seed, "tracking-env"));
  env.set_retargeting(false);
  arm::ArmState start;
  const arm::Target t0 = schedule.at(0.0);
  start.theta = {t0.shoulder, t0.elbow};
  std::vector<arm::Observation> obs{env.reset_to(start, t0)};
  Rng filter_rng = Rng::derive(seed, "tracking-filter");
  StateBuilder builder(filter, cfg, 1);

  TrackingResult out;
  RmseAccumulator total;
  const auto n_seg = static_cast<std::size_t>(std::ceil(schedule.duration() / segment_seconds - 1e-9));
  std::vector<RmseAccumulator> segs(std::max<std::size_t>(n_seg, 1));
  out.rows.push_back({.t = 0.0, .state = env.state(), .target = t0});
  for (std::size_t k = 0; k < steps; ++k) {
    const double time = static_cast<double>(k) * ac.dt;
    const arm::Target target = schedule.at(time);
    env.set_target(target);
    const Tensor s = builder.build(obs, {target}, filter_rng);
    const Tensor a = policy(s);
    const arm::MuscleVec e = to_excitation(a, 0);
    const auto res = env.step(e);
    builder.set_actions(a);
    obs[0] = res.obs;
    total.add(env.state().theta, target);
    segs[std::min(segs.size() - 1, static_cast<std::size_t>(time / segment_seconds + 1e-9))].add(env.state().theta,
                                                                                                  target);
    out.rows.push_back({.t = time + ac.dt, .state = env.state(), .e = e, .target = target, .reward = res.reward});
  }
  out.rmse_deg = total.rmse_deg();
  for (const auto& sg : segs) out.segment_rmse_deg.push_back(sg.rmse_deg());
  return out;
}

// ------------------------------------------------------------------ A/B

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

AbModeSummary summarise_mode(const std::vector<AbRun>& runs, sac::Mode mode) {
  AbModeSummary s{.mode = mode};
  std::vector<double> finals, deltas, tracks;
  for (const auto& r : runs) {
    if (r.mode != mode || r.failed) continue;
    finals.push_back(r.final_rmse);
    if (!r.tracking_segments.empty()) deltas.push_back(r.tracking_segments.back() - r.tracking_segments.front());
    tracks.push_back(r.tracking_rmse);
  }
  s.ok_seeds = finals.size();
  if (finals.empty()) return s;
  for (double f : finals) s.final_mean += f;
  s.final_mean /= static_cast<double>(finals.size());
  if (finals.size() > 1) {
    for (double f : finals) s.final_std += (f - s.final_mean) * (f - s.final_mean);
    s.final_std = std::sqrt(s.final_std / static_cast<double>(finals.size() - 1));
  }
  s.median_tracking_delta = median(deltas);
  s.median_tracking_rmse = median(tracks);
  return s;
}

AbReport run_ab_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                           std::optional<sac::Mode> force_mode) {
  if (cfg.seeds.size() < 2) throw ConfigError("ab: at least two seeds required");
  cfg.validate();
  const TrackingSchedule schedule = load_schedule(cfg.tracking_schedule);
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream(out_dir + "/config.resolved") << "# source " << source_hash() << '\n' << to_ini(cfg);
  }
  AbReport rep;
  for (std::uint64_t seed : cfg.seeds) {
    for (sac::Mode label : {sac::Mode::vanilla, sac::Mode::gssm}) {
      ExperimentConfig c = cfg;
      c.mode = force_mode.value_or(label);
      AbRun run;
      run.seed = seed;
      run.mode = label;
      try {
        RunState st = init_run(c, seed);
        const std::string tag = sac::to_string(label) + "_" + std::to_string(seed);
        run_training(st, std::nullopt, out_dir.empty() ? "" : out_dir + "/failed_" + tag + ".bin");
        for (const auto& r : st.metrics.evals()) run.curve.emplace_back(r.episode, r.rmse_deg);
        if (!run.curve.empty()) run.final_rmse = run.curve.back().second;
        const gssm::FilterParams* filter = st.model ? &st.model->filter : nullptr;
        const auto tr = run_tracking_trial(deterministic_policy(st.agent), filter, c, schedule, seed);
        run.tracking_rmse = tr.rmse_deg;
        run.tracking_segments = tr.segment_rmse_deg;
        if (!out_dir.empty()) {
          std::ofstream m(out_dir + "/metrics_" + tag + ".csv");
          write_metrics_csv(m, st.metrics, c);
          std::ofstream t(out_dir + "/tracking_" + tag + ".csv");
          t << provenance_header(c);
          arm::write_trajectory_csv(t, tr.rows);
          save_checkpoint(out_dir + "/checkpoint_" + tag + ".bin", st);
        }
      } catch (const std::exception& e) {
        run.failed = true;
        run.error = e.what();
      }
      rep.runs.push_back(std::move(run));
    }
  }
  rep.vanilla = summarise_mode(rep.runs, sac::Mode::vanilla);
  rep.gssm = summarise_mode(rep.runs, sac::Mode::gssm);
  if (!out_dir.empty()) {
    std::ofstream lc(out_dir + "/learning_curves.csv");
    write_learning_curves_csv(lc, rep, cfg);
    std::ofstream rp(out_dir + "/report.csv");
    write_ab_report_csv(rp, rep, cfg);
  }
  return rep;
}

void write_learning_curves_csv(std::ostream& out, const AbReport& rep, const ExperimentConfig& cfg) {
  out << provenance_header(cfg);
  out << "episode,mode,seed,rmse_deg\n" << std::setprecision(12);
  for (const auto& r : rep.runs) {
    for (const auto& [ep, rmse] : r.curve) out << ep << ',' << sac::to_string(r.mode) << ',' << r.seed << ',' << rmse << '\n';
  }
}

void write_ab_report_csv(std::ostream& out, const AbReport& rep, const ExperimentConfig& cfg) {
  out << provenance_header(cfg);
  out << "kind,mode,seed,failed,ok_seeds,final_rmse_deg,final_std_deg,tracking_rmse_deg,tracking_delta_deg,error\n";
  out << std::setprecision(12);
  for (const auto& r : rep.runs) {
    const double delta = r.tracking_segments.empty() ? 0.0 : r.tracking_segments.back() - r.tracking_segments.front();
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out << "run," << sac::to_string(r.mode) << ',' << r.seed << ',' << r.failed << ",," << r.final_rmse << ",,"
        << r.tracking_rmse << ',' << delta << ',' << err << '\n';
  }
  for (const auto* s : {&rep.vanilla, &rep.gssm}) {
    out << "summary," << sac::to_string(s->mode) << ",,," << s->ok_seeds << ',' << s->final_mean << ',' << s->final_std
        << ',' << s->median_tracking_rmse << ',' << s->median_tracking_delta << ",\n";
  }
}

}  // namespace fesgssm::harness
