// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "fesgssm/errors.hpp"
#include "fesgssm/harness/checkpoint.hpp"
#include "fesgssm/harness/experiment.hpp"

using namespace fesgssm;
using namespace fesgssm::harness;
using nn::Tensor;

namespace {

ExperimentConfig tiny_config(sac::Mode mode = sac::Mode::gssm) {
  ExperimentConfig c;
  c.mode = mode;
  c.seeds = {0, 1};
  c.episodes = 4;
  c.eval_every = 2;
  c.eval_episodes = 2;
  c.arm.episode_steps = 12;
  c.arm.retarget_step = 6;
  c.dims.hidden = 8;
  c.dims.ws_hidden = 8;
  c.dims.wx_hidden = 8;
  c.dims.wg_hidden = 8;
  c.dims.latent = 3;
  c.sac.latent = 3;
  c.transition_hidden = 8;
  c.ensemble_members = 3;
  c.gssm_steps = 2;
  c.gssm_batch = 2;
  c.sac.hidden = 16;
  c.sac.batch = 8;
  c.sac.replay_capacity = 1000;
  c.tracking_schedule = FESGSSM_DATA_DIR "/tracking_schedule.csv";
  return c;
}

std::string temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("fesgssm_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

TrackingSchedule short_schedule() {
  std::istringstream in("t,shoulder_deg,elbow_deg\n0,20,30\n1,20,30\n2,40,60\n4,40,60\n");
  return parse_schedule(in);
}

}  // namespace

TEST_CASE("config round-trips through INI text and rejects unknown keys") {
  ExperimentConfig c = tiny_config();
  c.sac.gamma = 0.987654321;
  c.obs_scale[2] = 0.125;
  c.transition = "gated";
  const ExperimentConfig back = parse_config(to_ini(c));
  CHECK(to_ini(back) == to_ini(c));
  CHECK(back.sac.gamma == c.sac.gamma);
  CHECK(back.obs_scale[2] == 0.125);
  CHECK(back.seeds == c.seeds);

  CHECK_THROWS_AS(parse_config("[sac]\ngama = 0.9\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[transition]\nkind = mixture\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[experiment]\nepisodes = -3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[sac]\nlatent = 5\n"), ConfigError);
  CHECK(parse_config("").episodes == ExperimentConfig{}.episodes);
}

TEST_CASE("one episode with cadence one gives one evaluation row") {
  ExperimentConfig c = tiny_config();
  c.episodes = 1;
  c.eval_every = 1;
  RunState st = init_run(c, 3);
  run_training(st);
  CHECK(st.next_episode == 1);
  CHECK(st.metrics.evals().size() == 1);
  CHECK(st.metrics.rows.size() == 2);
  CHECK(st.counters.evaluations == 1);
  CHECK(st.counters.gssm_updates == 1);
  CHECK(st.counters.relabels == 1);
  // No updates in the first episode.
  CHECK(st.counters.sac_updates == 0);
}

TEST_CASE("loop accounting over several episodes") {
  ExperimentConfig c = tiny_config();
  RunState st = init_run(c, 0);
  run_training(st);
  CHECK(st.counters.evaluations == 2);
  CHECK(st.counters.gssm_updates == 2);
  CHECK(st.counters.relabels == 2);
  CHECK(st.counters.gssm_constructions == 1);
  // Updates start in episode 2 once the replay holds a batch.
  CHECK(st.counters.sac_updates == 3 * c.arm.episode_steps);
  CHECK(st.agent.updates == st.counters.sac_updates);
  CHECK(st.traj.size() == 4);
  CHECK(st.replay.size() == 4 * c.arm.episode_steps);
  for (const auto& r : st.metrics.evals()) {
    CHECK(std::isfinite(r.rmse_deg));
    CHECK(r.rmse_deg > 0.0);
  }
}

TEST_CASE("vanilla mode never builds or trains a GSSM") {
  RunState st = init_run(tiny_config(sac::Mode::vanilla), 0);
  run_training(st);
  CHECK_FALSE(st.model.has_value());
  CHECK(st.counters.gssm_constructions == 0);
  CHECK(st.counters.gssm_updates == 0);
  CHECK(st.counters.relabels == 2);
  for (std::size_t i = 0; i < st.replay.size(); ++i) {
    const auto row = st.replay.s.row_span(i);
    for (std::size_t k = 0; k < st.cfg.sac.latent; ++k) CHECK(row[st.cfg.sac.obs + k] == 0.0);
  }
}

TEST_CASE("vanilla runs do not depend on the GSSM config") {
  ExperimentConfig a = tiny_config(sac::Mode::vanilla);
  ExperimentConfig b = a;
  b.transition = "gated";
  b.dims.hidden = 5;
  b.gssm_steps = 7;
  b.gssm_hyper.lr = 0.5;
  RunState sa = init_run(a, 2), sb = init_run(b, 2);
  run_training(sa);
  run_training(sb);
  CHECK(sa.metrics == sb.metrics);
  CHECK(nn::ParameterSet::abs_difference(sa.agent.actor, sb.agent.actor) == 0.0);
}

TEST_CASE("equal seeds give identical runs and different seeds differ") {
  const ExperimentConfig c = tiny_config();
  RunState a = init_run(c, 5), b = init_run(c, 5), d = init_run(c, 6);
  run_training(a);
  run_training(b);
  run_training(d);
  CHECK(a.metrics == b.metrics);
  CHECK(a.counters == b.counters);
  CHECK_FALSE(a.metrics == d.metrics);
}

TEST_CASE("RMSE accumulator works in degrees over both joints") {
  RmseAccumulator acc;
  for (int i = 0; i < 10; ++i) acc.add({0.6, 0.4}, {0.5, 0.5});
  CHECK(acc.count == 20);
  CHECK(acc.rmse_deg() == doctest::Approx(0.1 * 180.0 / std::numbers::pi).epsilon(1e-12));
  CHECK(acc.rmse_deg() == doctest::Approx(5.7296).epsilon(1e-4));
  CHECK(RmseAccumulator{}.rmse_deg() == 0.0);
}

TEST_CASE("evaluation is reproducible for a seed and checks the policy shape") {
  const ExperimentConfig c = tiny_config(sac::Mode::vanilla);
  Rng rng(1);
  const auto agent = sac::SacAgent::create(c.sac, rng);
  const double r1 = evaluate_rmse(agent, nullptr, c, 3, 11);
  const double r2 = evaluate_rmse(agent, nullptr, c, 3, 11);
  const double r3 = evaluate_rmse(agent, nullptr, c, 3, 12);
  CHECK(r1 == r2);
  CHECK(r1 != r3);
  const PolicyFn bad = [](const Tensor& s) { return Tensor(s.rows(), 2); };
  CHECK_THROWS_AS(evaluate_rmse(bad, nullptr, c, 2, 1), DimensionError);
  CHECK_THROWS_AS(evaluate_rmse(agent, nullptr, c, 0, 1), ContractError);
}

TEST_CASE("schedule parsing and interpolation") {
  const TrackingSchedule s = short_schedule();
  CHECK(s.duration() == 4.0);
  CHECK(s.at(0.5).shoulder == doctest::Approx(arm::deg2rad(20.0)));
  CHECK(s.at(1.5).shoulder == doctest::Approx(arm::deg2rad(30.0)));
  CHECK(s.at(1.5).elbow == doctest::Approx(arm::deg2rad(45.0)));
  CHECK(s.at(10.0).elbow == doctest::Approx(arm::deg2rad(60.0)));

  std::istringstream bad_header("time,s,e\n0,1,2\n1,1,2\n");
  CHECK_THROWS_AS(parse_schedule(bad_header), ConfigError);
  std::istringstream decreasing("t,shoulder_deg,elbow_deg\n0,1,2\n2,1,2\n1,1,2\n");
  CHECK_THROWS_AS(parse_schedule(decreasing), ConfigError);
  std::istringstream late("t,shoulder_deg,elbow_deg\n1,1,2\n2,1,2\n");
  CHECK_THROWS_AS(parse_schedule(late), ConfigError);

  const TrackingSchedule shipped = load_schedule(FESGSSM_DATA_DIR "/tracking_schedule.csv");
  CHECK(shipped.duration() == 60.0);
}

TEST_CASE("tracking trial segments combine to the overall RMSE") {
  const ExperimentConfig c = tiny_config(sac::Mode::vanilla);
  const TrackingSchedule s = short_schedule();
  const PolicyFn hold = [](const Tensor& st) { return Tensor(st.rows(), 4, 0.1); };
  const auto r = run_tracking_trial(hold, nullptr, c, s, 0, 1.0);
  const std::size_t steps = 40;
  REQUIRE(r.rows.size() == steps + 1);
  REQUIRE(r.segment_rmse_deg.size() == 4);
  // Each 1 s segment holds 10 steps.
  double sum = 0.0;
  for (double seg : r.segment_rmse_deg) sum += seg * seg * 10.0;
  CHECK(std::sqrt(sum / steps) == doctest::Approx(r.rmse_deg).epsilon(1e-12));
  CHECK(r.rows.front().state.theta[0] == doctest::Approx(arm::deg2rad(20.0)));
  CHECK(r.rows[25].target.shoulder == doctest::Approx(s.at(2.4).shoulder));
  const auto again = run_tracking_trial(hold, nullptr, c, s, 0, 1.0);
  CHECK(again.rmse_deg == r.rmse_deg);
}

TEST_CASE("metrics CSV carries provenance and one line per row") {
  RunState st = init_run(tiny_config(sac::Mode::vanilla), 0);
  run_training(st, 2);
  std::ostringstream out;
  write_metrics_csv(out, st.metrics, st.cfg);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "# source " + source_hash());
  std::size_t data = 0;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.rfind("#", 0) == 0) continue;
    if (!header) {
      CHECK(line == "episode,seed,mode,kind,return,critic_loss,actor_loss,alpha,gssm_loss,rmse_deg");
      header = true;
      continue;
    }
    ++data;
  }
  CHECK(data == st.metrics.rows.size());
}

TEST_CASE("A/B run accounting and the null comparison") {
  ExperimentConfig c = tiny_config();
  c.episodes = 2;
  const std::string dir = temp_dir("ab");
  const AbReport rep = run_ab_experiment(c, dir);
  CHECK(rep.runs.size() == 4);
  CHECK(rep.vanilla.ok_seeds == 2);
  CHECK(rep.gssm.ok_seeds == 2);
  for (const char* f : {"learning_curves.csv", "report.csv", "config.resolved", "tracking_gssm_1.csv",
                        "metrics_vanilla_0.csv"}) {
    CHECK_MESSAGE(std::filesystem::exists(dir + "/" + f), f);
  }

  const AbReport null = run_ab_experiment(c, "", sac::Mode::vanilla);
  for (std::size_t i = 0; i < null.runs.size(); i += 2) {
    CHECK(null.runs[i].final_rmse == null.runs[i + 1].final_rmse);
    CHECK(null.runs[i].tracking_rmse == null.runs[i + 1].tracking_rmse);
  }
  CHECK(null.vanilla.final_mean == null.gssm.final_mean);

  ExperimentConfig one = c;
  one.seeds = {0};
  CHECK_THROWS_AS(run_ab_experiment(one, ""), ConfigError);
}

TEST_CASE("summary skips failed runs") {
  std::vector<AbRun> runs(3);
  runs[0].final_rmse = 2.0;
  runs[1].final_rmse = 4.0;
  runs[2].final_rmse = 100.0;
  runs[2].failed = true;
  for (auto& r : runs) r.tracking_segments = {1.0, 3.0};
  const auto s = summarise_mode(runs, sac::Mode::gssm);
  CHECK(s.ok_seeds == 2);
  CHECK(s.final_mean == 3.0);
  CHECK(s.final_std == doctest::Approx(std::sqrt(2.0)));
  CHECK(s.median_tracking_delta == 2.0);
  CHECK(summarise_mode(runs, sac::Mode::vanilla).ok_seeds == 0);
}

TEST_CASE("checkpoint round trip is byte-identical") {
  RunState st = init_run(tiny_config(), 4);
  run_training(st, 2);
  const std::string dir = temp_dir("ckpt");
  save_checkpoint(dir + "/a.bin", st);
  const RunState back = load_checkpoint(dir + "/a.bin");
  CHECK(serialize_run(back) == serialize_run(st));
  CHECK(back.metrics == st.metrics);
  CHECK(back.counters == st.counters);
  CHECK(back.next_episode == 2);
}

TEST_CASE("checkpoint rejects version mismatch, truncation and corruption") {
  RunState st = init_run(tiny_config(sac::Mode::vanilla), 0);
  run_training(st, 1);
  const std::string bytes = serialize_run(st);

  std::string wrong = bytes;
  wrong[8] = 7;
  CHECK_THROWS_WITH_AS(deserialize_run(wrong), doctest::Contains("version 7"), IoError);

  for (std::size_t cut : {std::size_t{3}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    CHECK_THROWS_WITH_AS(deserialize_run(bytes.substr(0, cut)), doctest::Contains("offset"), IoError);
  }
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  CHECK_THROWS_AS(deserialize_run(flipped), IoError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.bin"), IoError);
}

TEST_CASE("resuming from a checkpoint matches an uninterrupted run") {
  const ExperimentConfig c = tiny_config();
  RunState full = init_run(c, 8);
  run_training(full);

  RunState part = init_run(c, 8);
  run_training(part, 2);
  const std::string path = temp_dir("resume") + "/mid.bin";
  save_checkpoint(path, part);
  RunState resumed = load_checkpoint(path);
  run_training(resumed);
  CHECK(resumed.metrics == full.metrics);
  CHECK(resumed.counters == full.counters);
  CHECK(serialize_run(resumed) == serialize_run(full));
}
