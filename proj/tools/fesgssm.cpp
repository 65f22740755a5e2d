// SPDX-License-Identifier: Apache-2.0
// Command-line front end: train, eval, track, ab, bench-kink.
#include <CLI11.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "fesgssm/bench/benchmark.hpp"
#include "fesgssm/errors.hpp"
#include "fesgssm/harness/checkpoint.hpp"
#include "fesgssm/harness/experiment.hpp"

using namespace fesgssm;
using namespace fesgssm::harness;

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

void write_resolved(const std::string& dir, const ExperimentConfig& cfg) {
  open_out(dir + "/config.resolved") << "# source " << source_hash() << '\n' << to_ini(cfg);
}

int cmd_train(const std::string& config, const std::string& mode, std::uint64_t seed, const std::string& out_dir,
              const std::string& resume) {
  RunState st;
  if (!resume.empty()) {
    st = load_checkpoint(resume);
  } else {
    ExperimentConfig cfg = config.empty() ? ExperimentConfig{} : load_config(config);
    if (!mode.empty()) cfg.mode = sac::parse_mode(mode);
    st = init_run(cfg, seed);
  }
  std::filesystem::create_directories(out_dir);
  write_resolved(out_dir, st.cfg);
  int rc = 0;
  try {
    run_training(st, std::nullopt, out_dir + "/checkpoint_failed.bin");
  } catch (const TrainingError& e) {
    std::cerr << "training failed: " << e.what() << '\n';
    rc = 3;
  }
  {
    auto out = open_out(out_dir + "/metrics.csv");
    write_metrics_csv(out, st.metrics, st.cfg);
  }
  if (rc == 0) save_checkpoint(out_dir + "/checkpoint.bin", st);
  const auto evals = st.metrics.evals();
  if (!evals.empty()) std::cout << "final eval RMSE " << evals.back().rmse_deg << " deg\n";
  return rc;
}

int cmd_eval(const std::string& ckpt, std::size_t episodes, std::uint64_t eval_seed) {
  const RunState st = load_checkpoint(ckpt);
  const gssm::FilterParams* filter = st.model ? &st.model->filter : nullptr;
  const double rmse = evaluate_rmse(st.agent, filter, st.cfg, episodes, eval_seed);
  std::cout << "rmse_deg," << std::setprecision(10) << rmse << '\n';
  return 0;
}

int cmd_track(const std::string& ckpt, const std::string& schedule_path, const std::string& out_dir,
              std::uint64_t seed) {
  const RunState st = load_checkpoint(ckpt);
  const TrackingSchedule schedule = load_schedule(schedule_path.empty() ? st.cfg.tracking_schedule : schedule_path);
  const gssm::FilterParams* filter = st.model ? &st.model->filter : nullptr;
  const TrackingResult tr = run_tracking_trial(deterministic_policy(st.agent), filter, st.cfg, schedule, seed);
  std::filesystem::create_directories(out_dir);
  {
    auto out = open_out(out_dir + "/trajectory.csv");
    out << provenance_header(st.cfg);
    arm::write_trajectory_csv(out, tr.rows);
  }
  std::cout << "tracking RMSE " << tr.rmse_deg << " deg; per segment:";
  for (double s : tr.segment_rmse_deg) std::cout << ' ' << s;
  std::cout << '\n';
  return 0;
}

int cmd_ab(const std::string& config, std::size_t n_seeds, const std::string& out_dir) {
  ExperimentConfig cfg = config.empty() ? ExperimentConfig{} : load_config(config);
  if (n_seeds > 0) {
    cfg.seeds.clear();
    for (std::size_t i = 0; i < n_seeds; ++i) cfg.seeds.push_back(i);
  }
  const AbReport rep = run_ab_experiment(cfg, out_dir);
  for (const auto* s : {&rep.vanilla, &rep.gssm}) {
    std::cout << sac::to_string(s->mode) << ": final RMSE " << s->final_mean << " +- " << s->final_std
              << " deg over " << s->ok_seeds << " seeds; tracking delta " << s->median_tracking_delta << " deg\n";
  }
  return rep.vanilla.ok_seeds == cfg.seeds.size() && rep.gssm.ok_seeds == cfg.seeds.size() ? 0 : 3;
}

// [kink] section keys mirror KinkBenchConfig fields.
bench::KinkBenchConfig load_kink_config(const std::string& path) {
  bench::KinkBenchConfig c;
  if (path.empty()) return c;
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("bench-kink config: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (section != "kink") throw ConfigError("bench-kink config: unknown section " + section);
    for (const auto& [key, v] : body) {
      const std::string s = v.get_value<std::string>();
      auto num = [&] { return std::stod(s); };
      auto uint = [&] { return static_cast<std::size_t>(std::stoull(s)); };
      auto flag = [&] { return s == "true" || s == "1"; };
      if (key == "sigma_p") c.system.sigma_p = num();
      else if (key == "sigma_o") c.system.sigma_o = num();
      else if (key == "n_steps") c.n_steps = uint();
      else if (key == "x0") c.x0 = num();
      else if (key == "heldout_steps") c.heldout_steps = uint();
      else if (key == "test_grid") c.test_grid = uint();
      else if (key == "window") c.window = uint();
      else if (key == "batch") c.batch = uint();
      else if (key == "train_steps") c.train_steps = c.hyper.total_steps = uint();
      else if (key == "lr") c.hyper.lr = num();
      else if (key == "transition_lr") c.hyper.transition_lr = num();
      else if (key == "regression_lr") c.hyper.regression_lr = num();
      else if (key == "kl_weight") c.hyper.kl_weight = num();
      else if (key == "hidden") c.hidden = uint();
      else if (key == "members") c.members = uint();
      else if (key == "ensemble_kl_path") c.ensemble_kl_path = flag();
      else if (key == "ensemble_regression") c.ensemble_regression = flag();
      else if (key == "prior_scale") c.prior_scale = num();
      else if (key == "learned_floor") c.learned_floor = flag();
      else if (key == "floor_init") c.floor_init = num();
      else throw ConfigError("bench-kink config: unknown key kink." + key);
    }
  }
  c.system.validate();
  return c;
}

int cmd_bench_kink(std::size_t n_seeds, const std::string& config, const std::string& out_dir) {
  const bench::KinkBenchConfig cfg = load_kink_config(config);
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < n_seeds; ++i) seeds.push_back(i);
  const bench::KinkReport rep = bench::run_kink_benchmark(cfg, seeds);
  std::filesystem::create_directories(out_dir);
  {
    auto out = open_out(out_dir + "/report.csv");
    bench::write_kink_csv(out, rep);
  }
  for (const auto& a : rep.aggregate) {
    std::cout << a.variant << ": median KL " << a.median << ", mean " << a.mean << " +- " << a.std
              << ", median coverage " << a.median_coverage << " (" << a.ok_seeds << " seeds)\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FES arm control with GSSM-conditioned SAC"};
  app.require_subcommand(1);

  std::string config, mode, out_dir = "runs/latest", resume, ckpt, schedule;
  std::uint64_t seed = 0, eval_seed = 12345;
  std::size_t episodes = 50, n_seeds = 0;

  auto* train = app.add_subcommand("train", "Train one agent");
  train->add_option("--config", config, "Config file");
  train->add_option("--mode", mode, "vanilla or gssm")->check(CLI::IsMember({"vanilla", "gssm"}));
  train->add_option("--seed", seed, "Run seed");
  train->add_option("--out", out_dir, "Output directory");
  train->add_option("--resume", resume, "Continue from a checkpoint");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--ckpt", ckpt, "Checkpoint")->required();
  eval->add_option("--episodes", episodes, "Evaluation episodes");
  eval->add_option("--eval-seed", eval_seed, "Seed for evaluation episodes");

  auto* track = app.add_subcommand("track", "Run the tracking trial");
  track->add_option("--ckpt", ckpt, "Checkpoint")->required();
  track->add_option("--schedule", schedule, "Schedule CSV");
  track->add_option("--out", out_dir, "Output directory");
  track->add_option("--seed", seed, "Trial seed");

  auto* ab = app.add_subcommand("ab", "Vanilla versus GSSM over several seeds");
  ab->add_option("--config", config, "Config file");
  ab->add_option("--seeds", n_seeds, "Number of seeds (0..N-1); default from config");
  ab->add_option("--out", out_dir, "Output directory");

  std::size_t kink_seeds = 5;
  auto* kink = app.add_subcommand("bench-kink", "Kink transition benchmark");
  kink->add_option("--seeds", kink_seeds, "Number of seeds")->check(CLI::Range(2, 1000));
  kink->add_option("--config", config, "INI file with a [kink] section");
  kink->add_option("--out", out_dir, "Output directory");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(config, mode, seed, out_dir, resume);
    if (*eval) return cmd_eval(ckpt, episodes, eval_seed);
    if (*track) return cmd_track(ckpt, schedule, out_dir, seed);
    if (*ab) return cmd_ab(config, n_seeds, out_dir);
    if (*kink) return cmd_bench_kink(kink_seeds, config, out_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
