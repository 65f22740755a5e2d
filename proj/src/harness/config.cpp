// SPDX-License-Identifier: Apache-2.0
#include "fesgssm/harness/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "fesgssm/errors.hpp"

#ifndef FESGSSM_SOURCE_HASH
#define FESGSSM_SOURCE_HASH "unknown"
#endif

namespace fesgssm::harness {

std::string source_hash() { return FESGSSM_SOURCE_HASH; }

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("experiment: at least one seed required");
  if (episodes == 0) throw ConfigError("experiment: episodes must be >= 1");
  if (eval_every == 0 || eval_episodes == 0) throw ConfigError("experiment: eval cadence and count must be >= 1");
  for (double s : obs_scale) {
    if (!(s > 0.0)) throw ConfigError("experiment: obs_scale entries must be > 0");
  }
  arm.validate();
  muscles().validate();
  if (!(reset_phi_lo > 0.2 && reset_phi_lo <= reset_phi_hi && reset_phi_hi <= 1.0)) {
    throw ConfigError("arm: reset phi range must lie in (0.2, 1]");
  }
  if (dims.obs != arm::kObsWidth || dims.action != arm::kMuscles) {
    throw ConfigError("gssm: obs/action widths must match the arm (4, 4)");
  }
  if (dims.latent == 0 || dims.hidden == 0) throw ConfigError("gssm: latent and hidden widths must be >= 1");
  if (transition != "ensemble" && transition != "gated") {
    throw ConfigError("transition: kind must be ensemble or gated, got '" + transition + "'");
  }
  if (transition == "ensemble" && ensemble_members < 2) throw ConfigError("transition: ensemble needs >= 2 members");
  if (gssm_steps == 0 || gssm_batch == 0) throw ConfigError("gssm: steps and batch must be >= 1");
  sac.validate();
  if (sac.obs != arm::kObsWidth || sac.action != arm::kMuscles || sac.target != arm::kJoints) {
    throw ConfigError("sac: obs/action/target widths must match the arm (4, 4, 2)");
  }
  if (sac.latent != dims.latent) throw ConfigError("sac: latent width must equal gssm latent width");
}

arm::MuscleSet ExperimentConfig::muscles() const {
  arm::MuscleSet m = arm::default_muscles();
  m.freeze_fatigue = freeze_fatigue;
  return m;
}

arm::ResetRanges ExperimentConfig::reset_ranges() const {
  arm::ResetRanges r = arm::ResetRanges::from(arm);
  r.phi = {reset_phi_lo, reset_phi_hi};
  return r;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ConfigError(key + ": not a number: '" + s + "'");
  return v;
}

std::uint64_t parse_uint(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError(key + ": not a non-negative integer: '" + s + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError(key + ": not a boolean: '" + s + "'");
}

struct Field {
  std::string section;
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

std::vector<Field> fields(ExperimentConfig& c) {
  std::vector<Field> f;
  auto num = [&f](std::string sec, std::string key, double& ref) {
    const std::string full = sec + "." + key;
    f.push_back({sec, key, [&ref, full](const std::string& s) { ref = parse_double(full, s); },
                 [&ref] { return fmt(ref); }});
  };
  auto size = [&f](std::string sec, std::string key, std::size_t& ref) {
    const std::string full = sec + "." + key;
    f.push_back({sec, key, [&ref, full](const std::string& s) { ref = parse_uint(full, s); },
                 [&ref] { return std::to_string(ref); }});
  };
  auto flag = [&f](std::string sec, std::string key, bool& ref) {
    const std::string full = sec + "." + key;
    f.push_back({sec, key, [&ref, full](const std::string& s) { ref = parse_bool(full, s); },
                 [&ref] { return std::string(ref ? "true" : "false"); }});
  };
  auto text = [&f](std::string sec, std::string key, std::string& ref) {
    f.push_back({sec, key, [&ref](const std::string& s) { ref = s; }, [&ref] { return ref; }});
  };

  f.push_back({"experiment", "mode", [&c](const std::string& s) { c.mode = sac::parse_mode(s); },
               [&c] { return sac::to_string(c.mode); }});
  f.push_back({"experiment", "seeds",
               [&c](const std::string& s) {
                 c.seeds.clear();
                 std::stringstream ss(s);
                 std::string item;
                 while (std::getline(ss, item, ',')) {
                   const auto b = item.find_first_not_of(' '), e = item.find_last_not_of(' ');
                   if (b == std::string::npos) continue;
                   c.seeds.push_back(parse_uint("experiment.seeds", item.substr(b, e - b + 1)));
                 }
               },
               [&c] {
                 std::string out;
                 for (std::size_t i = 0; i < c.seeds.size(); ++i) out += (i ? "," : "") + std::to_string(c.seeds[i]);
                 return out;
               }});
  size("experiment", "episodes", c.episodes);
  size("experiment", "eval_every", c.eval_every);
  size("experiment", "eval_episodes", c.eval_episodes);
  size("experiment", "update_start_episode", c.update_start_episode);
  text("experiment", "output_dir", c.output_dir);
  for (std::size_t i = 0; i < c.obs_scale.size(); ++i) num("experiment", "obs_scale" + std::to_string(i), c.obs_scale[i]);

  num("arm", "l1", c.arm.l1);
  num("arm", "l2", c.arm.l2);
  num("arm", "m1", c.arm.m1);
  num("arm", "m2", c.arm.m2);
  num("arm", "i1", c.arm.i1);
  num("arm", "i2", c.arm.i2);
  num("arm", "damping_s", c.arm.damping_s);
  num("arm", "damping_e", c.arm.damping_e);
  num("arm", "shoulder_lo", c.arm.shoulder.lo);
  num("arm", "shoulder_hi", c.arm.shoulder.hi);
  num("arm", "elbow_lo", c.arm.elbow.lo);
  num("arm", "elbow_hi", c.arm.elbow.hi);
  size("arm", "substeps", c.arm.substeps);
  num("arm", "dt", c.arm.dt);
  size("arm", "episode_steps", c.arm.episode_steps);
  size("arm", "retarget_step", c.arm.retarget_step);
  flag("arm", "freeze_fatigue", c.freeze_fatigue);
  num("arm", "reset_phi_lo", c.reset_phi_lo);
  num("arm", "reset_phi_hi", c.reset_phi_hi);

  size("gssm", "latent", c.dims.latent);
  size("gssm", "hidden", c.dims.hidden);
  size("gssm", "ws_hidden", c.dims.ws_hidden);
  size("gssm", "wx_hidden", c.dims.wx_hidden);
  size("gssm", "wg_hidden", c.dims.wg_hidden);
  num("gssm", "lr", c.gssm_hyper.lr);
  num("gssm", "transition_lr", c.gssm_hyper.transition_lr);
  num("gssm", "kl_weight", c.gssm_hyper.kl_weight);
  num("gssm", "warmup_fraction", c.gssm_hyper.warmup_fraction);
  size("gssm", "total_steps", c.gssm_hyper.total_steps);
  num("gssm", "clip_norm", c.gssm_hyper.clip_norm);
  flag("gssm", "transition_kl_grad", c.gssm_hyper.transition_kl_grad);
  flag("gssm", "transition_regression", c.gssm_hyper.transition_regression);
  num("gssm", "regression_lr", c.gssm_hyper.regression_lr);
  size("gssm", "steps_per_update", c.gssm_steps);
  size("gssm", "batch", c.gssm_batch);

  text("transition", "kind", c.transition);
  size("transition", "hidden", c.transition_hidden);
  size("transition", "members", c.ensemble_members);
  num("transition", "prior_scale", c.prior_scale);
  flag("transition", "learned_floor", c.learned_floor);
  num("transition", "floor_init", c.floor_init);

  size("sac", "latent", c.sac.latent);
  size("sac", "hidden", c.sac.hidden);
  num("sac", "gamma", c.sac.gamma);
  num("sac", "lr", c.sac.lr);
  num("sac", "tau", c.sac.tau);
  size("sac", "batch", c.sac.batch);
  num("sac", "init_alpha", c.sac.init_alpha);
  num("sac", "target_entropy", c.sac.target_entropy);
  num("sac", "log_std_min", c.sac.log_std_min);
  num("sac", "log_std_max", c.sac.log_std_max);
  size("sac", "replay_capacity", c.sac.replay_capacity);
  size("sac", "trajectory_capacity", c.sac.trajectory_capacity);

  text("tracking", "schedule", c.tracking_schedule);
  return f;
}

}  // namespace

ExperimentConfig parse_config(const std::string& ini_text) {
  boost::property_tree::ptree tree;
  std::istringstream in(ini_text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  ExperimentConfig c;
  const auto table = fields(c);
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("config: key '" + section + "' outside a section");
    for (const auto& [key, value] : body) {
      auto it = std::find_if(table.begin(), table.end(),
                             [&](const Field& f) { return f.section == section && f.key == key; });
      if (it == table.end()) throw ConfigError("config: unknown key " + section + "." + key);
      it->set(value.get_value<std::string>());
    }
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_ini(const ExperimentConfig& c) {
  ExperimentConfig copy = c;
  std::ostringstream out;
  std::string section;
  for (const auto& f : fields(copy)) {
    if (f.section != section) {
      if (!section.empty()) out << '\n';
      section = f.section;
      out << '[' << section << "]\n";
    }
    out << f.key << " = " << f.get() << '\n';
  }
  return out.str();
}

}  // namespace fesgssm::harness
