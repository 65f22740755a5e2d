// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fesgssm/arm/arm.hpp"
#include "fesgssm/gssm/trainer.hpp"
#include "fesgssm/sac/sac.hpp"

namespace fesgssm::harness {

/// Everything one run depends on. Serialised in full next to every result.
struct ExperimentConfig {
  sac::Mode mode = sac::Mode::gssm;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t episodes = 100;
  std::size_t eval_every = 5;
  std::size_t eval_episodes = 50;
  /// SAC updates start at this (0-based) episode.
  std::size_t update_start_episode = 1;
  std::string output_dir = "runs";

  /// Applied to observations before the filter and the agent see them.
  std::array<double, 4> obs_scale{1.0, 1.0, 0.2, 0.2};

  arm::ArmConfig arm;
  bool freeze_fatigue = false;
  double reset_phi_lo = 0.4;
  double reset_phi_hi = 1.0;

  gssm::GssmDims dims;
  /// total_steps 0 means gssm_steps times the number of update phases.
  gssm::GssmHyper gssm_hyper = [] {
    gssm::GssmHyper h;
    h.total_steps = 0;
    return h;
  }();
  std::string transition = "ensemble";  // or "gated"
  std::size_t transition_hidden = 64;
  std::size_t ensemble_members = 10;
  double prior_scale = 1.0;
  bool learned_floor = true;
  double floor_init = 1e-2;
  /// Gradient steps per GSSM update phase and episodes per step.
  std::size_t gssm_steps = 100;
  std::size_t gssm_batch = 16;

  sac::SacConfig sac;

  std::string tracking_schedule = "data/tracking_schedule.csv";

  /// Throws ConfigError on inconsistent widths or out-of-range values.
  void validate() const;
  arm::MuscleSet muscles() const;
  arm::ResetRanges reset_ranges() const;
};

/// INI text with sections [experiment] [arm] [gssm] [transition] [sac]
/// [tracking]. Unknown keys are rejected; missing keys keep defaults.
ExperimentConfig parse_config(const std::string& ini_text);
ExperimentConfig load_config(const std::string& path);
/// Full INI rendering; parse_config(to_ini(c)) reproduces c.
std::string to_ini(const ExperimentConfig& c);

/// Source hash fixed at build time.
std::string source_hash();

}  // namespace fesgssm::harness
