// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "fesgssm/rng.hpp"

namespace fesgssm::bench {

/// f(x) = 0.8 + (x + 0.2) (1 - 5 / (1 + exp(-2x))).
double kink(double x);

struct KinkSystem {
  double sigma_p = 0.05;  // process noise std
  double sigma_o = 0.02;  // observation noise std

  /// Throws ConfigError on negative noise levels.
  void validate() const;
};

/// f(x) plus process noise.
double kink_step(const KinkSystem& sys, double x, Rng& rng);

/// Latent trajectory of `n_steps` states starting at x0, plus its noisy
/// observations.
struct KinkDataset {
  std::vector<double> states;
  std::vector<double> observations;

  std::size_t pair_count() const { return states.empty() ? 0 : states.size() - 1; }
};

/// Throws ContractError when n_steps < 2.
KinkDataset generate_kink_dataset(const KinkSystem& sys, std::size_t n_steps, double x0, Rng& rng);

}  // namespace fesgssm::bench
