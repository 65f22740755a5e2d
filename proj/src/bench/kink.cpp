// SPDX-License-Identifier: Apache-2.0
#include "fesgssm/bench/kink.hpp"

#include <cmath>

#include "fesgssm/errors.hpp"

namespace fesgssm::bench {

double kink(double x) { return 0.8 + (x + 0.2) * (1.0 - 5.0 / (1.0 + std::exp(-2.0 * x))); }

void KinkSystem::validate() const {
  if (!(sigma_p >= 0.0) || !(sigma_o >= 0.0)) throw ConfigError("kink: noise levels must be >= 0");
}

double kink_step(const KinkSystem& sys, double x, Rng& rng) {
  const double next = kink(x);
  return sys.sigma_p > 0.0 ? next + sys.sigma_p * rng.normal() : next;
}

KinkDataset generate_kink_dataset(const KinkSystem& sys, std::size_t n_steps, double x0, Rng& rng) {
  if (n_steps < 2) throw ContractError("kink dataset needs at least 2 steps");
  sys.validate();
  KinkDataset d;
  d.states.reserve(n_steps);
  d.observations.reserve(n_steps);
  double x = x0;
  for (std::size_t t = 0; t < n_steps; ++t) {
    d.states.push_back(x);
    d.observations.push_back(sys.sigma_o > 0.0 ? x + sys.sigma_o * rng.normal() : x);
    x = kink_step(sys, x, rng);
  }
  return d;
}

}  // namespace fesgssm::bench
