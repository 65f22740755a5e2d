// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "fesgssm/bench/gp.hpp"
#include "fesgssm/bench/kink.hpp"
#include "fesgssm/gssm/trainer.hpp"

namespace fesgssm::bench {

/// Maps query points to a 1-D predictive distribution per point.
using Predictive = std::function<gssm::DiagGaussian(const std::vector<double>&)>;

struct KlSummary {
  double mean_kl = 0.0;     // KL[GP || model]
  double reverse_kl = 0.0;  // KL[model || GP]
};

/// Mean over test points of the per-point KL between the GP posterior and
/// the model predictive. Throws ContractError on an empty test set.
KlSummary evaluate_transition_kl(const Predictive& model, const GpModel& gp, const std::vector<double>& test_points);

/// Fraction of pairs whose successor lies inside the central 95% interval
/// of the predictive at the predecessor.
double coverage95(const Predictive& model, const std::vector<double>& from, const std::vector<double>& to);

/// Gauss-Hermite nodes and weights for integrals against exp(-t^2).
void gauss_hermite(std::size_t n, std::vector<double>& nodes, std::vector<double>& weights);

/// One-step predictive of a 1-D GSSM in observation space: find the latent
/// whose decoded mean matches the query (grid search over `latent_lo..hi`),
/// push it through the transition, and decode the result with moment
/// matching over Gauss-Hermite nodes.
Predictive gssm_observation_predictive(const gssm::GssmModel& model, double latent_lo, double latent_hi,
                                       std::size_t grid = 2001, std::size_t hermite = 20);

struct KinkBenchConfig {
  KinkSystem system;
  std::size_t n_steps = 600;
  double x0 = 0.5;
  std::size_t heldout_steps = 300;
  std::size_t test_grid = 100;
  GpGrid gp_grid;

  std::size_t window = 50;
  std::size_t batch = 8;
  std::size_t train_steps = 3000;
  gssm::GssmHyper hyper{.lr = 1e-3, .transition_lr = 3e-3, .total_steps = 3000};
  std::size_t hidden = 64;
  std::size_t members = 10;
  bool ensemble_kl_path = true;
  bool ensemble_regression = false;
  double prior_scale = 1.0;
  bool learned_floor = true;
  double floor_init = 1e-2;
};

struct KinkSeedResult {
  std::uint64_t seed = 0;
  std::string variant;
  double mean_kl = 0.0;
  double reverse_kl = 0.0;
  double coverage95 = 0.0;
  bool failed = false;
  std::string error;
};

struct KinkVariantSummary {
  std::string variant;
  std::size_t ok_seeds = 0;
  double mean = 0.0;
  double std = 0.0;
  double median = 0.0;
  double median_coverage = 0.0;
};

struct KinkReport {
  std::vector<KinkSeedResult> seeds;
  std::vector<KinkVariantSummary> aggregate;
};

/// Builds the GSSM for a variant ("gated" or "ensemble") with a 1-D latent.
gssm::GssmModel make_kink_model(const std::string& variant, const KinkBenchConfig& cfg, Rng& rng);

/// Runs one seed and one variant end to end. Training errors become a
/// failed record instead of propagating.
KinkSeedResult run_kink_seed(const KinkBenchConfig& cfg, std::uint64_t seed, const std::string& variant);

/// Runs every variant on every seed with identical data per seed. Throws
/// ContractError with fewer than two seeds.
KinkReport run_kink_benchmark(const KinkBenchConfig& cfg, const std::vector<std::uint64_t>& seeds,
                              const std::vector<std::string>& variants = {"gated", "ensemble"});

KinkVariantSummary summarise_variant(const std::vector<KinkSeedResult>& rows, const std::string& variant);

/// Columns: seed, variant, mean_kl, reverse_kl, coverage95, failed.
void write_kink_csv(std::ostream& out, const KinkReport& report);

}  // namespace fesgssm::bench
