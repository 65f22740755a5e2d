// SPDX-License-Identifier: Apache-2.0
#include "fesgssm/bench/benchmark.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include "fesgssm/errors.hpp"
#include "fesgssm/transitions/ensemble.hpp"
#include "fesgssm/transitions/gated.hpp"

namespace fesgssm::bench {

using nn::Tensor;

KlSummary evaluate_transition_kl(const Predictive& model, const GpModel& gp, const std::vector<double>& test_points) {
  if (test_points.empty()) throw ContractError("evaluate_transition_kl: no test points");
  const gssm::DiagGaussian g = gp_predict(gp, test_points);
  const gssm::DiagGaussian p = model(test_points);
  if (p.rows() != test_points.size() || p.width() != 1) {
    throw DimensionError("evaluate_transition_kl: model returned " + p.mean.shape_string());
  }
  KlSummary s;
  for (std::size_t i = 0; i < test_points.size(); ++i) {
    s.mean_kl += gssm::kl_diag_gaussians(g.row(i), p.row(i));
    s.reverse_kl += gssm::kl_diag_gaussians(p.row(i), g.row(i));
  }
  const auto n = static_cast<double>(test_points.size());
  s.mean_kl /= n;
  s.reverse_kl /= n;
  return s;
}

double coverage95(const Predictive& model, const std::vector<double>& from, const std::vector<double>& to) {
  if (from.size() != to.size() || from.empty()) throw ContractError("coverage95: need matching non-empty pairs");
  const gssm::DiagGaussian p = model(from);
  std::size_t inside = 0;
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (std::abs(to[i] - p.mean[i]) <= 1.959963984540054 * std::sqrt(p.var[i])) ++inside;
  }
  return static_cast<double>(inside) / static_cast<double>(from.size());
}

void gauss_hermite(std::size_t n, std::vector<double>& nodes, std::vector<double>& weights) {
  // Golub-Welsch on the Jacobi matrix of the physicists' Hermite recurrence.
  const auto N = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(N, N);
  for (Eigen::Index i = 1; i < N; ++i) J(i, i - 1) = J(i - 1, i) = std::sqrt(static_cast<double>(i) / 2.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  nodes.assign(n, 0.0);
  weights.assign(n, 0.0);
  for (Eigen::Index i = 0; i < N; ++i) {
    nodes[i] = es.eigenvalues()[i];
    const double v0 = es.eigenvectors()(0, i);
    weights[i] = std::sqrt(std::numbers::pi) * v0 * v0;
  }
}

Predictive gssm_observation_predictive(const gssm::GssmModel& model, double latent_lo, double latent_hi,
                                       std::size_t grid, std::size_t hermite) {
  if (model.filter.dims.latent != 1 || model.filter.dims.obs != 1) {
    throw DimensionError("observation-space predictive needs a 1-D latent and a 1-D observation");
  }
  if (!(latent_lo < latent_hi) || grid < 2) throw ContractError("observation-space predictive: bad latent grid");
  Tensor zs(grid, 1);
  for (std::size_t i = 0; i < grid; ++i) {
    zs[i] = latent_lo + (latent_hi - latent_lo) * static_cast<double>(i) / static_cast<double>(grid - 1);
  }
  const Tensor decoded = gssm::decode(model.decoder, zs).mean;
  std::vector<double> nodes, weights;
  gauss_hermite(hermite, nodes, weights);

  // Copies keep the closure valid after the model changes or goes away.
  auto decoder = model.decoder;
  std::shared_ptr<const gssm::TransitionModel> transition(model.transition->clone());
  return [=](const std::vector<double>& queries) {
    const std::size_t n = queries.size();
    Tensor z(n, 1);
    for (std::size_t q = 0; q < n; ++q) {
      std::size_t best = 0;
      double best_err = std::abs(decoded[0] - queries[q]);
      for (std::size_t i = 1; i < grid; ++i) {
        const double err = std::abs(decoded[i] - queries[q]);
        if (err < best_err) {
          best_err = err;
          best = i;
        }
      }
      z[q] = zs[best];
    }
    const gssm::DiagGaussian next = transition->predict(z);
    Tensor pts(n * hermite, 1);
    for (std::size_t q = 0; q < n; ++q) {
      const double sd = std::sqrt(2.0 * next.var[q]);
      for (std::size_t k = 0; k < hermite; ++k) pts[q * hermite + k] = next.mean[q] + sd * nodes[k];
    }
    const gssm::DiagGaussian obs = gssm::decode(decoder, pts);
    gssm::DiagGaussian out{Tensor(n, 1), Tensor(n, 1)};
    const double norm = 1.0 / std::sqrt(std::numbers::pi);
    for (std::size_t q = 0; q < n; ++q) {
      double m = 0.0, m2 = 0.0;
      for (std::size_t k = 0; k < hermite; ++k) {
        const double w = weights[k] * norm, mu = obs.mean[q * hermite + k];
        m += w * mu;
        m2 += w * (mu * mu + obs.var[q * hermite + k]);
      }
      out.mean[q] = m;
      out.var[q] = std::max(m2 - m * m, gssm::kVarianceFloor);
    }
    return out;
  };
}

gssm::GssmModel make_kink_model(const std::string& variant, const KinkBenchConfig& cfg, Rng& rng) {
  const gssm::GssmDims dims{.obs = 1,
                            .action = 0,
                            .latent = 1,
                            .hidden = cfg.hidden,
                            .ws_hidden = 32,
                            .wx_hidden = cfg.hidden,
                            .wg_hidden = cfg.hidden};
  auto fp = gssm::FilterParams::create(dims, rng);
  auto dp = gssm::DecoderParams::create(dims, rng);
  std::unique_ptr<gssm::TransitionModel> tr;
  if (variant == "gated") {
    tr = std::make_unique<transitions::GatedTransition>(transitions::GatedConfig{.latent = 1, .hidden = cfg.hidden}, rng);
  } else if (variant == "ensemble") {
    tr = std::make_unique<transitions::EnsembleTransition>(
        transitions::EnsembleConfig{.latent = 1,
                                    .members = cfg.members,
                                    .hidden = cfg.hidden,
                                    .prior_scale = cfg.prior_scale,
                                    .learned_floor = cfg.learned_floor,
                                    .floor_init = cfg.floor_init},
        rng);
  } else {
    throw ConfigError("unknown transition variant '" + variant + "'");
  }
  return gssm::GssmModel(std::move(fp), std::move(dp), std::move(tr));
}

namespace {

std::vector<gssm::ObservedSequence> windows(const std::vector<double>& obs, std::size_t len) {
  std::vector<gssm::ObservedSequence> out;
  const std::size_t stride = std::max<std::size_t>(1, len / 2);
  for (std::size_t start = 0; start + len <= obs.size(); start += stride) {
    gssm::ObservedSequence s;
    s.obs = Tensor(len, 1, std::vector<double>(obs.begin() + static_cast<long>(start), obs.begin() + static_cast<long>(start + len)));
    s.actions = Tensor(len, 0);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

KinkSeedResult run_kink_seed(const KinkBenchConfig& cfg, std::uint64_t seed, const std::string& variant) {
  KinkSeedResult res;
  res.seed = seed;
  res.variant = variant;
  try {
    Rng data_rng = Rng::derive(seed, "kink-data");
    const KinkDataset train = generate_kink_dataset(cfg.system, cfg.n_steps, cfg.x0, data_rng);
    Rng held_rng = Rng::derive(seed, "kink-heldout");
    const KinkDataset held = generate_kink_dataset(cfg.system, cfg.heldout_steps, cfg.x0, held_rng);

    const std::vector<double>& y = train.observations;
    const std::vector<double> gx(y.begin(), y.end() - 1), gy(y.begin() + 1, y.end());
    const GpModel gp = gp_fit(gx, gy, cfg.gp_grid);
    const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
    std::vector<double> test(cfg.test_grid);
    for (std::size_t i = 0; i < cfg.test_grid; ++i) {
      test[i] = *lo + (*hi - *lo) * static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(1, cfg.test_grid - 1));
    }

    Rng model_rng = Rng::derive(seed, "kink-model-" + variant);
    gssm::GssmModel model = make_kink_model(variant, cfg, model_rng);
    gssm::GssmHyper hyper = cfg.hyper;
    hyper.total_steps = cfg.train_steps;
    if (variant == "ensemble") {
      hyper.transition_kl_grad = cfg.ensemble_kl_path;
      hyper.transition_regression = cfg.ensemble_regression;
    } else {
      hyper.transition_kl_grad = true;
      hyper.transition_regression = false;
    }
    auto state = gssm::GssmTrainerState::for_model(model);
    const auto data = windows(y, std::min(cfg.window, y.size()));
    Rng train_rng = Rng::derive(seed, "kink-train-" + variant);
    gssm::train_gssm(model, state, data, cfg.train_steps, cfg.batch, hyper, train_rng);

    // Latent range covered by the filter on the training trajectory.
    gssm::ObservedSequence full{Tensor(y.size(), 1, std::vector<double>(y)), Tensor(y.size(), 0)};
    Rng filt_rng = Rng::derive(seed, "kink-filter");
    const auto traj = gssm::filter_trajectory(model.filter, model.decoder, full, filt_rng);
    double zlo = 1e300, zhi = -1e300;
    for (const auto& st : traj.steps) {
      zlo = std::min(zlo, st.q.mean[0]);
      zhi = std::max(zhi, st.q.mean[0]);
    }
    const double pad = 0.25 * std::max(zhi - zlo, 1e-3);
    const Predictive pred = gssm_observation_predictive(model, zlo - pad, zhi + pad);

    const KlSummary kl = evaluate_transition_kl(pred, gp, test);
    res.mean_kl = kl.mean_kl;
    res.reverse_kl = kl.reverse_kl;
    const std::vector<double>& h = held.observations;
    res.coverage95 = coverage95(pred, std::vector<double>(h.begin(), h.end() - 1), std::vector<double>(h.begin() + 1, h.end()));
    if (!std::isfinite(res.mean_kl) || !std::isfinite(res.reverse_kl)) throw TrainingError("non-finite KL");
  } catch (const TrainingError& e) {
    res.failed = true;
    res.error = e.what();
  } catch (const NumericalError& e) {
    res.failed = true;
    res.error = e.what();
  }
  return res;
}

KinkVariantSummary summarise_variant(const std::vector<KinkSeedResult>& rows, const std::string& variant) {
  KinkVariantSummary s{.variant = variant};
  std::vector<double> kls, cov;
  for (const auto& r : rows) {
    if (r.variant != variant || r.failed) continue;
    kls.push_back(r.mean_kl);
    cov.push_back(r.coverage95);
  }
  s.ok_seeds = kls.size();
  if (kls.empty()) return s;
  for (double v : kls) s.mean += v;
  s.mean /= static_cast<double>(kls.size());
  for (double v : kls) s.std += (v - s.mean) * (v - s.mean);
  s.std = kls.size() > 1 ? std::sqrt(s.std / static_cast<double>(kls.size() - 1)) : 0.0;
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  s.median = median(kls);
  s.median_coverage = median(cov);
  return s;
}

KinkReport run_kink_benchmark(const KinkBenchConfig& cfg, const std::vector<std::uint64_t>& seeds,
                              const std::vector<std::string>& variants) {
  if (seeds.size() < 2) throw ContractError("run_kink_benchmark: need at least 2 seeds");
  KinkReport report;
  for (std::uint64_t seed : seeds) {
    for (const auto& v : variants) report.seeds.push_back(run_kink_seed(cfg, seed, v));
  }
  for (const auto& v : variants) report.aggregate.push_back(summarise_variant(report.seeds, v));
  return report;
}

void write_kink_csv(std::ostream& out, const KinkReport& report) {
  out << "seed,variant,mean_kl,reverse_kl,coverage95,failed\n";
  out.precision(10);
  for (const auto& r : report.seeds) {
    out << r.seed << ',' << r.variant << ',' << r.mean_kl << ',' << r.reverse_kl << ',' << r.coverage95 << ','
        << (r.failed ? 1 : 0) << '\n';
  }
}

}  // namespace fesgssm::bench
