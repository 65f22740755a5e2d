// SPDX-License-Identifier: Apache-2.0
#include "fesgssm/bench/gp.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "fesgssm/errors.hpp"

namespace fesgssm::bench {

double se_kernel(double a, double b, const GpHyper& h) {
  const double d = (a - b) / h.lengthscale;
  return h.signal_var * std::exp(-0.5 * d * d);
}

GpModel gp_fit(const std::vector<double>& x, const std::vector<double>& y, const GpHyper& hyper) {
  if (x.size() != y.size()) throw DimensionError("gp_fit: inputs and targets differ in length");
  if (x.size() < 2) throw ContractError("gp_fit: need at least 2 points");
  if (!(hyper.lengthscale > 0.0 && hyper.signal_var > 0.0 && hyper.noise_var >= 0.0)) {
    throw ConfigError("gp_fit: lengthscale and signal variance must be > 0, noise >= 0");
  }
  const auto n = static_cast<Eigen::Index>(x.size());
  GpModel gp;
  gp.x = Eigen::Map<const Eigen::VectorXd>(x.data(), n);
  gp.y = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
  gp.hyper = hyper;
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) K(i, j) = K(j, i) = se_kernel(x[i], x[j], hyper);
  }
  double jitter = 0.0;
  for (;;) {
    Eigen::MatrixXd A = K;
    A.diagonal().array() += hyper.noise_var + jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() == Eigen::Success) {
      gp.chol = llt.matrixL();
      break;
    }
    jitter = jitter == 0.0 ? 1e-10 : jitter * 10.0;
    if (jitter > 1e-2) throw NumericalError("gp_fit: kernel matrix not positive definite even with jitter 1e-2");
  }
  gp.jitter = jitter;
  const Eigen::VectorXd w = gp.chol.triangularView<Eigen::Lower>().solve(gp.y);
  gp.alpha = gp.chol.transpose().triangularView<Eigen::Upper>().solve(w);
  const double log_det = 2.0 * gp.chol.diagonal().array().log().sum();
  gp.log_marginal = -0.5 * gp.y.dot(gp.alpha) - 0.5 * log_det - 0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
  return gp;
}

GpModel gp_fit(const std::vector<double>& x, const std::vector<double>& y, const GpGrid& grid) {
  GpModel best;
  double best_lml = -std::numeric_limits<double>::infinity();
  for (double l : grid.lengthscales) {
    for (double sf : grid.signal_vars) {
      for (double sn : grid.noise_vars) {
        GpModel gp = gp_fit(x, y, GpHyper{l, sf, sn});
        if (gp.log_marginal > best_lml) {
          best_lml = gp.log_marginal;
          best = std::move(gp);
        }
      }
    }
  }
  if (!std::isfinite(best_lml)) throw NumericalError("gp_fit: no grid point gave a finite marginal likelihood");
  return best;
}

gssm::DiagGaussian gp_predict(const GpModel& gp, const std::vector<double>& queries) {
  const auto n = gp.x.size();
  const auto m = static_cast<Eigen::Index>(queries.size());
  Eigen::MatrixXd Ks(n, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) Ks(i, j) = se_kernel(gp.x[i], queries[j], gp.hyper);
  }
  const Eigen::MatrixXd V = gp.chol.triangularView<Eigen::Lower>().solve(Ks);
  gssm::DiagGaussian out{nn::Tensor(queries.size(), 1), nn::Tensor(queries.size(), 1)};
  for (Eigen::Index j = 0; j < m; ++j) {
    out.mean[j] = Ks.col(j).dot(gp.alpha);
    const double latent = std::max(gp.hyper.signal_var - V.col(j).squaredNorm(), 0.0);
    out.var[j] = std::max(latent + gp.hyper.noise_var, gssm::kVarianceFloor);
  }
  return out;
}

}  // namespace fesgssm::bench
