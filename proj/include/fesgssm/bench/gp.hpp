// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <vector>

#include "fesgssm/gssm/gaussian.hpp"

namespace fesgssm::bench {

struct GpHyper {
  double lengthscale = 1.0;
  double signal_var = 1.0;
  double noise_var = 1e-2;
};

struct GpGrid {
  std::vector<double> lengthscales{0.1, 0.2, 0.5, 1.0, 2.0};
  std::vector<double> signal_vars{0.5, 1.0, 2.0};
  std::vector<double> noise_vars{1e-4, 1e-3, 1e-2};
};

/// Exact 1-D GP regressor with a squared-exponential kernel.
struct GpModel {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
  GpHyper hyper;
  Eigen::MatrixXd chol;  // lower factor of K + (noise + jitter) I
  Eigen::VectorXd alpha;
  double jitter = 0.0;
  double log_marginal = 0.0;
};

double se_kernel(double a, double b, const GpHyper& h);

/// Fits with fixed hyperparameters. Jitter escalates from 1e-10 up to 1e-2
/// on a failed factorisation; beyond that NumericalError.
GpModel gp_fit(const std::vector<double>& x, const std::vector<double>& y, const GpHyper& hyper);

/// Picks the grid point with the highest log marginal likelihood.
GpModel gp_fit(const std::vector<double>& x, const std::vector<double>& y, const GpGrid& grid);

/// Predictive distribution of a noisy target at each query (rows x 1);
/// variance includes the noise term and never drops below the shared floor.
gssm::DiagGaussian gp_predict(const GpModel& gp, const std::vector<double>& queries);

}  // namespace fesgssm::bench
