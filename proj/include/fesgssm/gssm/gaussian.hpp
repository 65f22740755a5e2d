// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "fesgssm/nn/tape.hpp"
#include "fesgssm/nn/tensor.hpp"

namespace fesgssm::gssm {

/// Smallest variance any model in this project emits.
inline constexpr double kVarianceFloor = 1e-6;

/// Diagonal Gaussian. Each row is one distribution, so a batch of B
/// distributions over D dims is a pair of B x D tensors.
struct DiagGaussian {
  nn::Tensor mean;
  nn::Tensor var;

  std::size_t width() const { return mean.cols(); }
  std::size_t rows() const { return mean.rows(); }
  /// Throws DimensionError on width mismatch, ContractError when a variance
  /// sits below the floor.
  void validate() const;
  /// Row `r` as its own distribution.
  DiagGaussian row(std::size_t r) const;

  friend bool operator==(const DiagGaussian&, const DiagGaussian&) = default;
};

/// DiagGaussian recorded on a tape.
struct GaussianVar {
  nn::Var mean;
  nn::Var var;

  DiagGaussian value() const { return {mean.value(), var.value()}; }
};

/// Closed-form KL[p || q] summed over dims and rows:
/// 1/2 [log(vq/vp) + (vp + (mp - mq)^2)/vq - 1].
double kl_diag_gaussians(const DiagGaussian& p, const DiagGaussian& q);

/// Negative log density of `obs` under `k`, summed over dims and rows.
double gaussian_nll(const DiagGaussian& k, const nn::Tensor& obs);

/// Differentiable per-row KL[p || q] (rows x 1).
nn::Var kl_rows(GaussianVar p, GaussianVar q);
/// Differentiable per-row negative log density (rows x 1).
nn::Var nll_rows(GaussianVar k, nn::Var obs);

/// Variance head output: softplus followed by clamping at the floor.
nn::Var variance_head(nn::Var raw);

}  // namespace fesgssm::gssm
