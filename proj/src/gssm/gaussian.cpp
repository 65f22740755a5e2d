// SPDX-License-Identifier: Apache-2.0
#include "fesgssm/gssm/gaussian.hpp"

#include <cmath>
#include <numbers>

#include "fesgssm/errors.hpp"

namespace fesgssm::gssm {

using nn::Tensor;
using nn::Var;

namespace {
const double kLog2Pi = std::log(2.0 * std::numbers::pi);
}

void DiagGaussian::validate() const {
  if (!mean.same_shape(var)) throw DimensionError("DiagGaussian mean/variance shapes differ");
  for (double v : var.values()) {
    if (!(v >= kVarianceFloor * (1.0 - 1e-12))) {
      throw ContractError("variance " + std::to_string(v) + " below floor");
    }
  }
}

DiagGaussian DiagGaussian::row(std::size_t r) const {
  return {Tensor::row(mean.row_span(r)), Tensor::row(var.row_span(r))};
}

double kl_diag_gaussians(const DiagGaussian& p, const DiagGaussian& q) {
  if (!p.mean.same_shape(q.mean)) {
    throw DimensionError("kl_diag_gaussians: widths " + p.mean.shape_string() + " vs " + q.mean.shape_string());
  }
  p.validate();
  q.validate();
  double kl = 0.0;
  for (std::size_t i = 0; i < p.mean.size(); ++i) {
    const double d = p.mean[i] - q.mean[i];
    kl += 0.5 * (std::log(q.var[i] / p.var[i]) + (p.var[i] + d * d) / q.var[i] - 1.0);
  }
  return kl;
}

double gaussian_nll(const DiagGaussian& k, const Tensor& obs) {
  if (!k.mean.same_shape(obs)) throw DimensionError("gaussian_nll: observation shape mismatch");
  k.validate();
  double nll = 0.0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const double r = obs[i] - k.mean[i];
    nll += 0.5 * (kLog2Pi + std::log(k.var[i]) + r * r / k.var[i]);
  }
  return nll;
}

Var kl_rows(GaussianVar p, GaussianVar q) {
  if (p.mean.cols() != q.mean.cols()) throw DimensionError("kl_rows: width mismatch");
  Var d = p.mean - q.mean;
  Var term = log(q.var) - log(p.var) + div(p.var + square(d), q.var);
  return scale(add_scalar(row_sum(term), -static_cast<double>(p.mean.cols())), 0.5);
}

Var nll_rows(GaussianVar k, Var obs) {
  if (k.mean.cols() != obs.cols()) throw DimensionError("nll_rows: width mismatch");
  Var r = obs - k.mean;
  Var term = log(k.var) + div(square(r), k.var);
  return scale(add_scalar(row_sum(term), kLog2Pi * static_cast<double>(obs.cols())), 0.5);
}

Var variance_head(Var raw) { return clamp_min(softplus(raw), kVarianceFloor); }

}  // namespace fesgssm::gssm
