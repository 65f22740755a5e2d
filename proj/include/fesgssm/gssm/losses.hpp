// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>

#include "fesgssm/gssm/gaussian.hpp"

namespace fesgssm::gssm {

/// Reconstruction loss as a negative log-likelihood to minimise:
/// sum over steps and dims of 1/2 [log(2 pi var) + (o - mean)^2 / var].
/// Variances must already be clamped to the floor (ContractError otherwise).
double likelihood_loss(std::span<const DiagGaussian> reconstructions, std::span<const nn::Tensor> observations);

/// Sum over steps of KL[filter_t || transition_t]. Both sequences cover the
/// steps after the first one and must have equal lengths.
double kl_loss(std::span<const DiagGaussian> filter_dists, std::span<const DiagGaussian> transition_dists);

}  // namespace fesgssm::gssm
