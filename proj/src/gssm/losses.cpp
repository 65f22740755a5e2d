// SPDX-License-Identifier: Apache-2.0
#include "fesgssm/gssm/losses.hpp"

#include "fesgssm/errors.hpp"

namespace fesgssm::gssm {

double likelihood_loss(std::span<const DiagGaussian> reconstructions, std::span<const nn::Tensor> observations) {
  if (reconstructions.size() != observations.size()) {
    throw ContractError("likelihood_loss: " + std::to_string(reconstructions.size()) + " distributions for " +
                        std::to_string(observations.size()) + " observations");
  }
  double total = 0.0;
  for (std::size_t t = 0; t < observations.size(); ++t) total += gaussian_nll(reconstructions[t], observations[t]);
  return total;
}

double kl_loss(std::span<const DiagGaussian> filter_dists, std::span<const DiagGaussian> transition_dists) {
  if (filter_dists.size() != transition_dists.size()) {
    throw ContractError("kl_loss: sequence lengths differ");
  }
  double total = 0.0;
  for (std::size_t t = 0; t < filter_dists.size(); ++t) total += kl_diag_gaussians(filter_dists[t], transition_dists[t]);
  return total;
}

}  // namespace fesgssm::gssm
