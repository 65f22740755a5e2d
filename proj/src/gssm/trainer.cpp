// SPDX-License-Identifier: Apache-2.0
#include "fesgssm/gssm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "fesgssm/errors.hpp"

namespace fesgssm::gssm {

using nn::Tape;
using nn::Tensor;
using nn::Var;

GssmModel::GssmModel(const GssmModel& o)
    : filter(o.filter), decoder(o.decoder), transition(o.transition ? o.transition->clone() : nullptr) {}

GssmModel& GssmModel::operator=(const GssmModel& o) {
  if (this != &o) {
    filter = o.filter;
    decoder = o.decoder;
    transition = o.transition ? o.transition->clone() : nullptr;
  }
  return *this;
}

GssmTrainerState GssmTrainerState::for_model(const GssmModel& m) {
  GssmTrainerState s;
  s.filter = nn::AdamState::for_params(m.filter.ps);
  s.decoder = nn::AdamState::for_params(m.decoder.ps);
  s.transition = nn::AdamState::for_params(m.transition->params());
  s.regression = nn::AdamState::for_params(m.transition->params());
  return s;
}

double kl_weight_at(const GssmHyper& hyper, std::uint64_t step) {
  const double warm = hyper.warmup_fraction * static_cast<double>(hyper.total_steps);
  if (warm <= 0.0) return hyper.kl_weight;
  return hyper.kl_weight * std::min(1.0, static_cast<double>(step + 1) / warm);
}

namespace {

Tensor gather_rows(std::span<const ObservedSequence* const> seqs, bool actions, std::size_t t, std::size_t width) {
  Tensor out(seqs.size(), width);
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    const Tensor& src = actions ? seqs[b]->actions : seqs[b]->obs;
    const auto row = src.row_span(t);
    std::copy(row.begin(), row.end(), out.row_span(b).begin());
  }
  return out;
}

}  // namespace

GssmLossVars gssm_loss(Tape& tape, const GssmModel& model, std::span<const ObservedSequence> batch, double lambda,
                       Rng& rng, std::vector<std::pair<Tensor, Tensor>>* latent_pairs) {
  if (batch.empty()) throw ContractError("gssm_loss: empty batch");
  if (lambda < 0.0) throw ContractError("gssm_loss: negative KL weight");
  const GssmDims& d = model.filter.dims;
  const bool use_action = model.transition && model.transition->uses_action();

  std::map<std::size_t, std::vector<const ObservedSequence*>> groups;
  for (const auto& s : batch) {
    if (s.length() == 0) throw ContractError("gssm_loss: empty sequence");
    if (s.obs.cols() != d.obs) throw DimensionError("gssm_loss: observation width mismatch");
    if (d.action > 0 && s.actions.rows() + 1 < s.length()) throw DimensionError("gssm_loss: missing actions");
    groups[s.length()].push_back(&s);
  }

  std::vector<Var> nll_terms;
  std::vector<Var> kl_terms;
  for (const auto& [T, seqs] : groups) {
    const std::size_t B = seqs.size();
    const FilterState init = filter_init(d, B);
    Var h = tape.constant(init.h);
    Var x = tape.constant(init.x);
    const Var a_init = tape.constant(init.a);
    for (std::size_t t = 0; t < T; ++t) {
      Var a_prev = (t == 0 || d.action == 0) ? a_init : tape.constant(gather_rows(seqs, true, t - 1, d.action));
      Var o = tape.constant(gather_rows(seqs, false, t, d.obs));
      Tensor noise(B, d.latent);
      for (double& v : noise.values()) v = rng.normal();
      FilterStepVars s = filter_step(tape, model.filter, h, x, a_prev, o, noise);
      nll_terms.push_back(sum(nll_rows(decode(tape, model.decoder, s.x), o)));
      if (t > 0 && (lambda > 0.0 || latent_pairs != nullptr)) {
        Var input = use_action ? nn::concat_cols({x, a_prev}) : x;
        if (lambda > 0.0) {
          GaussianVar prior = model.transition->predict(tape, input);
          kl_terms.push_back(sum(kl_rows(s.q, prior)));
        }
        if (latent_pairs != nullptr) latent_pairs->emplace_back(input.value(), s.x.value());
      }
      h = s.h;
      x = s.x;
    }
  }

  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  Var nll = scale(sum(nn::concat_rows(nll_terms)), inv_batch);
  GssmLossVars out{nll, nll.value().item(), 0.0};
  if (!kl_terms.empty()) {
    Var kl = scale(sum(nn::concat_rows(kl_terms)), inv_batch);
    out.kl = kl.value().item();
    out.total = nll + scale(kl, lambda);
  }
  return out;
}

GssmLossRecord train_gssm_step(GssmModel& model, GssmTrainerState& state, std::span<const ObservedSequence> batch,
                               const GssmHyper& hyper, Rng& rng) {
  if (hyper.kl_weight < 0.0) throw ContractError("train_gssm: KL weight must be non-negative");
  const double lambda = kl_weight_at(hyper, state.step);
  std::vector<std::pair<Tensor, Tensor>> pairs;
  const bool regress = hyper.transition_regression && model.transition;

  Tape tape;
  GssmLossVars lv = gssm_loss(tape, model, batch, lambda, rng, regress ? &pairs : nullptr);
  GssmLossRecord rec{lv.total.value().item(), lv.nll, lv.kl, lambda, 0.0};
  auto diagnose = [&](const std::string& what) {
    std::ostringstream os;
    os << what << " at GSSM step " << state.step << " (lambda=" << lambda << ", nll=" << lv.nll << ", kl=" << lv.kl
       << ", grad_norm=" << rec.grad_norm << ")";
    return TrainingError(os.str());
  };
  if (!std::isfinite(rec.total)) throw diagnose("non-finite loss");

  tape.backward(lv.total);
  nn::Gradients gf = tape.gradients(model.filter.ps);
  nn::Gradients gd = tape.gradients(model.decoder.ps);
  const bool step_transition = model.transition && hyper.transition_kl_grad;
  nn::Gradients gt = step_transition ? tape.gradients(model.transition->params()) : nn::Gradients{};
  std::vector<nn::Gradients*> groups{&gf, &gd};
  if (step_transition) groups.push_back(&gt);
  rec.grad_norm = nn::clip_global_norm(groups, hyper.clip_norm);
  if (!std::isfinite(rec.grad_norm)) throw diagnose("non-finite gradient");

  const nn::AdamHyper adam{.lr = hyper.lr};
  nn::adam_step(model.filter.ps, gf, state.filter, adam);
  nn::adam_step(model.decoder.ps, gd, state.decoder, adam);
  if (step_transition) {
    const double tlr = hyper.transition_lr > 0.0 ? hyper.transition_lr : hyper.lr;
    nn::adam_step(model.transition->params(), gt, state.transition, {.lr = tlr});
  }

  if (regress && !pairs.empty()) {
    std::vector<Tensor> ins, outs;
    for (auto& [i, o] : pairs) {
      ins.push_back(std::move(i));
      outs.push_back(std::move(o));
    }
    model.transition->regression_update(nn::vstack(ins), nn::vstack(outs), state.regression,
                                        {.lr = hyper.regression_lr}, rng);
  }
  ++state.step;
  return rec;
}

std::vector<GssmLossRecord> train_gssm(GssmModel& model, GssmTrainerState& state,
                                       std::span<const ObservedSequence> data, std::size_t steps,
                                       std::size_t batch_size, const GssmHyper& hyper, Rng& rng) {
  if (data.empty()) throw ContractError("train_gssm: no sequences");
  std::vector<GssmLossRecord> history;
  history.reserve(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    std::vector<ObservedSequence> batch;
    batch.reserve(batch_size);
    for (std::size_t b = 0; b < batch_size; ++b) batch.push_back(data[rng.index(data.size())]);
    history.push_back(train_gssm_step(model, state, batch, hyper, rng));
  }
  return history;
}

}  // namespace fesgssm::gssm
