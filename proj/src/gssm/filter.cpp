// SPDX-License-Identifier: Apache-2.0
#include "fesgssm/gssm/filter.hpp"

#include "fesgssm/errors.hpp"

namespace fesgssm::gssm {

using nn::Activation;
using nn::Mlp;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

nn::MlpSpec ws_spec(const GssmDims& d) {
  return {{d.latent + d.action, d.ws_hidden, d.hidden}, {Activation::tanh, Activation::identity}};
}
nn::MlpSpec trunk_spec(std::size_t in, std::size_t width) { return {{in, width}, {Activation::tanh}}; }
nn::MlpSpec head_spec(std::size_t in, std::size_t out) { return {{in, out}, {Activation::identity}}; }

}  // namespace

FilterParams FilterParams::create(const GssmDims& dims, Rng& rng) {
  FilterParams fp;
  fp.dims = dims;
  fp.gru = nn::Gru::create(fp.ps, "gru", dims.obs, dims.hidden, rng);
  fp.w_s = Mlp::create(fp.ps, "w_s", ws_spec(dims), rng);
  fp.wx_trunk = Mlp::create(fp.ps, "w_x.trunk", trunk_spec(dims.hidden, dims.wx_hidden), rng);
  fp.wx_mean = Mlp::create(fp.ps, "w_x.mean", head_spec(dims.wx_hidden, dims.latent), rng);
  fp.wx_var = Mlp::create(fp.ps, "w_x.var", head_spec(dims.wx_hidden, dims.latent), rng);
  return fp;
}

FilterParams FilterParams::bind(const GssmDims& dims, nn::ParameterSet ps) {
  FilterParams fp;
  fp.dims = dims;
  fp.ps = std::move(ps);
  fp.gru = nn::Gru::bind(fp.ps, "gru", dims.obs, dims.hidden);
  fp.w_s = Mlp::bind(fp.ps, "w_s", ws_spec(dims));
  fp.wx_trunk = Mlp::bind(fp.ps, "w_x.trunk", trunk_spec(dims.hidden, dims.wx_hidden));
  fp.wx_mean = Mlp::bind(fp.ps, "w_x.mean", head_spec(dims.wx_hidden, dims.latent));
  fp.wx_var = Mlp::bind(fp.ps, "w_x.var", head_spec(dims.wx_hidden, dims.latent));
  return fp;
}

DecoderParams DecoderParams::create(const GssmDims& dims, Rng& rng) {
  DecoderParams dp;
  dp.dims = dims;
  dp.trunk = Mlp::create(dp.ps, "w_g.trunk", trunk_spec(dims.latent, dims.wg_hidden), rng);
  dp.mean = Mlp::create(dp.ps, "w_g.mean", head_spec(dims.wg_hidden, dims.obs), rng);
  dp.var = Mlp::create(dp.ps, "w_g.var", head_spec(dims.wg_hidden, dims.obs), rng);
  return dp;
}

DecoderParams DecoderParams::bind(const GssmDims& dims, nn::ParameterSet ps) {
  DecoderParams dp;
  dp.dims = dims;
  dp.ps = std::move(ps);
  dp.trunk = Mlp::bind(dp.ps, "w_g.trunk", trunk_spec(dims.latent, dims.wg_hidden));
  dp.mean = Mlp::bind(dp.ps, "w_g.mean", head_spec(dims.wg_hidden, dims.obs));
  dp.var = Mlp::bind(dp.ps, "w_g.var", head_spec(dims.wg_hidden, dims.obs));
  return dp;
}

FilterState filter_init(const GssmDims& dims, std::size_t batch) {
  return {Tensor(batch, dims.hidden), Tensor(batch, dims.latent), Tensor(batch, dims.action)};
}

FilterStepVars filter_step(Tape& tape, const FilterParams& fp, Var h_prev, Var x_prev, Var a_prev, Var o_t,
                           const Tensor& noise) {
  const GssmDims& d = fp.dims;
  if (x_prev.cols() != d.latent || a_prev.cols() != d.action || o_t.cols() != d.obs) {
    throw DimensionError("filter_step: widths (x " + std::to_string(x_prev.cols()) + ", a " +
                         std::to_string(a_prev.cols()) + ", o " + std::to_string(o_t.cols()) + ") do not match config");
  }
  Var xa = d.action > 0 ? nn::concat_cols({x_prev, a_prev}) : x_prev;
  Var h_x = fp.w_s.forward(tape, fp.ps, xa);
  Var h = fp.gru.step(tape, fp.ps, h_prev, o_t);
  Var h_c = scale(tanh(h_x + h), 0.5);
  Var trunk = fp.wx_trunk.forward(tape, fp.ps, h_c);
  GaussianVar q{fp.wx_mean.forward(tape, fp.ps, trunk), variance_head(fp.wx_var.forward(tape, fp.ps, trunk))};
  Var x = q.mean + mul_const(sqrt(q.var), noise);
  return {h, h_c, q, x};
}

FilterStep filter_step(const FilterParams& fp, const Tensor& h_prev, const Tensor& x_prev, const Tensor& a_prev,
                       const Tensor& o_t, Rng& rng) {
  if (!o_t.all_finite()) throw InputError("filter_step: non-finite observation");
  Tensor noise(o_t.rows(), fp.dims.latent);
  for (double& v : noise.values()) v = rng.normal();
  Tape tape;
  auto s = filter_step(tape, fp, tape.constant(h_prev), tape.constant(x_prev), tape.constant(a_prev),
                       tape.constant(o_t), noise);
  return {s.h.value(), s.h_c.value(), s.q.value(), s.x.value(), std::move(noise)};
}

GaussianVar decode(Tape& tape, const DecoderParams& dp, Var x) {
  if (x.cols() != dp.dims.latent) throw DimensionError("decode: latent width mismatch");
  Var trunk = dp.trunk.forward(tape, dp.ps, x);
  return {dp.mean.forward(tape, dp.ps, trunk), variance_head(dp.var.forward(tape, dp.ps, trunk))};
}

DiagGaussian decode(const DecoderParams& dp, const Tensor& x) {
  Tape tape;
  return decode(tape, dp, tape.constant(x)).value();
}

Tensor LatentTrajectory::means() const {
  std::vector<Tensor> rows;
  rows.reserve(steps.size());
  for (const auto& s : steps) rows.push_back(s.q.mean);
  return nn::vstack(rows);
}

Tensor previous_action(const ObservedSequence& seq, std::size_t t, std::size_t action_width) {
  if (t == 0 || action_width == 0) return Tensor(1, action_width);
  if (seq.actions.cols() != action_width) throw DimensionError("sequence action width mismatch");
  return Tensor::row(seq.actions.row_span(t - 1));
}

namespace {
void check_sequence(const ObservedSequence& seq, const GssmDims& d) {
  if (seq.length() == 0) throw ContractError("empty observation sequence");
  if (seq.obs.cols() != d.obs) throw DimensionError("sequence observation width mismatch");
  if (d.action > 0 && seq.actions.rows() + 1 < seq.obs.rows()) {
    throw DimensionError("sequence needs at least T-1 actions");
  }
}
}  // namespace

LatentTrajectory filter_trajectory(const FilterParams& fp, const DecoderParams& dp, const ObservedSequence& seq,
                                   Rng& rng) {
  check_sequence(seq, fp.dims);
  LatentTrajectory out;
  FilterState st = filter_init(fp.dims);
  for (std::size_t t = 0; t < seq.length(); ++t) {
    const Tensor o = Tensor::row(seq.obs.row_span(t));
    const Tensor a_prev = previous_action(seq, t, fp.dims.action);
    FilterStep s;
    try {
      s = filter_step(fp, st.h, st.x, a_prev, o, rng);
    } catch (const std::exception& e) {
      throw InputError("filter_trajectory step " + std::to_string(t) + ": " + e.what());
    }
    out.reconstructions.push_back(decode(dp, s.x));
    out.steps.push_back({o, a_prev, s.q, s.x, s.h, s.noise});
    st.h = std::move(s.h);
    st.x = std::move(s.x);
  }
  return out;
}

std::vector<Tensor> filter_means_batch(const FilterParams& fp, std::span<const ObservedSequence* const> seqs,
                                       std::span<Rng> rngs) {
  const std::size_t B = seqs.size();
  if (B == 0) return {};
  if (rngs.size() != B) throw ContractError("filter_means_batch: one rng per sequence required");
  const std::size_t T = seqs[0]->length();
  const GssmDims& d = fp.dims;
  for (const auto* s : seqs) {
    check_sequence(*s, d);
    if (s->length() != T) throw ContractError("filter_means_batch: sequences must share a length");
  }
  std::vector<Tensor> out(B, Tensor(T, d.latent));
  FilterState st = filter_init(d, B);
  for (std::size_t t = 0; t < T; ++t) {
    Tensor o(B, d.obs), a(B, d.action), noise(B, d.latent);
    for (std::size_t b = 0; b < B; ++b) {
      const auto orow = seqs[b]->obs.row_span(t);
      std::copy(orow.begin(), orow.end(), o.row_span(b).begin());
      if (t > 0 && d.action > 0) {
        const auto arow = seqs[b]->actions.row_span(t - 1);
        std::copy(arow.begin(), arow.end(), a.row_span(b).begin());
      }
      for (double& v : noise.row_span(b)) v = rngs[b].normal();
    }
    if (!o.all_finite()) throw InputError("filter_means_batch step " + std::to_string(t) + ": non-finite observation");
    Tape tape;
    auto s = filter_step(tape, fp, tape.constant(st.h), tape.constant(st.x), tape.constant(a), tape.constant(o), noise);
    const Tensor& m = s.q.mean.value();
    for (std::size_t b = 0; b < B; ++b) {
      std::copy(m.row_span(b).begin(), m.row_span(b).end(), out[b].row_span(t).begin());
    }
    st.h = s.h.value();
    st.x = s.x.value();
  }
  return out;
}

}  // namespace fesgssm::gssm
