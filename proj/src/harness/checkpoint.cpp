// SPDX-License-Identifier: Apache-2.0
#include "fesgssm/harness/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fesgssm/errors.hpp"

namespace fesgssm::harness {

using nn::Tensor;

namespace {

constexpr char kMagic[8] = {'F', 'E', 'S', 'G', 'C', 'K', 'P', 'T'};

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Host byte order is little-endian on every supported target.
class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    out_.append(s);
  }
  void doubles(std::span<const double> v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(double));
  }
  void tensor(const Tensor& t) {
    u64(t.rows());
    u64(t.cols());
    raw(t.data(), t.size() * sizeof(double));
  }
  void params(const nn::ParameterSet& ps) {
    u64(ps.size());
    for (const auto& e : ps.entries()) {
      str(e.name);
      u8(e.trainable ? 1 : 0);
      tensor(e.value);
    }
  }
  void adam(const nn::AdamState& a) {
    u64(a.step);
    u64(a.m.size());
    for (const auto& t : a.m) tensor(t);
    for (const auto& t : a.v) tensor(t);
  }
  void rng(const Rng& r) { str(r.serialize()); }
  std::string take() { return std::move(out_); }

 private:
  void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  std::string out_;
};

class Reader {
 public:
  Reader(std::string_view bytes, std::size_t base) : in_(bytes), base_(base) {}

  std::uint8_t u8() {
    std::uint8_t v;
    raw(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    raw(&v, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint64_t n = length(1);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::vector<double> doubles() {
    std::vector<double> v(length(sizeof(double)));
    raw(v.data(), v.size() * sizeof(double));
    return v;
  }
  Tensor tensor() {
    const std::size_t at = offset();
    const std::uint64_t r = u64(), c = u64();
    if (c != 0 && r > (in_.size() - pos_) / sizeof(double) / c) fail(at, "tensor larger than the file");
    Tensor t(r, c);
    raw(t.data(), t.size() * sizeof(double));
    return t;
  }
  /// Reads into an existing set, checking names, order, and shapes.
  void params_into(nn::ParameterSet& ps, const char* what) {
    const std::size_t at = offset();
    if (u64() != ps.size()) fail(at, std::string(what) + ": parameter count differs from the config");
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const std::size_t eat = offset();
      const std::string name = str();
      const bool trainable = u8() != 0;
      Tensor t = tensor();
      if (name != ps.entry(i).name || !t.same_shape(ps.value(i))) {
        fail(eat, std::string(what) + ": entry '" + name + "' does not match the config layout");
      }
      ps.value(i) = std::move(t);
      ps.set_trainable(i, trainable);
    }
  }
  nn::AdamState adam() {
    nn::AdamState a;
    a.step = u64();
    const std::uint64_t n = length(16);
    for (std::uint64_t i = 0; i < n; ++i) a.m.push_back(tensor());
    for (std::uint64_t i = 0; i < n; ++i) a.v.push_back(tensor());
    return a;
  }
  Rng rng() {
    const std::size_t at = offset();
    Rng r;
    try {
      r.deserialize(str());
    } catch (const IoError&) {
      fail(at, "corrupt random stream");
    }
    return r;
  }
  std::size_t offset() const { return base_ + pos_; }
  bool done() const { return pos_ == in_.size(); }
  [[noreturn]] void fail(std::size_t at, const std::string& msg) const {
    throw IoError("checkpoint: " + msg + " at offset " + std::to_string(at));
  }

 private:
  std::uint64_t length(std::size_t unit) {
    const std::size_t at = offset();
    const std::uint64_t n = u64();
    if (n > (in_.size() - pos_) / unit) fail(at, "length field exceeds the remaining bytes");
    return n;
  }
  void raw(void* p, std::size_t n) {
    if (n > in_.size() - pos_) fail(offset(), "truncated file");
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::string_view in_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

void write_episode(Writer& w, const sac::Episode& ep) {
  w.u64(ep.size());
  for (const auto& e : ep) {
    w.doubles(e.obs);
    w.doubles(e.target);
    w.doubles(e.action);
    w.f64(e.reward);
    w.doubles(e.next_obs);
    w.doubles(e.next_target);
    w.u8(e.done ? 1 : 0);
  }
}

sac::Episode read_episode(Reader& r) {
  const std::uint64_t n = r.u64();
  sac::Episode ep;
  for (std::uint64_t i = 0; i < n; ++i) {
    sac::ExperienceTuple e;
    e.obs = r.doubles();
    e.target = r.doubles();
    e.action = r.doubles();
    e.reward = r.f64();
    e.next_obs = r.doubles();
    e.next_target = r.doubles();
    e.done = r.u8() != 0;
    ep.push_back(std::move(e));
  }
  return ep;
}

}  // namespace

std::string serialize_run(const RunState& st) {
  Writer w;
  w.str(to_ini(st.cfg));
  w.u64(st.seed);
  w.u64(st.next_episode);

  const sac::SacAgent& ag = st.agent;
  for (const auto* ps : {&ag.actor, &ag.critic1, &ag.critic2, &ag.target1, &ag.target2, &ag.alpha}) w.params(*ps);
  for (const auto* a : {&ag.actor_opt, &ag.critic1_opt, &ag.critic2_opt, &ag.alpha_opt}) w.adam(*a);
  w.u64(ag.updates);

  w.u8(st.model ? 1 : 0);
  if (st.model) {
    w.params(st.model->filter.ps);
    w.params(st.model->decoder.ps);
    w.params(st.model->transition->params());
    const auto& gs = *st.gssm_state;
    for (const auto* a : {&gs.filter, &gs.decoder, &gs.transition, &gs.regression}) w.adam(*a);
    w.u64(gs.step);
  }

  w.u64(st.traj.capacity());
  w.u64(st.traj.size());
  for (const auto& ep : st.traj.episodes()) write_episode(w, ep);

  const sac::ReplayBuffer& rb = st.replay;
  w.u64(rb.capacity());
  w.u64(rb.state_width());
  w.u64(rb.action_width());
  w.u64(rb.head);
  w.u64(rb.size());
  // Only the filled slots: [0, size) is always the occupied range.
  for (std::size_t i = 0; i < rb.size(); ++i) {
    w.doubles(rb.s.row_span(i));
    w.doubles(rb.a.row_span(i));
    w.f64(rb.r(i, 0));
    w.doubles(rb.s2.row_span(i));
    w.f64(rb.done(i, 0));
  }

  for (const Rng* r : {&st.env_rng, &st.act_rng, &st.update_rng, &st.filter_rng, &st.gssm_rng, &st.relabel_rng}) {
    w.rng(*r);
  }

  w.u64(st.metrics.rows.size());
  for (const auto& m : st.metrics.rows) {
    w.u64(m.seed);
    w.u8(m.mode == sac::Mode::gssm ? 1 : 0);
    w.u64(m.episode);
    w.u8(m.eval ? 1 : 0);
    for (double v : {m.episode_return, m.critic_loss, m.actor_loss, m.alpha, m.gssm_loss, m.rmse_deg}) w.f64(v);
  }
  const Counters& c = st.counters;
  for (auto v : {c.gssm_updates, c.gssm_constructions, c.relabels, c.evaluations, c.sac_updates}) w.u64(v);

  const std::string payload = w.take();
  Writer file;
  std::string out(kMagic, sizeof kMagic);
  file.u32(kCheckpointVersion);
  file.u64(payload.size());
  out += file.take();
  out += payload;
  Writer tail;
  tail.u64(fnv1a(payload));
  out += tail.take();
  return out;
}

RunState deserialize_run(const std::string& bytes) {
  Reader head(bytes, 0);
  constexpr std::size_t kHeader = sizeof kMagic + 4 + 8;
  if (bytes.size() < kHeader) head.fail(bytes.size(), "truncated header");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) head.fail(0, "not a checkpoint (bad magic)");
  Reader hdr(std::string_view(bytes).substr(sizeof kMagic), sizeof kMagic);
  const std::uint32_t version = hdr.u32();
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint: version " + std::to_string(version) + " is not supported (expected " +
                  std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t len = hdr.u64();
  if (len > bytes.size() - kHeader || bytes.size() - kHeader - len < 8) {
    head.fail(bytes.size(), "truncated file (payload of " + std::to_string(len) + " bytes announced)");
  }
  if (bytes.size() - kHeader - len != 8) head.fail(kHeader + len + 8, "trailing bytes after the checksum");
  const std::string_view payload = std::string_view(bytes).substr(kHeader, len);
  Reader tail(std::string_view(bytes).substr(kHeader + len), kHeader + len);
  if (tail.u64() != fnv1a(payload)) head.fail(kHeader + len, "checksum mismatch");

  Reader r(payload, kHeader);
  ExperimentConfig cfg;
  {
    const std::size_t at = r.offset();
    try {
      cfg = parse_config(r.str());
    } catch (const ConfigError& e) {
      r.fail(at, std::string("embedded config invalid: ") + e.what());
    }
  }
  const std::uint64_t seed = r.u64();
  RunState st = init_run(cfg, seed);
  st.next_episode = r.u64();

  sac::SacAgent& ag = st.agent;
  r.params_into(ag.actor, "actor");
  r.params_into(ag.critic1, "critic1");
  r.params_into(ag.critic2, "critic2");
  r.params_into(ag.target1, "target1");
  r.params_into(ag.target2, "target2");
  r.params_into(ag.alpha, "alpha");
  ag.actor_opt = r.adam();
  ag.critic1_opt = r.adam();
  ag.critic2_opt = r.adam();
  ag.alpha_opt = r.adam();
  ag.updates = r.u64();

  const std::size_t model_at = r.offset();
  const bool has_model = r.u8() != 0;
  if (has_model != st.model.has_value()) r.fail(model_at, "model presence does not match the mode");
  if (has_model) {
    r.params_into(st.model->filter.ps, "filter");
    r.params_into(st.model->decoder.ps, "decoder");
    r.params_into(st.model->transition->params(), "transition");
    auto& gs = *st.gssm_state;
    gs.filter = r.adam();
    gs.decoder = r.adam();
    gs.transition = r.adam();
    gs.regression = r.adam();
    gs.step = r.u64();
  }

  const std::size_t traj_cap = r.u64();
  if (traj_cap == 0) r.fail(r.offset(), "zero trajectory capacity");
  st.traj = sac::TrajectoryBuffer(traj_cap);
  const std::uint64_t n_eps = r.u64();
  for (std::uint64_t i = 0; i < n_eps; ++i) {
    const std::size_t at = r.offset();
    sac::Episode ep = read_episode(r);
    if (ep.empty()) r.fail(at, "empty episode");
    st.traj.add(std::move(ep));
  }

  const std::size_t rb_at = r.offset();
  const std::uint64_t cap = r.u64(), sw = r.u64(), aw = r.u64();
  if (cap != cfg.sac.replay_capacity || sw != cfg.sac.state_width() || aw != cfg.sac.action) {
    r.fail(rb_at, "replay layout does not match the config");
  }
  sac::ReplayBuffer rb(cap, sw, aw);
  const std::uint64_t head_pos = r.u64(), size = r.u64();
  if (size > cap || head_pos >= cap) r.fail(rb_at, "replay counts out of range");
  for (std::uint64_t i = 0; i < size; ++i) {
    const std::size_t at = r.offset();
    const auto s = r.doubles();
    const auto a = r.doubles();
    const double rew = r.f64();
    const auto s2 = r.doubles();
    const double d = r.f64();
    if (s.size() != sw || s2.size() != sw || a.size() != aw) r.fail(at, "replay row width mismatch");
    rb.add(s, a, rew, s2, d != 0.0);
  }
  rb.head = head_pos;
  sac::restore_replay_counts(rb, size);
  st.replay = std::move(rb);

  st.env_rng = r.rng();
  st.act_rng = r.rng();
  st.update_rng = r.rng();
  st.filter_rng = r.rng();
  st.gssm_rng = r.rng();
  st.relabel_rng = r.rng();

  const std::uint64_t n_rows = r.u64();
  st.metrics.rows.clear();
  for (std::uint64_t i = 0; i < n_rows; ++i) {
    MetricsRow m;
    m.seed = r.u64();
    m.mode = r.u8() ? sac::Mode::gssm : sac::Mode::vanilla;
    m.episode = r.u64();
    m.eval = r.u8() != 0;
    m.episode_return = r.f64();
    m.critic_loss = r.f64();
    m.actor_loss = r.f64();
    m.alpha = r.f64();
    m.gssm_loss = r.f64();
    m.rmse_deg = r.f64();
    st.metrics.rows.push_back(m);
  }
  Counters& c = st.counters;
  c.gssm_updates = r.u64();
  c.gssm_constructions = r.u64();
  c.relabels = r.u64();
  c.evaluations = r.u64();
  c.sac_updates = r.u64();
  if (!r.done()) r.fail(r.offset(), "unexpected bytes at the end of the payload");
  return st;
}

void save_checkpoint(const std::string& path, const RunState& st) {
  const std::string bytes = serialize_run(st);
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("checkpoint: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

RunState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_run(ss.str());
}

}  // namespace fesgssm::harness
