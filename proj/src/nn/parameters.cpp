// SPDX-License-Identifier: Apache-2.0
#include "fesgssm/nn/parameters.hpp"

#include <cmath>

#include "fesgssm/errors.hpp"

namespace fesgssm::nn {

std::size_t ParameterSet::add(std::string name, Tensor value, bool trainable) {
  if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value), trainable});
  return entries_.size() - 1;
}

std::size_t ParameterSet::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

void ParameterSet::set_trainable_prefix(const std::string& prefix, bool t) {
  for (auto& e : entries_) {
    if (e.name.rfind(prefix, 0) == 0) e.trainable = t;
  }
}

void ParameterSet::freeze_all() {
  for (auto& e : entries_) e.trainable = false;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

std::size_t ParameterSet::trainable_scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.trainable ? e.value.size() : 0;
  return n;
}

bool ParameterSet::same_layout(const ParameterSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name || !entries_[i].value.same_shape(other.entries_[i].value)) {
      return false;
    }
  }
  return true;
}

void ParameterSet::blend_from(const ParameterSet& source, double tau) {
  if (!same_layout(source)) throw DimensionError("blend_from: parameter layouts differ");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto& dst = entries_[i].value.values();
    const auto& src = source.entries_[i].value.values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = tau * src[k] + (1.0 - tau) * dst[k];
  }
}

double ParameterSet::abs_difference(const ParameterSet& a, const ParameterSet& b) {
  if (!a.same_layout(b)) throw DimensionError("abs_difference: parameter layouts differ");
  double total = 0.0;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    const auto& x = a.entries_[i].value.values();
    const auto& y = b.entries_[i].value.values();
    for (std::size_t k = 0; k < x.size(); ++k) total += std::abs(x[k] - y[k]);
  }
  return total;
}

bool operator==(const ParameterSet::Entry& a, const ParameterSet::Entry& b) {
  return a.name == b.name && a.value == b.value && a.trainable == b.trainable;
}

bool operator==(const ParameterSet& a, const ParameterSet& b) { return a.entries_ == b.entries_; }

Gradients Gradients::zeros_like(const ParameterSet& ps) {
  Gradients g;
  g.values.reserve(ps.size());
  for (const auto& e : ps.entries()) g.values.emplace_back(e.value.rows(), e.value.cols());
  g.present.assign(ps.size(), false);
  return g;
}

std::size_t Gradients::count_present() const {
  std::size_t n = 0;
  for (bool p : present) n += p ? 1 : 0;
  return n;
}

double Gradients::squared_norm() const {
  double s = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!present[i]) continue;
    for (double v : values[i].values()) s += v * v;
  }
  return s;
}

void Gradients::scale(double factor) {
  for (auto& t : values) {
    for (double& v : t.values()) v *= factor;
  }
}

std::map<std::string, Tensor> Gradients::named(const ParameterSet& ps) const {
  std::map<std::string, Tensor> out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (present[i]) out.emplace(ps.entry(i).name, values[i]);
  }
  return out;
}

double clip_global_norm(std::span<Gradients* const> groups, double max_norm) {
  double sq = 0.0;
  for (const auto* g : groups) sq += g->squared_norm();
  const double norm = std::sqrt(sq);
  if (std::isfinite(norm) && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto* g : groups) g->scale(f);
  }
  return norm;
}

}  // namespace fesgssm::nn
