// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "fesgssm/nn/tensor.hpp"

namespace fesgssm::nn {

/// Named collection of parameter tensors. Entries keep insertion order so
/// layers can address them by index; frozen entries never take gradient.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    bool trainable = true;
  };

  /// Registers a parameter; names must be unique.
  std::size_t add(std::string name, Tensor value, bool trainable = true);

  std::size_t size() const { return entries_.size(); }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;

  Tensor& at(const std::string& name) { return entries_[index_of(name)].value; }
  const Tensor& at(const std::string& name) const { return entries_[index_of(name)].value; }
  Tensor& value(std::size_t i) { return entries_[i].value; }
  const Tensor& value(std::size_t i) const { return entries_[i].value; }
  const Entry& entry(std::size_t i) const { return entries_[i]; }
  const std::vector<Entry>& entries() const { return entries_; }

  bool trainable(std::size_t i) const { return entries_[i].trainable; }
  void set_trainable(std::size_t i, bool t) { entries_[i].trainable = t; }
  /// Marks every entry whose name starts with `prefix`.
  void set_trainable_prefix(const std::string& prefix, bool t);
  void freeze_all();

  std::size_t scalar_count() const;
  std::size_t trainable_scalar_count() const;

  /// True when both sets have the same names, order, and shapes.
  bool same_layout(const ParameterSet& other) const;

  /// Elementwise `this = tau * source + (1 - tau) * this` over all entries.
  void blend_from(const ParameterSet& source, double tau);

  /// Sum of |a - b| over all scalars of two same-layout sets.
  static double abs_difference(const ParameterSet& a, const ParameterSet& b);

  friend bool operator==(const ParameterSet& a, const ParameterSet& b);

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

bool operator==(const ParameterSet::Entry& a, const ParameterSet::Entry& b);

/// Gradients aligned with a ParameterSet. `present[i]` is set exactly for
/// trainable entries the loss reached.
struct Gradients {
  std::vector<Tensor> values;
  std::vector<bool> present;

  static Gradients zeros_like(const ParameterSet& ps);
  std::size_t count_present() const;
  double squared_norm() const;
  void scale(double factor);
  /// Named view, e.g. for diagnostics.
  std::map<std::string, Tensor> named(const ParameterSet& ps) const;
};

/// Scales all gradient groups jointly so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
double clip_global_norm(std::span<Gradients* const> groups, double max_norm);

}  // namespace fesgssm::nn
