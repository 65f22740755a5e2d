// SPDX-License-Identifier: Apache-2.0
#include "fesgssm/nn/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "fesgssm/errors.hpp"

namespace fesgssm::nn {

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : Tensor(rows, cols, Storage(data.begin(), data.end())) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, Storage data) : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_string());
  }
}

Tensor Tensor::row(std::span<const double> values) {
  return Tensor(1, values.size(), Storage(values.begin(), values.end()));
}

Tensor Tensor::row(std::initializer_list<double> values) { return Tensor(1, values.size(), Storage(values)); }

double Tensor::item() const {
  if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_string());
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const { return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]"; }

Tensor vstack(std::span<const Tensor> parts) {
  if (parts.empty()) return {};
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw DimensionError("vstack: column mismatch");
    rows += p.rows();
  }
  Tensor out(rows, cols);
  double* dst = out.data();
  for (const auto& p : parts) dst = std::copy(p.data(), p.data() + p.size(), dst);
  return out;
}

Tensor hstack(std::span<const Tensor> parts) {
  if (parts.empty()) return {};
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw DimensionError("hstack: row mismatch");
    cols += p.cols();
  }
  Tensor out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      std::copy_n(p.data() + r * p.cols(), p.cols(), out.data() + r * cols + off);
      off += p.cols();
    }
  }
  return out;
}

}  // namespace fesgssm::nn
