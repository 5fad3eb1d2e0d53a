#pragma once

#include <cstdint>
#include <vector>

#include "tdmor/tensor/tensor.hpp"

namespace tdmor {

/// Coordinate-list tensor. Entries are unique; zeros are not stored.
class SparseTensor {
public:
  SparseTensor() = default;
  explicit SparseTensor(Dims dims) : dims_(std::move(dims)) {
    if (dims_.empty()) throw DimensionError("sparse tensor order must be at least 1");
  }

  static SparseTensor from_dense(const Tensor& t) {
    SparseTensor s(t.dims());
    t.for_each([&](std::span<const std::size_t> idx, double v) {
      if (v != 0.0) s.push(idx, v);
    });
    s.complete_ = s.nnz() == t.size();
    return s;
  }

  std::size_t order() const noexcept { return dims_.size(); }
  const Dims& dims() const noexcept { return dims_; }
  std::size_t nnz() const noexcept { return values_.size(); }

  /// True when every entry of the dense shape is stored (zeros included).
  bool complete() const noexcept { return complete_; }

  void push(std::span<const std::size_t> idx, double v) {
    for (std::size_t i : idx) index_.push_back(static_cast<std::uint32_t>(i));
    values_.push_back(v);
  }

  std::span<const std::uint32_t> index(std::size_t e) const {
    return {index_.data() + e * dims_.size(), dims_.size()};
  }
  double value(std::size_t e) const { return values_[e]; }

  double frobenius_norm() const {
    double s = 0.0;
    for (double v : values_) s += v * v;
    return std::sqrt(s);
  }

  Tensor to_dense() const {
    Tensor t(dims_);
    std::vector<std::size_t> idx(dims_.size());
    for (std::size_t e = 0; e < nnz(); ++e) {
      auto ix = index(e);
      std::copy(ix.begin(), ix.end(), idx.begin());
      t[t.linear_index(idx)] += values_[e];
    }
    return t;
  }

private:
  Dims dims_;
  std::vector<std::uint32_t> index_;
  std::vector<double> values_;
  bool complete_ = false;
};

}  // namespace tdmor
