#pragma once

// Dense multiway arrays and the products that connect them to matrix algebra.
//
// Storage is mode-0-fastest: entry (i0, i1, ..., i_{d-1}) lives at
//   i0 + n0 * (i1 + n1 * (i2 + ...)).
// With that layout the mode-0 unfolding is a plain column-major reshape and its
// column ordering matches the Khatri-Rao nesting A(d-1) (.) ... (.) A(1), so a
// Kronecker-form operator M * (y kron x) reads directly off the flat data.
// Mode indices are zero-based throughout.

#include <charconv>
#include <functional>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tdmor/core/types.hpp"

namespace tdmor {

using Dims = std::vector<std::size_t>;

inline std::size_t dims_product(std::span<const std::size_t> dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string dims_string(std::span<const std::size_t> dims) {
  std::string s = "(";
  for (std::size_t k = 0; k < dims.size(); ++k) {
    if (k) s += "x";
    s += std::to_string(dims[k]);
  }
  return s + ")";
}

class Tensor {
public:
  Tensor() = default;

  explicit Tensor(Dims dims) : dims_(std::move(dims)) {
    validate_dims(dims_);
    data_.assign(dims_product(dims_), 0.0);
  }

  Tensor(Dims dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data)) {
    validate_dims(dims_);
    if (data_.size() != dims_product(dims_))
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match dims " + dims_string(dims_));
  }

  std::size_t order() const noexcept { return dims_.size(); }
  const Dims& dims() const noexcept { return dims_; }
  std::size_t dim(std::size_t k) const { return dims_.at(k); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  std::size_t linear_index(std::span<const std::size_t> idx) const {
    std::size_t lin = 0;
    for (std::size_t k = idx.size(); k-- > 0;) lin = lin * dims_[k] + idx[k];
    return lin;
  }

  double& operator[](std::size_t lin) { return data_[lin]; }
  double operator[](std::size_t lin) const { return data_[lin]; }

  template <class... I>
  double& operator()(I... idx) {
    const std::size_t a[] = {static_cast<std::size_t>(idx)...};
    return data_[linear_index(a)];
  }
  template <class... I>
  double operator()(I... idx) const {
    const std::size_t a[] = {static_cast<std::size_t>(idx)...};
    return data_[linear_index(a)];
  }

  double frobenius_norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
  }

  /// Calls fn(index, value) for every entry, index advancing mode-0-fastest.
  template <class Fn>
  void for_each(Fn&& fn) const {
    std::vector<std::size_t> idx(dims_.size(), 0);
    for (std::size_t lin = 0; lin < data_.size(); ++lin) {
      fn(std::span<const std::size_t>(idx), data_[lin]);
      for (std::size_t k = 0; k < idx.size(); ++k) {
        if (++idx[k] < dims_[k]) break;
        idx[k] = 0;
      }
    }
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

private:
  static void validate_dims(const Dims& dims) {
    if (dims.empty()) throw DimensionError("tensor order must be at least 1");
    for (std::size_t n : dims)
      if (n == 0) throw DimensionError("tensor dimensions must be positive, got " + dims_string(dims));
  }

  Dims dims_;
  std::vector<double> data_;
};

/// Kronecker product; b's indices vary fastest.
inline Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

/// Column-wise Kronecker product.
inline Matrix khatri_rao(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw DimensionError("khatri_rao: column counts differ (" + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.cols()) + ")");
  Matrix out(a.rows() * b.rows(), a.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      out.col(j).segment(i * b.rows(), b.rows()) = a(i, j) * b.col(j);
  return out;
}

/// Khatri-Rao chain mats[last] (.) ... (.) mats[0], i.e. the first matrix
/// varies fastest in the row index.
inline Matrix khatri_rao_reverse(std::span<const Matrix> mats) {
  if (mats.empty()) throw DimensionError("khatri_rao_reverse: empty operand list");
  Matrix acc = mats[0];
  for (std::size_t k = 1; k < mats.size(); ++k) acc = khatri_rao(mats[k], acc);
  return acc;
}

/// (T x_k X): contracts mode k of T against the columns of X.
inline Tensor mode_k_product(const Tensor& t, const Matrix& x, std::size_t k) {
  if (k >= t.order())
    throw DimensionError("mode_k_product: mode " + std::to_string(k) + " out of range for order " +
                         std::to_string(t.order()));
  const std::size_t nk = t.dim(k);
  if (static_cast<std::size_t>(x.cols()) != nk)
    throw DimensionError("mode_k_product: matrix has " + std::to_string(x.cols()) +
                         " columns, mode size is " + std::to_string(nk));
  const std::size_t m = static_cast<std::size_t>(x.rows());
  std::size_t left = 1, right = 1;
  for (std::size_t i = 0; i < k; ++i) left *= t.dim(i);
  for (std::size_t i = k + 1; i < t.order(); ++i) right *= t.dim(i);

  Dims out_dims = t.dims();
  out_dims[k] = m;
  Tensor out(out_dims);
  auto in = t.data();
  auto res = out.data();
  for (std::size_t r = 0; r < right; ++r)
    for (std::size_t j = 0; j < nk; ++j)
      for (std::size_t p = 0; p < m; ++p) {
        const double xpj = x(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(j));
        if (xpj == 0.0) continue;
        const double* src = in.data() + left * (j + nk * r);
        double* dst = res.data() + left * (p + m * r);
        for (std::size_t l = 0; l < left; ++l) dst[l] += xpj * src[l];
      }
  return out;
}

/// Mode-0 unfolding: n0 x (n1 * ... * n_{d-1}), mode 1 fastest along columns.
inline Matrix matricize_mode1(const Tensor& t) {
  if (t.order() < 2) throw DimensionError("matricize_mode1 needs order >= 2");
  const auto rows = static_cast<Eigen::Index>(t.dim(0));
  const auto cols = static_cast<Eigen::Index>(t.size() / t.dim(0));
  return Eigen::Map<const Matrix>(t.data().data(), rows, cols);
}

inline Tensor tensorize(const Matrix& m, const Dims& dims) {
  if (dims.empty()) throw DimensionError("tensorize: empty dims");
  const std::size_t rest = dims_product(dims) / std::max<std::size_t>(dims[0], 1);
  if (static_cast<std::size_t>(m.rows()) != dims[0] || static_cast<std::size_t>(m.cols()) != rest)
    throw DimensionError("tensorize: matrix " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()) + " does not fit dims " + dims_string(dims));
  return Tensor(dims, std::vector<double>(m.data(), m.data() + m.size()));
}

/// Outer product v0 o v1 o ... o v_{d-1}.
inline Tensor outer(std::span<const Vector> vs) {
  Dims dims;
  for (const auto& v : vs) dims.push_back(static_cast<std::size_t>(v.size()));
  Tensor out(dims);
  out.for_each([&](std::span<const std::size_t> idx, double) {
    double p = 1.0;
    for (std::size_t k = 0; k < vs.size(); ++k) p *= vs[k](static_cast<Eigen::Index>(idx[k]));
    out[out.linear_index(idx)] = p;
  });
  return out;
}

inline double relative_error(const Tensor& approx, const Tensor& exact) {
  if (approx.dims() != exact.dims()) throw DimensionError("relative_error: dims differ");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < exact.size(); ++i) {
    const double d = approx[i] - exact[i];
    num += d * d;
    den += exact[i] * exact[i];
  }
  if (den == 0.0) return std::sqrt(num);
  return std::sqrt(num / den);
}

// Debug dump: "tensor <d> n0 ... n_{d-1}" on the first line, then one value
// per line in storage order, printed round-trip exact.
inline void write_tensor_text(std::ostream& os, const Tensor& t) {
  os << "tensor " << t.order();
  for (std::size_t n : t.dims()) os << ' ' << n;
  os << '\n';
  char buf[64];
  for (double v : t.data()) {
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    os.write(buf, end - buf);
    os << '\n';
  }
}

inline Tensor read_tensor_text(std::istream& is) {
  std::string tag;
  std::size_t order = 0;
  if (!(is >> tag >> order) || tag != "tensor" || order == 0)
    throw IoError("read_tensor_text: bad header");
  Dims dims(order);
  for (auto& n : dims)
    if (!(is >> n)) throw IoError("read_tensor_text: truncated dims");
  std::vector<double> data(dims_product(dims));
  for (auto& v : data) {
    std::string tok;
    if (!(is >> tok)) throw IoError("read_tensor_text: truncated data");
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc()) throw IoError("read_tensor_text: bad value '" + tok + "'");
  }
  return Tensor(std::move(dims), std::move(data));
}

}  // namespace tdmor
