#pragma once

// Finite-difference Taylor coefficients of a vector field f: R^n -> R^n.
//
// Order-i coefficients carry the 1/i! factor, so that
//   f(x0 + d) ~ f(x0) + A1 d + A2 (d kron d) + A3 (d kron d kron d)
// with A_i the mode-0 unfoldings of the returned tensors. Mixed partials
// come from the product of central differences along each index; a repeated
// index simply doubles the step along that coordinate. Every stencil yields
// all rows at once.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <vector>

#include "tdmor/tensor/sparse_tensor.hpp"

namespace tdmor {

using VectorField = std::function<void(const Vector& x, Vector& dx)>;

/// Where higher-order terms can be nonzero.
///
/// `coupled_vars` interact with each other and reach `coupled_rows`.
/// Each `local` entry (var, row) is a scalar self-nonlinearity of one
/// variable that reaches only that row (pure powers of the variable).
/// Empty `coupled_vars` / `coupled_rows` mean "all coordinates".
struct TaylorStructure {
  std::vector<std::size_t> coupled_vars;
  std::vector<std::size_t> coupled_rows;
  std::vector<std::pair<std::size_t, std::size_t>> local;
};

struct FdOptions {
  double step = 1e-3;         // relative to max(1, |x0_j|)
  bool richardson = true;     // combine h and h/2 to cancel the h^2 term
  double drop_below = 0.0;    // entries with |v| <= drop_below are not stored
};

namespace detail {

inline std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

inline double fd_scale(const Vector& x0, std::size_t j) {
  return std::max(1.0, std::abs(x0(static_cast<Eigen::Index>(j))));
}

/// Product of central differences along idx[0..q) with steps h*scale,
/// divided by prod(2 h_a). Approximates the mixed partial over idx, O(h^2).
template <std::size_t Q>
void central_product(const VectorField& f, const Vector& x0, const std::array<std::size_t, Q>& idx, double h,
                     Vector& out, Vector& xp, Vector& fx) {
  out.setZero(x0.size());
  double denom = 1.0;
  std::array<double, Q> steps{};
  for (std::size_t a = 0; a < Q; ++a) {
    steps[a] = h * fd_scale(x0, idx[a]);
    denom *= 2.0 * steps[a];
  }
  for (unsigned mask = 0; mask < (1u << Q); ++mask) {
    xp = x0;
    double sign = 1.0;
    for (std::size_t a = 0; a < Q; ++a) {
      const bool neg = mask & (1u << a);
      xp(static_cast<Eigen::Index>(idx[a])) += neg ? -steps[a] : steps[a];
      if (neg) sign = -sign;
    }
    f(xp, fx);
    out += sign * fx;
  }
  out /= denom;
}

template <std::size_t Q>
void mixed_partial(const VectorField& f, const Vector& x0, const std::array<std::size_t, Q>& idx,
                   const FdOptions& opts, Vector& out, Vector& tmp, Vector& xp, Vector& fx) {
  central_product<Q>(f, x0, idx, opts.step, out, xp, fx);
  if (!opts.richardson) return;
  central_product<Q>(f, x0, idx, opts.step / 2.0, tmp, xp, fx);
  out = (4.0 * tmp - out) / 3.0;
}

inline void check_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) throw NumericalError(std::string(what) + ": non-finite derivative entry");
}

}  // namespace detail

/// Central-difference Jacobian, step h_j = max(abs_step, rel_step |x0_j|).
inline Matrix jacobian_fd(const VectorField& f, const Vector& x0, double rel_step = 1e-6, double abs_step = 1e-6) {
  const Eigen::Index n = x0.size();
  Matrix a(n, n);
  Vector xp = x0, fp(n), fm(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double h = std::max(abs_step, rel_step * std::abs(x0(j)));
    xp(j) = x0(j) + h;
    f(xp, fp);
    xp(j) = x0(j) - h;
    f(xp, fm);
    xp(j) = x0(j);
    a.col(j) = (fp - fm) / (2.0 * h);
  }
  detail::check_finite(a.reshaped(), "jacobian");
  return a;
}

/// Richardson-extrapolated central-difference Jacobian (O(h^4)).
inline Matrix jacobian_richardson(const VectorField& f, const Vector& x0, double step = 1e-3) {
  const Eigen::Index n = x0.size();
  Matrix a(n, n);
  Vector col(n), tmp(n), xp(n), fx(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    detail::mixed_partial<1>(f, x0, {static_cast<std::size_t>(j)}, {step, true, 0.0}, col, tmp, xp, fx);
    a.col(j) = col;
  }
  detail::check_finite(a.reshaped(), "jacobian");
  return a;
}

/// Order-2 or order-3 Taylor coefficient tensor (1/order! folded in), fully
/// symmetric in the trailing modes. Only the entries allowed by `structure`
/// are computed; everything else is taken as zero.
inline SparseTensor taylor_tensor_fd(const VectorField& f, const Vector& x0, int order,
                                     const TaylorStructure& structure = {}, const FdOptions& opts = {}) {
  if (order != 2 && order != 3) throw ConfigError("taylor tensor order must be 2 or 3");
  const std::size_t n = static_cast<std::size_t>(x0.size());
  const auto vars = structure.coupled_vars.empty() ? detail::all_indices(n) : structure.coupled_vars;
  const auto rows = structure.coupled_rows.empty() ? detail::all_indices(n) : structure.coupled_rows;
  for (auto v : vars)
    if (v >= n) throw DimensionError("taylor structure variable out of range");
  for (auto r : rows)
    if (r >= n) throw DimensionError("taylor structure row out of range");

  Dims dims(static_cast<std::size_t>(order) + 1, n);
  SparseTensor t(dims);
  const double inv_fact = order == 2 ? 0.5 : 1.0 / 6.0;
  Vector d(x0.size()), tmp(x0.size()), xp(x0.size()), fx(x0.size());

  auto emit = [&](std::size_t row, std::span<const std::size_t> idx, double v) {
    if (!std::isfinite(v)) throw NumericalError("taylor tensor: non-finite derivative entry");
    if (std::abs(v) <= opts.drop_below || v == 0.0) return;
    std::vector<std::size_t> perm(idx.begin(), idx.end());
    std::sort(perm.begin(), perm.end());
    std::vector<std::size_t> full(perm.size() + 1);
    full[0] = row;
    do {
      std::copy(perm.begin(), perm.end(), full.begin() + 1);
      t.push(full, v);
    } while (std::next_permutation(perm.begin(), perm.end()));
  };

  const std::size_t nv = vars.size();
  if (order == 2) {
    for (std::size_t a = 0; a < nv; ++a)
      for (std::size_t b = a; b < nv; ++b) {
        const std::array<std::size_t, 2> idx{vars[a], vars[b]};
        detail::mixed_partial<2>(f, x0, idx, opts, d, tmp, xp, fx);
        for (auto r : rows) emit(r, idx, inv_fact * d(static_cast<Eigen::Index>(r)));
      }
  } else {
    for (std::size_t a = 0; a < nv; ++a)
      for (std::size_t b = a; b < nv; ++b)
        for (std::size_t c = b; c < nv; ++c) {
          const std::array<std::size_t, 3> idx{vars[a], vars[b], vars[c]};
          detail::mixed_partial<3>(f, x0, idx, opts, d, tmp, xp, fx);
          for (auto r : rows) emit(r, idx, inv_fact * d(static_cast<Eigen::Index>(r)));
        }
  }
  for (const auto& [v, r] : structure.local) {
    if (v >= n || r >= n) throw DimensionError("taylor structure local term out of range");
    if (order == 2) {
      const std::array<std::size_t, 2> idx{v, v};
      detail::mixed_partial<2>(f, x0, idx, opts, d, tmp, xp, fx);
      emit(r, idx, inv_fact * d(static_cast<Eigen::Index>(r)));
    } else {
      const std::array<std::size_t, 3> idx{v, v, v};
      detail::mixed_partial<3>(f, x0, idx, opts, d, tmp, xp, fx);
      emit(r, idx, inv_fact * d(static_cast<Eigen::Index>(r)));
    }
  }
  return t;
}

}  // namespace tdmor
