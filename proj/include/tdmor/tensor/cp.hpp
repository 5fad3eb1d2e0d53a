#pragma once

// CANDECOMP/PARAFAC factorizations: T ~ sum_r w_r a_r(0) o a_r(1) o ... o a_r(d-1).
//
// Factors are stored as one n_k x r matrix per mode with unit-norm columns; all
// scale lives in the weight vector. Factorizations are identifiable only up to
// column permutation and sign, so comparisons should go through reconstruction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tdmor/tensor/sparse_tensor.hpp"
#include "tdmor/tensor/tensor.hpp"

namespace tdmor {

struct CpFactors {
  std::size_t rank = 0;
  std::vector<Matrix> factors;
  Vector weights;

  std::size_t order() const noexcept { return factors.size(); }

  Dims dims() const {
    Dims d;
    for (const auto& f : factors) d.push_back(static_cast<std::size_t>(f.rows()));
    return d;
  }

  void validate() const {
    if (rank == 0) throw DimensionError("CP rank must be positive");
    if (factors.empty()) throw DimensionError("CP factors: no modes");
    if (static_cast<std::size_t>(weights.size()) != rank)
      throw DimensionError("CP weights length differs from rank");
    for (const auto& f : factors)
      if (static_cast<std::size_t>(f.cols()) != rank)
        throw DimensionError("CP factor column count differs from rank");
  }
};

struct CpOptions {
  int max_iters = 500;
  double fit_tolerance = 1e-8;
  int restarts = 3;
  std::uint64_t seed = 1;
  /// Optional warm start; used as the first restart when its rank matches.
  /// Extra rank columns beyond the warm start are filled randomly.
  const CpFactors* init = nullptr;
};

struct CpResult {
  CpFactors factors;
  /// 1 - ||T - T^||_F / ||T||_F; 1 for the zero tensor. NaN when ||T|| is unknown.
  double fit = 0.0;
  bool converged = false;
  int iterations = 0;
  /// Per-iteration fit of the returned restart.
  std::vector<double> fit_history;
};

namespace detail {

inline Matrix hadamard_grams(const std::vector<Matrix>& grams, std::size_t skip) {
  const auto r = grams.front().rows();
  Matrix v = Matrix::Ones(r, r);
  for (std::size_t j = 0; j < grams.size(); ++j)
    if (j != skip) v = v.cwiseProduct(grams[j]);
  return v;
}

inline Vector normalize_columns(Matrix& a) {
  Vector norms(a.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    norms(j) = a.col(j).norm();
    if (norms(j) > 0.0) a.col(j) /= norms(j);
  }
  return norms;
}

/// Solves A * V = M for A with V symmetric PSD; pseudo-inverse when V is singular.
inline Matrix solve_gram(const Matrix& m, const Matrix& v) {
  Eigen::LDLT<Matrix> ldlt(v);
  const double scale = std::max(v.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  const auto d = ldlt.vectorD();
  const bool well_posed = ldlt.info() == Eigen::Success && d.minCoeff() > 1e-12 * scale;
  if (well_posed) return ldlt.solve(m.transpose()).transpose();
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(v);
  cod.setThreshold(1e-13);
  return (cod.pseudoInverse() * m.transpose()).transpose();
}

inline std::vector<Matrix> random_factors(const Dims& dims, std::size_t rank, SplitMix64& rng) {
  std::vector<Matrix> f;
  for (std::size_t n : dims) {
    Matrix a = random_matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(rank), rng, 0.0, 1.0);
    normalize_columns(a);
    f.push_back(std::move(a));
  }
  return f;
}

/// Starting point from a warm start, padded with random columns.
inline std::vector<Matrix> warm_factors(const CpFactors& init, const Dims& dims, std::size_t rank,
                                        SplitMix64& rng) {
  auto f = random_factors(dims, rank, rng);
  const auto keep = static_cast<Eigen::Index>(std::min(rank, init.rank));
  for (std::size_t k = 0; k < dims.size(); ++k) f[k].leftCols(keep) = init.factors[k].leftCols(keep);
  return f;
}

/// Generic ALS driver over normalized factors. `mttkrp(k, factors)` returns the
/// n_k x r matricized-tensor-times-Khatri-Rao product for mode k;
/// `objective(factors, weights)` returns the current fit (higher is better).
template <class Mttkrp, class Objective>
CpResult als(const Dims& dims, std::size_t rank, std::vector<Matrix> factors, Mttkrp&& mttkrp,
             Objective&& objective, const CpOptions& opts) {
  const std::size_t d = dims.size();
  std::vector<Matrix> grams(d);
  for (std::size_t k = 0; k < d; ++k) grams[k] = factors[k].transpose() * factors[k];
  Vector weights = Vector::Ones(static_cast<Eigen::Index>(rank));

  CpResult res;
  double prev = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < opts.max_iters; ++it) {
    for (std::size_t k = 0; k < d; ++k) {
      const Matrix m = mttkrp(k, factors);
      factors[k] = solve_gram(m, hadamard_grams(grams, k));
      weights = normalize_columns(factors[k]);
      grams[k] = factors[k].transpose() * factors[k];
    }
    const double fit = objective(factors, weights);
    res.fit_history.push_back(fit);
    res.iterations = it + 1;
    const bool done = it > 0 && std::abs(fit - prev) < opts.fit_tolerance;
    prev = fit;
    if (done) {
      res.converged = true;
      break;
    }
  }
  // Columns that collapsed to zero carry no information; give them a unit
  // direction so every column has unit norm.
  for (auto& f : factors)
    for (Eigen::Index j = 0; j < f.cols(); ++j)
      if (f.col(j).squaredNorm() == 0.0) {
        f(0, j) = 1.0;
        weights(j) = 0.0;
      }
  res.fit = prev;
  res.factors.rank = rank;
  res.factors.factors = std::move(factors);
  res.factors.weights = weights;
  return res;
}

inline double row_product(const std::vector<Matrix>& f, std::span<const std::uint32_t> idx,
                          Eigen::Index r, std::size_t skip) {
  double p = 1.0;
  for (std::size_t j = 0; j < f.size(); ++j)
    if (j != skip) p *= f[j](idx[j], r);
  return p;
}

}  // namespace detail

/// Mode-k MTTKRP of a coordinate tensor.
inline Matrix mttkrp(const SparseTensor& t, const std::vector<Matrix>& factors, std::size_t k) {
  const auto rank = factors.front().cols();
  const std::size_t d = t.order();
  // Row-contiguous copies: column i of ft[j] is row i of factor j.
  std::vector<Matrix> ft(d);
  for (std::size_t j = 0; j < d; ++j)
    if (j != k) ft[j] = factors[j].transpose();
  Matrix mt = Matrix::Zero(rank, static_cast<Eigen::Index>(t.dims()[k]));
  Vector prod(rank);
  for (std::size_t e = 0; e < t.nnz(); ++e) {
    auto idx = t.index(e);
    prod.setConstant(t.value(e));
    for (std::size_t j = 0; j < d; ++j)
      if (j != k) prod.array() *= ft[j].col(idx[j]).array();
    mt.col(idx[k]) += prod;
  }
  return mt.transpose();
}

/// Squared norm of sum_r w_r a_r(0) o ... o a_r(d-1).
inline double cp_norm_squared(const std::vector<Matrix>& factors, const Vector& weights) {
  Matrix v = Matrix::Ones(weights.size(), weights.size());
  for (const auto& f : factors) v = v.cwiseProduct(f.transpose() * f);
  return std::max(0.0, weights.dot(v * weights));
}

/// Value of the model at one multi-index.
inline double cp_entry(const std::vector<Matrix>& factors, const Vector& weights,
                       std::span<const std::uint32_t> idx) {
  double s = 0.0;
  for (Eigen::Index r = 0; r < weights.size(); ++r)
    s += weights(r) * detail::row_product(factors, idx, r, factors.size());
  return s;
}

/// Alternating least squares on a coordinate tensor. Non-convergence is not an
/// error: the best iterate over all restarts is returned with `converged` unset.
inline CpResult cp_decompose(const SparseTensor& t, std::size_t rank, const CpOptions& opts = {}) {
  if (rank == 0) throw DimensionError("cp_decompose: rank must be >= 1");
  const Dims& dims = t.dims();
  const double tnorm = t.frobenius_norm();
  SplitMix64 rng(opts.seed);

  if (tnorm == 0.0) {
    CpResult res;
    res.factors.rank = rank;
    res.factors.factors = detail::random_factors(dims, rank, rng);
    res.factors.weights = Vector::Zero(static_cast<Eigen::Index>(rank));
    res.fit = 1.0;
    res.converged = true;
    res.fit_history = {1.0};
    return res;
  }

  auto objective = [&](const std::vector<Matrix>& f, const Vector& w) {
    std::vector<Matrix> ft;
    for (const auto& a : f) ft.push_back(a.transpose());
    Vector prod(w.size());
    double resid = 0.0, model_on_support = 0.0;
    for (std::size_t e = 0; e < t.nnz(); ++e) {
      auto idx = t.index(e);
      prod = w;
      for (std::size_t j = 0; j < ft.size(); ++j) prod.array() *= ft[j].col(idx[j]).array();
      const double m = prod.sum();
      const double diff = t.value(e) - m;
      resid += diff * diff;
      model_on_support += m * m;
    }
    if (!t.complete()) resid += std::max(0.0, cp_norm_squared(f, w) - model_on_support);
    return 1.0 - std::sqrt(resid) / tnorm;
  };
  auto mt = [&](std::size_t k, const std::vector<Matrix>& f) { return mttkrp(t, f, k); };

  std::optional<CpResult> best;
  const int restarts = std::max(1, opts.restarts);
  for (int s = 0; s < restarts; ++s) {
    SplitMix64 srng(opts.seed + 0x632be59bd9b4e019ULL * static_cast<std::uint64_t>(s + 1));
    std::vector<Matrix> init = (s == 0 && opts.init && opts.init->order() == dims.size())
                                   ? detail::warm_factors(*opts.init, dims, rank, srng)
                                   : detail::random_factors(dims, rank, srng);
    CpResult r = detail::als(dims, rank, std::move(init), mt, objective, opts);
    if (!best || r.fit > best->fit) best = std::move(r);
  }
  return std::move(*best);
}

inline CpResult cp_decompose(const Tensor& t, std::size_t rank, const CpOptions& opts = {}) {
  return cp_decompose(SparseTensor::from_dense(t), rank, opts);
}

/// Matrix-free ALS for tensors that are only available through MTTKRP
/// probes. `norm_squared` may be NaN when unknown; the reported fit is then NaN
/// and stopping uses the relative change of the model objective.
inline CpResult cp_decompose_implicit(const Dims& dims, std::size_t rank,
                                      const std::function<Matrix(std::size_t, const std::vector<Matrix>&)>& probe,
                                      double norm_squared, const CpOptions& opts = {}) {
  if (rank == 0) throw DimensionError("cp_decompose_implicit: rank must be >= 1");
  const std::size_t last = dims.size() - 1;
  Matrix last_m;
  auto mt = [&](std::size_t k, const std::vector<Matrix>& f) {
    Matrix m = probe(k, f);
    if (k == last) last_m = m;
    return m;
  };
  double scale = 1.0;
  bool scale_set = false;
  auto objective = [&](const std::vector<Matrix>& f, const Vector& w) {
    // <T, T^> through the last mode's MTTKRP (computed with the final factors).
    double inner = 0.0;
    for (Eigen::Index r = 0; r < w.size(); ++r) inner += w(r) * f[last].col(r).dot(last_m.col(r));
    const double model = cp_norm_squared(f, w);
    const double resid_shift = model - 2.0 * inner;  // ||T - T^||^2 - ||T||^2
    if (std::isfinite(norm_squared) && norm_squared > 0.0)
      return 1.0 - std::sqrt(std::max(0.0, norm_squared + resid_shift) / norm_squared);
    if (!scale_set) {
      scale = std::max(std::abs(resid_shift), 1e-300);
      scale_set = true;
    }
    return -resid_shift / scale;
  };

  std::optional<CpResult> best;
  const int restarts = std::max(1, opts.restarts);
  for (int s = 0; s < restarts; ++s) {
    SplitMix64 srng(opts.seed + 0x632be59bd9b4e019ULL * static_cast<std::uint64_t>(s + 1));
    std::vector<Matrix> init = (s == 0 && opts.init && opts.init->order() == dims.size())
                                   ? detail::warm_factors(*opts.init, dims, rank, srng)
                                   : detail::random_factors(dims, rank, srng);
    scale_set = false;
    CpResult r = detail::als(dims, rank, std::move(init), mt, objective, opts);
    if (!best || r.fit > best->fit) best = std::move(r);
  }
  if (!(std::isfinite(norm_squared) && norm_squared > 0.0)) best->fit = std::numeric_limits<double>::quiet_NaN();
  return std::move(*best);
}

/// Dense reconstruction, accumulated entrywise.
inline Tensor cp_reconstruct(const CpFactors& f) {
  f.validate();
  Tensor out(f.dims());
  const auto r = static_cast<Eigen::Index>(f.rank);
  std::vector<std::uint32_t> idx32(f.order());
  out.for_each([&](std::span<const std::size_t> idx, double) {
    for (std::size_t k = 0; k < idx.size(); ++k) idx32[k] = static_cast<std::uint32_t>(idx[k]);
    double s = 0.0;
    for (Eigen::Index j = 0; j < r; ++j) s += f.weights(j) * detail::row_product(f.factors, idx32, j, f.order());
    out[out.linear_index(idx)] = s;
  });
  return out;
}

/// A(0) diag(w) (A(d-1) (.) ... (.) A(1))^T.
inline Matrix cp_mode1_matrix(const CpFactors& f) {
  f.validate();
  if (f.order() < 2) throw DimensionError("cp_mode1_matrix needs order >= 2");
  std::vector<Matrix> rest(f.factors.begin() + 1, f.factors.end());
  const Matrix kr = khatri_rao_reverse(rest);
  return f.factors[0] * f.weights.asDiagonal() * kr.transpose();
}

/// Exact factorization by mode-0 fibers: one rank-one term per nonzero fiber,
/// trailing factors are unit vectors. Lossless, rank = number of nonzero fibers.
inline CpFactors cp_exact(const Tensor& t) {
  if (t.order() < 2) throw DimensionError("cp_exact needs order >= 2");
  const Matrix unfolded = matricize_mode1(t);
  std::vector<Eigen::Index> cols;
  for (Eigen::Index c = 0; c < unfolded.cols(); ++c)
    if (unfolded.col(c).squaredNorm() > 0.0) cols.push_back(c);

  CpFactors f;
  f.rank = std::max<std::size_t>(cols.size(), 1);
  const auto r = static_cast<Eigen::Index>(f.rank);
  f.weights = Vector::Zero(r);
  for (std::size_t n : t.dims()) f.factors.push_back(Matrix::Zero(static_cast<Eigen::Index>(n), r));
  if (cols.empty()) {
    for (auto& a : f.factors) a.row(0).setOnes();
    return f;
  }
  for (Eigen::Index j = 0; j < r; ++j) {
    const Eigen::Index c = cols[static_cast<std::size_t>(j)];
    const double nrm = unfolded.col(c).norm();
    f.weights(j) = nrm;
    f.factors[0].col(j) = unfolded.col(c) / nrm;
    std::size_t rem = static_cast<std::size_t>(c);
    for (std::size_t k = 1; k < t.order(); ++k) {
      f.factors[k](static_cast<Eigen::Index>(rem % t.dim(k)), j) = 1.0;
      rem /= t.dim(k);
    }
  }
  return f;
}

/// Fiber expansion of a coordinate tensor; duplicate coordinates are summed.
inline CpFactors cp_exact(const SparseTensor& t) {
  if (t.order() < 2) throw DimensionError("cp_exact needs order >= 2");
  const Dims& dims = t.dims();
  std::map<std::vector<std::uint32_t>, std::size_t> fiber_of;
  std::vector<std::vector<std::uint32_t>> keys;
  for (std::size_t e = 0; e < t.nnz(); ++e) {
    auto idx = t.index(e);
    std::vector<std::uint32_t> key(idx.begin() + 1, idx.end());
    if (fiber_of.emplace(key, keys.size()).second) keys.push_back(std::move(key));
  }
  const auto n0 = static_cast<Eigen::Index>(dims[0]);
  Matrix head = Matrix::Zero(n0, static_cast<Eigen::Index>(std::max<std::size_t>(keys.size(), 1)));
  for (std::size_t e = 0; e < t.nnz(); ++e) {
    auto idx = t.index(e);
    std::vector<std::uint32_t> key(idx.begin() + 1, idx.end());
    head(idx[0], static_cast<Eigen::Index>(fiber_of[key])) += t.value(e);
  }
  std::vector<std::size_t> live;
  for (std::size_t c = 0; c < keys.size(); ++c)
    if (head.col(static_cast<Eigen::Index>(c)).squaredNorm() > 0.0) live.push_back(c);

  CpFactors f;
  f.rank = std::max<std::size_t>(live.size(), 1);
  const auto r = static_cast<Eigen::Index>(f.rank);
  f.weights = Vector::Zero(r);
  for (std::size_t n : dims) f.factors.push_back(Matrix::Zero(static_cast<Eigen::Index>(n), r));
  if (live.empty()) {
    for (auto& a : f.factors) a.row(0).setOnes();
    return f;
  }
  for (Eigen::Index j = 0; j < r; ++j) {
    const std::size_t c = live[static_cast<std::size_t>(j)];
    const double nrm = head.col(static_cast<Eigen::Index>(c)).norm();
    f.weights(j) = nrm;
    f.factors[0].col(j) = head.col(static_cast<Eigen::Index>(c)) / nrm;
    for (std::size_t k = 1; k < dims.size(); ++k) f.factors[k](keys[c][k - 1], j) = 1.0;
  }
  return f;
}

}  // namespace tdmor
