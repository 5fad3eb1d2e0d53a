#pragma once

// Third-order Taylor models of the multi-machine dynamics around an
// equilibrium, with CP-compressed second- and third-order coefficients:
//
//   f(x0 + d) ~ A1 d + A2 (d kron d) + A3 (d kron d kron d)
//   A_i (d kron ...) = U0 diag(w) ((U1^T d) .* (U2^T d) .* ...)
//
// Only these terms are nonzero beyond first order:
//   rows omega, Eq', Ed', VR of every machine in (delta, Eq', Ed') of all machines
//   row Efd in its own Efd (saturation)
// All other rows are linear in x.

#include <algorithm>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include <Eigen/Sparse>

#include "tdmor/power/model.hpp"
#include "tdmor/reduction/derivatives.hpp"
#include "tdmor/tensor/cp.hpp"

namespace tdmor {

/// Raw coefficient tensors are kept (and dense oracles allowed) up to this state dimension.
inline constexpr std::size_t kRawTensorLimit = 60;

/// Nonlinear structure of the adopted machine model.
inline TaylorStructure model_structure(const SystemModel& sys) {
  TaylorStructure s;
  for (std::size_t g = 0; g < sys.machines(); ++g) {
    for (auto v : {kDelta, kEqp, kEdp}) s.coupled_vars.push_back(state_index(g, v));
    for (auto r : {kOmega, kEqp, kEdp, kVr}) s.coupled_rows.push_back(state_index(g, r));
    s.local.emplace_back(state_index(g, kEfd), state_index(g, kEfd));
  }
  std::sort(s.coupled_rows.begin(), s.coupled_rows.end());
  return s;
}

/// f on the pre-fault network as a plain vector field.
inline VectorField prefault_field(const SystemModel& sys) {
  auto model = std::make_shared<FullModel>(sys, sys.prefault);
  return [model](const Vector& x, Vector& dx) { (*model)(x, dx); };
}

/// Central-difference Jacobian at x0 with step max(1e-6, 1e-6 |x0_j|).
inline Matrix jacobian(const SystemModel& sys) { return jacobian_fd(prefault_field(sys), sys.x0); }

struct TaylorFdOptions {
  bool richardson_jacobian = true;
  double jacobian_step = 1e-3;
  FdOptions order2{1e-3, true, 1e-13};
  FdOptions order3{1e-2, true, 1e-13};
};

/// Order-2 or order-3 coefficient tensor around x0 as coordinates.
inline SparseTensor taylor_tensors_sparse(const SystemModel& sys, int order, const TaylorFdOptions& fd = {}) {
  return taylor_tensor_fd(prefault_field(sys), sys.x0, order, model_structure(sys), order == 2 ? fd.order2 : fd.order3);
}

/// Dense order-2 (n^3) or order-3 (n^4) coefficient tensor; desk scale only.
inline Tensor taylor_tensors(const SystemModel& sys, int order, const TaylorFdOptions& fd = {}) {
  if (sys.states() > kRawTensorLimit)
    throw ConfigError("dense Taylor tensors refused above " + std::to_string(kRawTensorLimit) + " states");
  return taylor_tensors_sparse(sys, order, fd).to_dense();
}

/// CP compression; rank 0 requests the lossless fiber expansion.
inline CpResult compress(const SparseTensor& t, std::size_t rank, const CpOptions& opts = {}) {
  if (rank == 0) {
    CpResult r;
    r.factors = cp_exact(t);
    r.fit = 1.0;
    r.converged = true;
    r.fit_history = {1.0};
    return r;
  }
  return cp_decompose(t, rank, opts);
}

inline CpResult compress(const Tensor& t, std::size_t rank, const CpOptions& opts = {}) {
  return compress(SparseTensor::from_dense(t), rank, opts);
}

using MttkrpProbe = std::function<Matrix(std::size_t, const std::vector<Matrix>&)>;

/// MTTKRP of the order-3 coefficient tensor (1/3! folded in) from directional
/// differences, without forming the tensor. Mode-0 probes are third
/// directional derivatives; trailing-mode probes are gradients of weighted
/// second directional derivatives. Directions are restricted to the
/// structure's variables and outputs to its rows.
inline MttkrpProbe order3_probe(VectorField f, Vector x0, const TaylorStructure& st, double step = 1e-3) {
  const auto n = x0.size();
  std::vector<std::size_t> vars = st.coupled_vars;
  std::vector<std::size_t> rows = st.coupled_rows;
  for (const auto& [v, r] : st.local) {
    vars.push_back(v);
    rows.push_back(r);
  }
  std::sort(vars.begin(), vars.end());
  vars.erase(std::unique(vars.begin(), vars.end()), vars.end());
  Vector var_mask = Vector::Zero(n), row_mask = Vector::Zero(n);
  for (auto v : vars) var_mask(static_cast<Eigen::Index>(v)) = 1.0;
  for (auto r : rows) row_mask(static_cast<Eigen::Index>(r)) = 1.0;

  // Sum over sign patterns of f(base + sum s_a h u_a) prod s_a / (2h)^q.
  auto directional = [f, n, step](const Vector& base, const std::vector<Vector>& dirs, Vector& out) {
    const std::size_t q = dirs.size();
    Vector xp(n), fx(n);
    out.setZero(n);
    for (unsigned mask = 0; mask < (1u << q); ++mask) {
      xp = base;
      double sign = 1.0;
      for (std::size_t a = 0; a < q; ++a) {
        if (mask & (1u << a)) {
          xp -= step * dirs[a];
          sign = -sign;
        } else {
          xp += step * dirs[a];
        }
      }
      f(xp, fx);
      out += sign * fx;
    }
    out /= std::pow(2.0 * step, static_cast<double>(q));
  };

  return [=](std::size_t k, const std::vector<Matrix>& fac) {
    if (fac.size() != 4) throw DimensionError("order-3 probe needs four factors");
    const auto r = fac[0].cols();
    Matrix m = Matrix::Zero(n, r);
    Vector acc(n);
    for (Eigen::Index c = 0; c < r; ++c) {
      std::vector<Vector> dirs;
      for (std::size_t j = 1; j <= 3; ++j)
        if (j != k) dirs.push_back(fac[j].col(c).cwiseProduct(var_mask));
      if (k == 0) {
        directional(x0, dirs, acc);
        m.col(c) = acc.cwiseProduct(row_mask) / 6.0;
        continue;
      }
      const Vector w = fac[0].col(c).cwiseProduct(row_mask);
      Vector base = x0;
      for (auto v : vars) {
        const auto vi = static_cast<Eigen::Index>(v);
        const double h = step * std::max(1.0, std::abs(x0(vi)));
        base(vi) = x0(vi) + h;
        directional(base, dirs, acc);
        const double gp = w.dot(acc);
        base(vi) = x0(vi) - h;
        directional(base, dirs, acc);
        const double gm = w.dot(acc);
        base(vi) = x0(vi);
        m(vi, c) = (gp - gm) / (2.0 * h) / 6.0;
      }
    }
    return m;
  };
}

/// Matrix-free CP of the order-3 coefficient tensor for state dimensions where
/// the explicit tensor does not fit. The fit is not measurable and reported as NaN.
inline CpResult compress_order3_implicit(const VectorField& f, const Vector& x0, const TaylorStructure& st,
                                         std::size_t rank, const CpOptions& opts = {}, double step = 1e-3) {
  Dims dims(4, static_cast<std::size_t>(x0.size()));
  return cp_decompose_implicit(dims, rank, order3_probe(f, x0, st, step), std::numeric_limits<double>::quiet_NaN(),
                               opts);
}

struct TaylorRanks {
  std::size_t r2 = 0;  // 0 = lossless
  std::size_t r3 = 0;
  bool operator==(const TaylorRanks&) const = default;
};

struct TaylorModel {
  double load_level = 1.0;
  Vector x0;
  Matrix a1;
  CpFactors a2, a3;
  double fit2 = 1.0, fit3 = 1.0;  // CP fit at build time (NaN when not measurable)
  std::optional<Tensor> a2_raw, a3_raw;

  std::size_t n() const noexcept { return static_cast<std::size_t>(x0.size()); }
  TaylorRanks ranks() const noexcept { return {a2.rank, a3.rank}; }

  void validate() const {
    const auto nn = x0.size();
    if (a1.rows() != nn || a1.cols() != nn) throw DimensionError("TaylorModel: A1 shape");
    a2.validate();
    a3.validate();
    if (a2.order() != 3 || a3.order() != 4) throw DimensionError("TaylorModel: CP orders must be 3 and 4");
    for (const auto* cp : {&a2, &a3})
      for (const auto& f : cp->factors)
        if (f.rows() != nn) throw DimensionError("TaylorModel: CP factor rows must equal state dimension");
  }
};

struct TaylorBuildOptions {
  TaylorRanks ranks;
  CpOptions cp;
  bool retain_raw = true;  // ignored above kRawTensorLimit
  TaylorFdOptions fd;
};

inline TaylorModel build_taylor_model(const SystemModel& sys, const TaylorBuildOptions& opts = {}) {
  TaylorModel m;
  m.load_level = sys.load_level();
  m.x0 = sys.x0;
  const VectorField f = prefault_field(sys);
  m.a1 = opts.fd.richardson_jacobian ? jacobian_richardson(f, sys.x0, opts.fd.jacobian_step) : jacobian(sys);

  const auto st = model_structure(sys);
  const SparseTensor t2 = taylor_tensor_fd(f, sys.x0, 2, st, opts.fd.order2);
  const CpResult c2 = compress(t2, opts.ranks.r2, opts.cp);
  m.a2 = c2.factors;
  m.fit2 = c2.fit;

  const bool desk = sys.states() <= kRawTensorLimit;
  if (desk || opts.ranks.r3 == 0) {
    if (!desk && opts.ranks.r3 == 0)
      throw ConfigError("lossless third-order model refused above " + std::to_string(kRawTensorLimit) + " states");
    const SparseTensor t3 = taylor_tensor_fd(f, sys.x0, 3, st, opts.fd.order3);
    const CpResult c3 = compress(t3, opts.ranks.r3, opts.cp);
    m.a3 = c3.factors;
    m.fit3 = c3.fit;
    if (desk && opts.retain_raw) {
      m.a2_raw = t2.to_dense();
      m.a3_raw = t3.to_dense();
    }
  } else {
    const CpResult c3 = compress_order3_implicit(f, sys.x0, st, opts.ranks.r3, opts.cp, opts.fd.order3.step);
    m.a3 = c3.factors;
    m.fit3 = c3.fit;
  }
  return m;
}

namespace detail {

/// y = M x with M stored densely or sparsely, whichever is smaller.
class LinearMap {
public:
  LinearMap() = default;
  explicit LinearMap(const Matrix& m) {
    const auto nnz = static_cast<std::size_t>((m.array() != 0.0).count());
    rows_ = m.rows();
    cols_ = m.cols();
    nnz_ = nnz;
    if (2 * nnz < static_cast<std::size_t>(m.size())) {
      sparse_ = m.sparseView(0.0, 0.0);
      sparse_.makeCompressed();
      is_sparse_ = true;
    } else {
      dense_ = m;
    }
  }
  template <class In, class Out>
  void apply(const In& x, Out& y) const {
    if (is_sparse_) y.noalias() = sparse_ * x;
    else y.noalias() = dense_ * x;
  }
  std::size_t flops() const noexcept {
    return is_sparse_ ? 2 * nnz_ : 2 * static_cast<std::size_t>(rows_ * cols_);
  }
  Eigen::Index rows() const noexcept { return rows_; }

private:
  bool is_sparse_ = false;
  Matrix dense_;
  Eigen::SparseMatrix<double, Eigen::RowMajor> sparse_;
  Eigen::Index rows_ = 0, cols_ = 0;
  std::size_t nnz_ = 0;
};

}  // namespace detail

/// Evaluates the Taylor rows listed in `rows` (all when empty):
///   out(rows) = A1 dx + sum_i U0 diag(w) prod_k (Uk^T dx)
/// Rows outside the list are left untouched. Terms of order >= 2 can be
/// switched off to get the linear model.
class ReducedRhs {
public:
  ReducedRhs(std::shared_ptr<const TaylorModel> model, std::vector<std::size_t> rows = {}, bool linear_only = false)
      : model_(std::move(model)) {
    model_->validate();
    const auto n = static_cast<Eigen::Index>(model_->n());
    if (rows.empty())
      for (Eigen::Index i = 0; i < n; ++i) rows.push_back(static_cast<std::size_t>(i));
    rows_ = std::move(rows);
    std::vector<Eigen::Index> ri(rows_.begin(), rows_.end());
    a1_ = detail::LinearMap(model_->a1(ri, Eigen::all));
    if (!linear_only)
      for (const CpFactors* cp : {&model_->a2, &model_->a3}) terms_.push_back(make_term(*cp, ri));
    buf_.resize(static_cast<Eigen::Index>(rows_.size()));
    tmp_.resize(static_cast<Eigen::Index>(rows_.size()));
  }

  void operator()(const Vector& dx, Vector& out) {
    a1_.apply(dx, buf_);
    for (auto& t : terms_) {
      t.z.setOnes();
      for (const auto& u : t.trailing) {
        u.apply(dx, t.proj);
        t.z.array() *= t.proj.array();
      }
      t.head.apply(t.z, tmp_);
      buf_ += tmp_;
    }
    for (std::size_t k = 0; k < rows_.size(); ++k) out(static_cast<Eigen::Index>(rows_[k])) = buf_(static_cast<Eigen::Index>(k));
  }

  Vector operator()(const Vector& dx) {
    Vector out = Vector::Zero(dx.size());
    (*this)(dx, out);
    return out;
  }

  std::size_t flops() const {
    std::size_t total = a1_.flops();
    for (const auto& t : terms_) {
      for (const auto& u : t.trailing) total += u.flops();
      total += static_cast<std::size_t>(t.z.size()) * (t.trailing.size() - 1);
      total += t.head.flops() + static_cast<std::size_t>(buf_.size());
    }
    return total;
  }

  const std::vector<std::size_t>& rows() const noexcept { return rows_; }
  const TaylorModel& model() const noexcept { return *model_; }

private:
  struct Term {
    detail::LinearMap head;                // U0(rows) diag(w)
    std::vector<detail::LinearMap> trailing;  // Uk^T
    Vector z, proj;
  };

  static Term make_term(const CpFactors& cp, const std::vector<Eigen::Index>& ri) {
    Term t;
    t.head = detail::LinearMap(Matrix(cp.factors[0](ri, Eigen::all) * cp.weights.asDiagonal()));
    for (std::size_t k = 1; k < cp.order(); ++k) t.trailing.emplace_back(Matrix(cp.factors[k].transpose()));
    t.z.resize(static_cast<Eigen::Index>(cp.rank));
    t.proj.resize(static_cast<Eigen::Index>(cp.rank));
    return t;
  }

  std::shared_ptr<const TaylorModel> model_;
  std::vector<std::size_t> rows_;
  detail::LinearMap a1_;
  std::vector<Term> terms_;
  Vector buf_, tmp_;
};

/// Convenience form of the factored evaluation over all rows.
inline Vector reduced_rhs(const TaylorModel& m, const Vector& dx) {
  if (dx.size() != static_cast<Eigen::Index>(m.n())) throw DimensionError("reduced_rhs: deviation size mismatch");
  ReducedRhs r(std::shared_ptr<const TaylorModel>(&m, [](const TaylorModel*) {}));
  return r(dx);
}

/// Machines whose pre-fault coupling to the study area exceeds `threshold`,
/// together with the study area itself; ids in ascending order.
inline std::vector<int> select_boundary_generators(const SystemModel& sys, double threshold) {
  std::set<int> ids(sys.system.study_area.begin(), sys.system.study_area.end());
  for (const auto& [id, norm] : admittance_column_norms(sys))
    if (norm > threshold) ids.insert(id);
  return {ids.begin(), ids.end()};
}

struct HybridModel {
  std::shared_ptr<const TaylorModel> taylor;
  std::vector<int> nonlinear_set;      // machine ids
  std::vector<std::size_t> full_machines;  // machine indices evaluated by f
  std::vector<std::size_t> taylor_rows;    // state rows evaluated by the Taylor model
};

inline HybridModel make_hybrid(const SystemModel& sys, std::shared_ptr<const TaylorModel> taylor,
                               std::vector<int> nonlinear_set) {
  if (taylor->n() != sys.states()) throw DimensionError("hybrid: Taylor model does not match system size");
  std::sort(nonlinear_set.begin(), nonlinear_set.end());
  nonlinear_set.erase(std::unique(nonlinear_set.begin(), nonlinear_set.end()), nonlinear_set.end());
  HybridModel h;
  h.taylor = std::move(taylor);
  h.nonlinear_set = nonlinear_set;
  std::vector<bool> full(sys.machines(), false);
  for (int id : nonlinear_set) full[sys.system.machine_index(id)] = true;
  for (std::size_t g = 0; g < sys.machines(); ++g) {
    if (full[g]) {
      h.full_machines.push_back(g);
    } else {
      for (std::size_t v = 0; v < kStatesPerMachine; ++v) h.taylor_rows.push_back(state_index(g, v));
    }
  }
  return h;
}

struct HybridRhsOptions {
  bool linear_only = false;  // Taylor rows use A1 only
};

/// Rows of nonlinear-set machines from f(x) on `net`, all other rows from the
/// Taylor model at x - x0. Both groups read the same state vector.
class HybridRhs {
public:
  HybridRhs(const SystemModel& sys, const ReducedNetwork& net, const HybridModel& h, const HybridRhsOptions& opts = {})
      : full_(sys, net), machines_(h.full_machines), has_taylor_(!h.taylor_rows.empty()),
        reduced_(h.taylor, h.taylor_rows.empty() ? std::vector<std::size_t>{0} : h.taylor_rows, opts.linear_only),
        x0_(h.taylor->x0), m_(sys.machines()) {}

  void operator()(const Vector& x, Vector& out) {
    out.resize(x.size());
    if (!machines_.empty()) full_.evaluate(x, out, machines_);
    if (has_taylor_) {
      dx_ = x - x0_;
      reduced_(dx_, out);
    }
  }

  Vector operator()(const Vector& x) {
    Vector out(x.size());
    (*this)(x, out);
    return out;
  }

  std::size_t flops() const {
    std::size_t total = machines_.empty() ? 0 : FullModel::flops(m_, machines_.size());
    if (has_taylor_) total += reduced_.flops() + static_cast<std::size_t>(x0_.size());
    return total;
  }

private:
  FullModel full_;
  std::vector<std::size_t> machines_;
  bool has_taylor_;
  ReducedRhs reduced_;
  Vector x0_, dx_;
  std::size_t m_;
};

inline Vector hybrid_rhs(const HybridModel& h, const Vector& x, const SystemModel& sys) {
  HybridRhs r(sys, sys.prefault, h);
  return r(x);
}

struct ModelSetOptions {
  std::vector<double> levels{0.8, 1.0, 1.2};
  TaylorBuildOptions build;
  PowerFlowOptions power_flow;
};

/// One Taylor model per representative load level, each around its own
/// equilibrium. Any infeasible level aborts the whole set.
inline std::vector<TaylorModel> build_model_set(const PowerSystem& system, const ModelSetOptions& opts = {}) {
  if (opts.levels.empty()) throw ConfigError("model set needs at least one load level");
  std::vector<TaylorModel> out;
  for (double level : opts.levels) {
    try {
      out.push_back(build_taylor_model(build_system_model(system, level, opts.power_flow), opts.build));
    } catch (const NumericalError& e) {
      throw NumericalError("model set: load level " + std::to_string(level) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace tdmor
