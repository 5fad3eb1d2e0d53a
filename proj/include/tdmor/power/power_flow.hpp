#pragma once

// Bus admittance assembly and Newton-Raphson power flow in polar coordinates.

#include <cmath>
#include <string>
#include <vector>

#include "tdmor/power/system.hpp"

namespace tdmor {

struct PowerFlowOptions {
  double tolerance = 1e-11;  // max |mismatch| in pu
  int max_iters = 50;
};

struct PowerFlowSolution {
  double load_level = 1.0;
  CVector voltage;         // complex bus voltages, bus order of the system
  Vector p_gen, q_gen;     // generation per bus
  Vector p_load, q_load;   // scaled loads per bus
  double max_mismatch = 0.0;
  int iterations = 0;
};

/// Bus admittance matrix: pi-model branches with off-nominal tap on the from
/// side, plus bus shunts. Loads are not included.
inline CMatrix build_ybus(const PowerSystem& sys) {
  const auto n = static_cast<Eigen::Index>(sys.buses.size());
  CMatrix y = CMatrix::Zero(n, n);
  for (const auto& br : sys.branches) {
    const auto f = static_cast<Eigen::Index>(sys.bus_index(br.from));
    const auto t = static_cast<Eigen::Index>(sys.bus_index(br.to));
    const Complex ys = 1.0 / Complex(br.r, br.x);
    const Complex ysh(0.0, br.b / 2.0);
    y(f, f) += (ys + ysh) / (br.tap * br.tap);
    y(t, t) += ys + ysh;
    y(f, t) -= ys / br.tap;
    y(t, f) -= ys / br.tap;
  }
  for (std::size_t i = 0; i < sys.buses.size(); ++i) {
    const auto& b = sys.buses[i];
    y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) += Complex(b.gs, b.bs);
  }
  return y;
}

/// Solves the operating point with all loads (P and Q) and all PV generation
/// scaled by `load_level`; the slack bus absorbs the residual.
inline PowerFlowSolution solve_power_flow(const PowerSystem& sys, double load_level,
                                          const PowerFlowOptions& opts = {}) {
  validate_network(sys);
  if (!(load_level > 0.0)) throw ConfigError("load level must be positive");
  const std::size_t nb = sys.buses.size();
  const CMatrix ybus = build_ybus(sys);

  Vector p_spec = Vector::Zero(static_cast<Eigen::Index>(nb));
  Vector q_spec = Vector::Zero(static_cast<Eigen::Index>(nb));
  Vector vm(static_cast<Eigen::Index>(nb)), va(static_cast<Eigen::Index>(nb));
  std::vector<Eigen::Index> pvpq, pq;
  for (std::size_t i = 0; i < nb; ++i) {
    const auto& b = sys.buses[i];
    const auto ii = static_cast<Eigen::Index>(i);
    vm(ii) = b.type == BusType::pq ? 1.0 : b.vm;
    va(ii) = b.type == BusType::slack ? b.va_deg * kPi / 180.0 : 0.0;
    if (b.type == BusType::pq && b.vm > 0.0) vm(ii) = b.vm;
    p_spec(ii) = (b.type == BusType::pv ? b.pg : 0.0) * load_level - b.pd * load_level;
    q_spec(ii) = -b.qd * load_level;
    if (b.type != BusType::slack) pvpq.push_back(ii);
    if (b.type == BusType::pq) pq.push_back(ii);
  }
  const auto npvpq = static_cast<Eigen::Index>(pvpq.size());
  const auto npq = static_cast<Eigen::Index>(pq.size());

  auto voltages = [&] {
    CVector v(static_cast<Eigen::Index>(nb));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = std::polar(vm(i), va(i));
    return v;
  };

  PowerFlowSolution sol;
  sol.load_level = load_level;
  CVector v = voltages();
  for (int it = 0; it <= opts.max_iters; ++it) {
    const CVector ibus = ybus * v;
    const CVector s = v.cwiseProduct(ibus.conjugate());
    Vector f(npvpq + npq);
    for (Eigen::Index k = 0; k < npvpq; ++k) f(k) = s(pvpq[static_cast<std::size_t>(k)]).real() - p_spec(pvpq[static_cast<std::size_t>(k)]);
    for (Eigen::Index k = 0; k < npq; ++k) f(npvpq + k) = s(pq[static_cast<std::size_t>(k)]).imag() - q_spec(pq[static_cast<std::size_t>(k)]);
    const double mis = f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
    sol.max_mismatch = mis;
    sol.iterations = it;
    if (!std::isfinite(mis)) break;
    if (mis < opts.tolerance) {
      sol.voltage = v;
      const CVector sgen = s;
      sol.p_load.resize(static_cast<Eigen::Index>(nb));
      sol.q_load.resize(static_cast<Eigen::Index>(nb));
      sol.p_gen.resize(static_cast<Eigen::Index>(nb));
      sol.q_gen.resize(static_cast<Eigen::Index>(nb));
      for (std::size_t i = 0; i < nb; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        sol.p_load(ii) = sys.buses[i].pd * load_level;
        sol.q_load(ii) = sys.buses[i].qd * load_level;
        sol.p_gen(ii) = sgen(ii).real() + sol.p_load(ii);
        sol.q_gen(ii) = sgen(ii).imag() + sol.q_load(ii);
      }
      return sol;
    }
    if (it == opts.max_iters) break;

    // dS/dVa and dS/dVm, dense.
    const CVector vnorm = v.cwiseQuotient(v.cwiseAbs().cast<Complex>());
    const CMatrix diag_v = v.asDiagonal();
    const CMatrix ds_dva = Complex(0, 1) * diag_v * (CMatrix(ibus.asDiagonal()) - ybus * diag_v).conjugate();
    const CMatrix ds_dvm = diag_v * (ybus * vnorm.asDiagonal()).conjugate() +
                           CMatrix(ibus.conjugate().asDiagonal()) * vnorm.asDiagonal();
    Matrix jac(npvpq + npq, npvpq + npq);
    for (Eigen::Index r = 0; r < npvpq; ++r) {
      const auto br = pvpq[static_cast<std::size_t>(r)];
      for (Eigen::Index c = 0; c < npvpq; ++c) jac(r, c) = ds_dva(br, pvpq[static_cast<std::size_t>(c)]).real();
      for (Eigen::Index c = 0; c < npq; ++c) jac(r, npvpq + c) = ds_dvm(br, pq[static_cast<std::size_t>(c)]).real();
    }
    for (Eigen::Index r = 0; r < npq; ++r) {
      const auto br = pq[static_cast<std::size_t>(r)];
      for (Eigen::Index c = 0; c < npvpq; ++c) jac(npvpq + r, c) = ds_dva(br, pvpq[static_cast<std::size_t>(c)]).imag();
      for (Eigen::Index c = 0; c < npq; ++c) jac(npvpq + r, npvpq + c) = ds_dvm(br, pq[static_cast<std::size_t>(c)]).imag();
    }
    const Vector dx = jac.partialPivLu().solve(-f);
    for (Eigen::Index k = 0; k < npvpq; ++k) va(pvpq[static_cast<std::size_t>(k)]) += dx(k);
    for (Eigen::Index k = 0; k < npq; ++k) vm(pq[static_cast<std::size_t>(k)]) += dx(npvpq + k);
    v = voltages();
  }
  throw NumericalError("power flow did not converge at load level " + std::to_string(load_level) + " after " +
                       std::to_string(opts.max_iters) + " iterations (max mismatch " +
                       std::to_string(sol.max_mismatch) + " pu); the operating point is likely infeasible");
}

/// Active power dissipated in branches and bus shunts at a solved operating point.
inline double network_losses(const PowerSystem& sys, const CVector& v) {
  double loss = 0.0;
  for (const auto& br : sys.branches) {
    const auto f = static_cast<Eigen::Index>(sys.bus_index(br.from));
    const auto t = static_cast<Eigen::Index>(sys.bus_index(br.to));
    const Complex ys = 1.0 / Complex(br.r, br.x);
    const Complex ysh(0.0, br.b / 2.0);
    const Complex i_f = (ys + ysh) / (br.tap * br.tap) * v(f) - ys / br.tap * v(t);
    const Complex i_t = (ys + ysh) * v(t) - ys / br.tap * v(f);
    loss += (v(f) * std::conj(i_f) + v(t) * std::conj(i_t)).real();
  }
  for (std::size_t i = 0; i < sys.buses.size(); ++i) loss += sys.buses[i].gs * std::norm(v(static_cast<Eigen::Index>(i)));
  return loss;
}

}  // namespace tdmor
