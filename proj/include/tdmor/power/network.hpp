#pragma once

// Network reduction to generator internal nodes.
//
// Loads become constant admittances at their solved voltages, every machine
// gets an internal node behind 1/(j X'd), and all remaining buses are
// eliminated by Schur complement. Slack buses without a machine stay in the
// reduced network as fixed voltage sources, so generator currents are
//   I = Y E + i_source.

#include <optional>
#include <string>
#include <vector>

#include "tdmor/power/power_flow.hpp"

namespace tdmor {

inline constexpr double kFaultAdmittance = 1e6;

/// Schur complement Y_kk - Y_ke Y_ee^-1 Y_ek over the kept node indices.
inline CMatrix kron_reduce(const CMatrix& y, const std::vector<Eigen::Index>& keep) {
  const Eigen::Index n = y.rows();
  std::vector<bool> kept(static_cast<std::size_t>(n), false);
  for (auto k : keep) {
    if (k < 0 || k >= n) throw DimensionError("kron_reduce: node index out of range");
    kept[static_cast<std::size_t>(k)] = true;
  }
  std::vector<Eigen::Index> elim;
  for (Eigen::Index i = 0; i < n; ++i)
    if (!kept[static_cast<std::size_t>(i)]) elim.push_back(i);

  const auto ne = static_cast<Eigen::Index>(elim.size());
  CMatrix ykk = y(keep, keep);
  if (ne == 0) return ykk;
  const CMatrix yke = y(keep, elim);
  const CMatrix yee = y(elim, elim);
  const CMatrix yek = y(elim, keep);
  Eigen::FullPivLU<CMatrix> lu(yee);
  if (!lu.isInvertible()) throw NumericalError("kron_reduce: elimination block is singular");
  return ykk - yke * lu.solve(yek);
}

struct ReducedNetwork {
  CMatrix y;          // machines x machines
  CVector i_source;   // injection from fixed voltage sources at E = 0
  std::optional<int> fault_bus;
};

/// Augmented admittance over [buses..., internal nodes...] at a solved point.
inline CMatrix augmented_admittance(const PowerSystem& sys, const PowerFlowSolution& pf,
                                    std::optional<int> fault_bus = std::nullopt) {
  const auto nb = static_cast<Eigen::Index>(sys.buses.size());
  const auto nm = static_cast<Eigen::Index>(sys.machines.size());
  CMatrix y = CMatrix::Zero(nb + nm, nb + nm);
  y.topLeftCorner(nb, nb) = build_ybus(sys);
  for (Eigen::Index i = 0; i < nb; ++i) {
    const double v2 = std::norm(pf.voltage(i));
    y(i, i) += Complex(pf.p_load(i), -pf.q_load(i)) / v2;
  }
  for (Eigen::Index g = 0; g < nm; ++g) {
    const auto& m = sys.machines[static_cast<std::size_t>(g)];
    const auto b = static_cast<Eigen::Index>(sys.bus_index(m.bus));
    const Complex yg = 1.0 / Complex(0.0, m.Xd_prime);
    y(nb + g, nb + g) += yg;
    y(b, b) += yg;
    y(nb + g, b) -= yg;
    y(b, nb + g) -= yg;
  }
  if (fault_bus) {
    if (!sys.has_bus(*fault_bus)) throw ConfigError("fault at unknown bus " + std::to_string(*fault_bus));
    const auto f = static_cast<Eigen::Index>(sys.bus_index(*fault_bus));
    y(f, f) += kFaultAdmittance;
  }
  return y;
}

/// Bus indices of slack buses that carry no machine (infinite buses).
inline std::vector<Eigen::Index> source_buses(const PowerSystem& sys) {
  std::vector<Eigen::Index> out;
  for (std::size_t i = 0; i < sys.buses.size(); ++i) {
    if (sys.buses[i].type != BusType::slack) continue;
    bool has_machine = false;
    for (const auto& m : sys.machines) has_machine |= m.bus == sys.buses[i].id;
    if (!has_machine) out.push_back(static_cast<Eigen::Index>(i));
  }
  return out;
}

/// Reduced network for the pre-fault condition or a bolted three-phase fault
/// (large shunt admittance) at `fault_bus`. Post-fault equals pre-fault: faults
/// self-clear without topology change.
inline ReducedNetwork reduce_network(const PowerSystem& sys, const PowerFlowSolution& pf,
                                     std::optional<int> fault_bus = std::nullopt) {
  const auto nb = static_cast<Eigen::Index>(sys.buses.size());
  const auto nm = static_cast<Eigen::Index>(sys.machines.size());
  const CMatrix y = augmented_admittance(sys, pf, fault_bus);
  const auto sources = source_buses(sys);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index g = 0; g < nm; ++g) keep.push_back(nb + g);
  for (auto s : sources) keep.push_back(s);
  const CMatrix yred = kron_reduce(y, keep);

  ReducedNetwork net;
  net.fault_bus = fault_bus;
  net.y = yred.topLeftCorner(nm, nm);
  net.i_source = CVector::Zero(nm);
  const auto ns = static_cast<Eigen::Index>(sources.size());
  for (Eigen::Index s = 0; s < ns; ++s) net.i_source += yred.col(nm + s).head(nm) * pf.voltage(sources[static_cast<std::size_t>(s)]);
  return net;
}

/// Bus voltages implied by internal EMFs (network frame) through the augmented
/// network, including any fault shunt.
inline CVector reconstruct_bus_voltages(const PowerSystem& sys, const PowerFlowSolution& pf, const CVector& e_internal,
                                        std::optional<int> fault_bus = std::nullopt) {
  const auto nb = static_cast<Eigen::Index>(sys.buses.size());
  const auto nm = static_cast<Eigen::Index>(sys.machines.size());
  const CMatrix y = augmented_admittance(sys, pf, fault_bus);
  const auto sources = source_buses(sys);
  std::vector<bool> fixed(static_cast<std::size_t>(nb), false);
  for (auto s : sources) fixed[static_cast<std::size_t>(s)] = true;
  std::vector<Eigen::Index> free;
  for (Eigen::Index i = 0; i < nb; ++i)
    if (!fixed[static_cast<std::size_t>(i)]) free.push_back(i);
  // Y_ff V_f = -(Y_fg E + Y_fs V_s)
  CVector rhs = CVector::Zero(static_cast<Eigen::Index>(free.size()));
  for (std::size_t r = 0; r < free.size(); ++r) {
    Complex acc = 0.0;
    for (Eigen::Index g = 0; g < nm; ++g) acc += y(free[r], nb + g) * e_internal(g);
    for (auto s : sources) acc += y(free[r], s) * pf.voltage(s);
    rhs(static_cast<Eigen::Index>(r)) = -acc;
  }
  const CVector vf = CMatrix(y(free, free)).fullPivLu().solve(rhs);
  CVector v(nb);
  for (std::size_t r = 0; r < free.size(); ++r) v(free[r]) = vf(static_cast<Eigen::Index>(r));
  for (auto s : sources) v(s) = pf.voltage(s);
  return v;
}

}  // namespace tdmor
