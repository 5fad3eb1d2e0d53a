#pragma once

// Multi-machine dynamic model: two-axis machine, IEEE type-1 exciter,
// first-order governor and non-reheat turbine, nine states per machine,
// coupled through the reduced network.
//
// Per-machine state block (fixed order, it defines every Jacobian/tensor index):
//   0 delta  rotor angle (rad)       5 VR   regulator output
//   1 omega  speed (pu)              6 RF   rate feedback
//   2 Eq'    q-axis transient EMF    7 Pm   mechanical power
//   3 Ed'    d-axis transient EMF    8 Pgv  valve position
//   4 Efd    field voltage
//
//   delta' = ws (omega - 1)
//   2H omega' = Pm - Pe - D (omega - 1)
//   Td0' Eq'' = -Eq' - (Xd - Xd') Id + Efd
//   Tq0' Ed'' = -Ed' + (Xq - Xq') Iq
//   TE Efd' = -(KE + A exp(B Efd)) Efd + VR
//   TA VR' = -VR + KA RF - (KA KF / TF) Efd + KA (Vref - Vt)
//   TF RF' = -RF + (KF / TF) Efd
//   TG Pgv' = -Pgv + Pref - (omega - 1) / R
//   TCH Pm' = -Pm + Pgv
//
// The network sees each machine as E' = (Ed' + j Eq') e^{j(delta - pi/2)}
// behind j Xd' (Xq' = Xd' at the interface), so f(x) is a pure ODE.

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tdmor/power/network.hpp"

namespace tdmor {

inline constexpr std::size_t kStatesPerMachine = 9;

enum StateVar : std::size_t {
  kDelta = 0, kOmega = 1, kEqp = 2, kEdp = 3, kEfd = 4, kVr = 5, kRf = 6, kPm = 7, kPgv = 8
};

inline constexpr std::array<const char*, kStatesPerMachine> kStateNames = {
    "delta", "omega", "Eq_p", "Ed_p", "Efd", "VR", "RF", "Pm", "Pgv"};

inline constexpr std::size_t state_index(std::size_t machine, std::size_t var) {
  return kStatesPerMachine * machine + var;
}

struct SystemModel {
  PowerSystem system;
  PowerFlowSolution pf;
  ReducedNetwork prefault;
  Vector x0;
  Vector vref, pref;        // per machine, fixed at initialization
  double omega_s = 2.0 * kPi * 60.0;
  std::vector<std::size_t> study;     // machine indices
  std::vector<std::size_t> external;  // machine indices

  std::size_t machines() const noexcept { return system.machines.size(); }
  std::size_t states() const noexcept { return kStatesPerMachine * machines(); }
  double load_level() const noexcept { return pf.load_level; }

  /// Reduced network with a bolted fault at `bus`.
  ReducedNetwork faulted(int bus) const {
    if (!system.has_bus(bus)) throw ConfigError("fault at unknown bus " + std::to_string(bus));
    return reduce_network(system, pf, bus);
  }

  std::vector<std::string> state_names() const {
    std::vector<std::string> names;
    for (const auto& m : system.machines)
      for (const char* s : kStateNames) names.push_back(std::string(s) + "_" + std::to_string(m.id));
    return names;
  }
};

/// Terminal quantities of every machine for a given state and network.
struct MachineOutputs {
  Vector id, iq, pe, vt;
};

/// Evaluates f(x) without per-call allocation. Holds a reference to the model;
/// the network is copied. Evaluating a subset of machines touches only those
/// machines' rows and gives bitwise the same values as a full evaluation.
class FullModel {
public:
  FullModel(const SystemModel& sys, const ReducedNetwork& net) : sys_(&sys) {
    const auto m = static_cast<Eigen::Index>(sys.machines());
    if (net.y.rows() != m || net.y.cols() != m || net.i_source.size() != m)
      throw DimensionError("network size does not match machine count");
    yr_ = net.y.real();
    yi_ = net.y.imag();
    src_ = net.i_source;
    er_.resize(m);
    ei_.resize(m);
    sn_.resize(m);
    cs_.resize(m);
    all_.resize(static_cast<std::size_t>(m));
    for (std::size_t g = 0; g < all_.size(); ++g) all_[g] = g;
  }

  void outputs(const Vector& x, MachineOutputs& out) {
    const auto m = static_cast<Eigen::Index>(sys_->machines());
    out.id.resize(m);
    out.iq.resize(m);
    out.pe.resize(m);
    out.vt.resize(m);
    emfs(x);
    for (std::size_t g : all_) {
      const Terminal t = terminal(x, g);
      const auto gi = static_cast<Eigen::Index>(g);
      out.id(gi) = t.id;
      out.iq(gi) = t.iq;
      out.pe(gi) = t.pe;
      out.vt(gi) = t.vt;
    }
  }

  void operator()(const Vector& x, Vector& dx) {
    dx.resize(x.size());
    evaluate(x, dx, all_);
  }

  Vector operator()(const Vector& x) {
    Vector dx(x.size());
    (*this)(x, dx);
    return dx;
  }

  /// Writes only the state rows of `machines`; other rows of dx are untouched.
  void evaluate(const Vector& x, Vector& dx, std::span<const std::size_t> machines) {
    emfs(x);
    const double ws = sys_->omega_s;
    for (std::size_t g : machines) {
      const auto& p = sys_->system.machines[g];
      const Terminal t = terminal(x, g);
      const auto gi = static_cast<Eigen::Index>(g);
      const double* s = x.data() + state_index(g, 0);
      double* d = dx.data() + state_index(g, 0);
      const double slip = s[kOmega] - 1.0;
      const auto& ex = p.exciter;
      const auto& gov = p.governor;
      d[kDelta] = ws * slip;
      d[kOmega] = (s[kPm] - t.pe - p.D * slip) / (2.0 * p.H);
      d[kEqp] = (-s[kEqp] - (p.Xd - p.Xd_prime) * t.id + s[kEfd]) / p.Td0_prime;
      d[kEdp] = (-s[kEdp] + (p.Xq - p.Xq_prime) * t.iq) / p.Tq0_prime;
      d[kEfd] = (-(ex.KE + ex.A_ex * std::exp(ex.B_ex * s[kEfd])) * s[kEfd] + s[kVr]) / ex.TE;
      d[kVr] = (-s[kVr] + ex.KA * s[kRf] - ex.KA * ex.KF / ex.TF * s[kEfd] + ex.KA * (sys_->vref(gi) - t.vt)) / ex.TA;
      d[kRf] = (-s[kRf] + ex.KF / ex.TF * s[kEfd]) / ex.TF;
      d[kPm] = (-s[kPm] + s[kPgv]) / gov.TCH;
      d[kPgv] = (-s[kPgv] + sys_->pref(gi) - slip / gov.R) / gov.TG;
    }
  }

  /// Floating-point operations of one evaluation over `k` machines out of m.
  /// Convention: every real add/sub/mul/div and every transcendental call
  /// (sin, cos, exp, hypot) counts as one.
  static std::size_t flops(std::size_t m, std::size_t k) {
    const std::size_t emf = 2 + 6;           // sin, cos, rotation
    const std::size_t terminal = 8 * m + 14;  // current row, dq rotation, Pe, Vt
    const std::size_t equations = 55;
    return m * emf + k * (terminal + equations);
  }

private:
  struct Terminal {
    double id, iq, pe, vt;
  };

  void emfs(const Vector& x) {
    for (std::size_t g = 0; g < all_.size(); ++g) {
      const double delta = x(static_cast<Eigen::Index>(state_index(g, kDelta)));
      const double edp = x(static_cast<Eigen::Index>(state_index(g, kEdp)));
      const double eqp = x(static_cast<Eigen::Index>(state_index(g, kEqp)));
      // (Ed' + j Eq') e^{j(delta - pi/2)}, e^{j(delta - pi/2)} = sin - j cos
      const auto gi = static_cast<Eigen::Index>(g);
      sn_(gi) = std::sin(delta);
      cs_(gi) = std::cos(delta);
      er_(gi) = edp * sn_(gi) + eqp * cs_(gi);
      ei_(gi) = eqp * sn_(gi) - edp * cs_(gi);
    }
  }

  Terminal terminal(const Vector& x, std::size_t g) const {
    const auto gi = static_cast<Eigen::Index>(g);
    const auto m = yr_.cols();
    double ir = src_(gi).real(), ii = src_(gi).imag();
    for (Eigen::Index h = 0; h < m; ++h) {
      ir += yr_(gi, h) * er_(h) - yi_(gi, h) * ei_(h);
      ii += yr_(gi, h) * ei_(h) + yi_(gi, h) * er_(h);
    }
    const double sn = sn_(gi), cs = cs_(gi);
    // (ir + j ii) e^{-j(delta - pi/2)}, e^{-j(delta - pi/2)} = sin + j cos
    Terminal t;
    t.id = ir * sn - ii * cs;
    t.iq = ir * cs + ii * sn;
    t.pe = x(static_cast<Eigen::Index>(state_index(g, kEdp))) * t.id +
           x(static_cast<Eigen::Index>(state_index(g, kEqp))) * t.iq;
    const double xd = sys_->system.machines[g].Xd_prime;
    // E - j Xd' I
    t.vt = std::hypot(er_(gi) + xd * ii, ei_(gi) - xd * ir);
    return t;
  }

  const SystemModel* sys_;
  Matrix yr_, yi_;
  CVector src_;
  Vector er_, ei_, sn_, cs_;
  std::vector<std::size_t> all_;
};

inline Vector f_full(const SystemModel& sys, const ReducedNetwork& net, const Vector& x) {
  FullModel f(sys, net);
  return f(x);
}

inline Vector f_full(const SystemModel& sys, const Vector& x) { return f_full(sys, sys.prefault, x); }

inline MachineOutputs machine_outputs(const SystemModel& sys, const ReducedNetwork& net, const Vector& x) {
  FullModel f(sys, net);
  MachineOutputs out;
  f.outputs(x, out);
  return out;
}

inline double equilibrium_residual(const SystemModel& sys) {
  return f_full(sys, sys.x0).cwiseAbs().maxCoeff();
}

inline void verify_equilibrium(const SystemModel& sys, double tol = 1e-8) {
  const double r = equilibrium_residual(sys);
  if (!(r < tol))
    throw NumericalError("equilibrium residual " + std::to_string(r) + " exceeds " + std::to_string(tol) +
                         " at load level " + std::to_string(sys.load_level()));
}

/// Back-solves every machine's states from its terminal conditions so that
/// f(x0) = 0 on the pre-fault network.
inline SystemModel init_equilibrium(const PowerSystem& system, const PowerFlowSolution& pf, double tol = 1e-8) {
  validate(system);
  SystemModel sys;
  sys.system = system;
  sys.pf = pf;
  sys.omega_s = 2.0 * kPi * system.frequency_hz;
  for (int id : system.study_area) sys.study.push_back(system.machine_index(id));
  for (int id : system.external_area) sys.external.push_back(system.machine_index(id));
  sys.prefault = reduce_network(system, pf);

  const std::size_t nm = system.machines.size();
  sys.x0 = Vector::Zero(static_cast<Eigen::Index>(kStatesPerMachine * nm));
  sys.vref.resize(static_cast<Eigen::Index>(nm));
  sys.pref.resize(static_cast<Eigen::Index>(nm));
  for (std::size_t g = 0; g < nm; ++g) {
    const auto& p = system.machines[g];
    const auto b = static_cast<Eigen::Index>(system.bus_index(p.bus));
    const Complex v = pf.voltage(b);
    const Complex s(pf.p_gen(b), pf.q_gen(b));
    const Complex i = std::conj(s / v);
    // q-axis alignment that makes the Ed' steady state consistent with the
    // Xq' = Xd' network interface.
    const double xq_eff = p.Xq - p.Xq_prime + p.Xd_prime;
    const double delta = std::arg(v + Complex(0.0, xq_eff) * i);
    const Complex to_dq(std::sin(delta), std::cos(delta));  // e^{-j(delta - pi/2)}
    const Complex idq = i * to_dq;
    const Complex vdq = v * to_dq;
    const double edp = vdq.real() - p.Xd_prime * idq.imag();
    const double eqp = vdq.imag() + p.Xd_prime * idq.real();
    const double efd = eqp + (p.Xd - p.Xd_prime) * idq.real();
    const auto& ex = p.exciter;
    const double vr = (ex.KE + ex.A_ex * std::exp(ex.B_ex * efd)) * efd;
    const double rf = ex.KF / ex.TF * efd;
    const double pe = edp * idq.real() + eqp * idq.imag();

    double* x = sys.x0.data() + state_index(g, 0);
    x[kDelta] = delta;
    x[kOmega] = 1.0;
    x[kEqp] = eqp;
    x[kEdp] = edp;
    x[kEfd] = efd;
    x[kVr] = vr;
    x[kRf] = rf;
    x[kPm] = pe;
    x[kPgv] = pe;
    sys.vref(static_cast<Eigen::Index>(g)) = std::abs(v) + vr / ex.KA;
    sys.pref(static_cast<Eigen::Index>(g)) = pe;
  }
  verify_equilibrium(sys, tol);
  return sys;
}

/// Euclidean norm of each external column of `y` restricted to the study rows.
inline std::vector<double> admittance_column_norms(const CMatrix& y, const std::vector<std::size_t>& study,
                                                   const std::vector<std::size_t>& external) {
  std::vector<double> out;
  for (std::size_t c : external) {
    double acc = 0.0;
    for (std::size_t r : study) acc += std::norm(y(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
    out.push_back(std::sqrt(acc));
  }
  return out;
}

/// Pre-fault coupling of every external machine to the study area, keyed by machine id.
inline std::map<int, double> admittance_column_norms(const SystemModel& sys) {
  const auto norms = admittance_column_norms(sys.prefault.y, sys.study, sys.external);
  std::map<int, double> out;
  for (std::size_t k = 0; k < sys.external.size(); ++k) out[sys.system.machines[sys.external[k]].id] = norms[k];
  return out;
}

/// Power flow at `load_level` followed by equilibrium initialization.
inline SystemModel build_system_model(const PowerSystem& system, double load_level,
                                      const PowerFlowOptions& pf_opts = {}) {
  validate(system);
  return init_equilibrium(system, solve_power_flow(system, load_level, pf_opts));
}

}  // namespace tdmor
