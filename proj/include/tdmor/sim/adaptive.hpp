#pragma once

// Contingency runner: pre-fault and fault-on phases on the full model, then
// the post-fault phase on the model chosen by the switch policy.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tdmor/reduction/taylor.hpp"
#include "tdmor/sim/integrator.hpp"

namespace tdmor {

using ModelSet = std::vector<std::shared_ptr<const TaylorModel>>;

inline ModelSet share_models(std::vector<TaylorModel> models) {
  ModelSet out;
  for (auto& m : models) out.push_back(std::make_shared<const TaylorModel>(std::move(m)));
  return out;
}

enum class SimMode { adaptive, force_full, force_hybrid, force_taylor, force_linear };

inline const char* to_string(SimMode m) {
  switch (m) {
    case SimMode::adaptive: return "adaptive";
    case SimMode::force_full: return "force_full";
    case SimMode::force_hybrid: return "force_hybrid";
    case SimMode::force_taylor: return "force_taylor";
    case SimMode::force_linear: return "force_linear";
  }
  return "?";
}

inline SimMode parse_sim_mode(const std::string& s) {
  for (SimMode m : {SimMode::adaptive, SimMode::force_full, SimMode::force_hybrid, SimMode::force_taylor,
                    SimMode::force_linear})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown mode '" + s + "'");
}

struct SwitchPolicy {
  double angle_threshold_deg = 26.0;
  double load_change_fraction = 0.10;
  std::optional<int> reference_generator;   // chosen automatically when empty
  std::vector<double> representative_levels;  // empty: every level of the model set
  SimMode mode = SimMode::adaptive;
  double norm_threshold = 1.0;  // pu, boundary-generator selection
  bool linear_keeps_boundary = true;  // linear mode keeps the nonlinear set on f

  void validate(const SystemModel& sys) const {
    if (!(angle_threshold_deg > 0.0)) throw ConfigError("angle threshold must be positive");
    if (!(load_change_fraction > 0.0 && load_change_fraction < 1.0))
      throw ConfigError("load change fraction must lie in (0, 1)");
    if (!(norm_threshold >= 0.0)) throw ConfigError("norm threshold must be non-negative");
    if (reference_generator) sys.system.machine_index(*reference_generator);
  }
};

struct ReferenceChoice {
  int id = 0;
  bool fallback = false;  // no external machine was electrically far; global max-H used
};

/// Largest-inertia external machine among those with coupling norm at or
/// below `threshold`; ties go to the lowest id.
inline ReferenceChoice select_reference_generator(const SystemModel& sys, const std::map<int, double>& norms,
                                                  double threshold) {
  auto best_of = [&](auto accept) -> std::optional<int> {
    std::optional<int> best;
    double best_h = -1.0;
    for (const auto& m : sys.system.machines) {
      if (!accept(m.id)) continue;
      if (m.H > best_h || (m.H == best_h && m.id < *best)) {
        best = m.id;
        best_h = m.H;
      }
    }
    return best;
  };
  auto far = best_of([&](int id) {
    auto it = norms.find(id);
    return it != norms.end() && it->second <= threshold;
  });
  if (far) return {*far, false};
  auto ext = best_of([&](int id) { return norms.count(id) > 0; });
  if (ext) return {*ext, true};
  return {*best_of([](int) { return true; }), true};
}

inline ReferenceChoice select_reference_generator(const SystemModel& sys, double threshold = 1.0) {
  return select_reference_generator(sys, admittance_column_norms(sys), threshold);
}

/// Largest change, in degrees, of any study machine's angle relative to the
/// reference machine, measured from the baseline state.
inline double max_rotor_deviation(const Vector& x, const Vector& baseline, const std::vector<std::size_t>& study,
                                  std::size_t reference) {
  const auto ref = static_cast<Eigen::Index>(state_index(reference, kDelta));
  double worst = 0.0;
  for (std::size_t g : study) {
    const auto i = static_cast<Eigen::Index>(state_index(g, kDelta));
    const double d = (x(i) - x(ref)) - (baseline(i) - baseline(ref));
    worst = std::max(worst, std::abs(d));
  }
  return worst * 180.0 / kPi;
}

struct Scenario {
  std::optional<int> fault_bus;  // none: undisturbed run
  double t_fault_on = 0.0;
  double t_clear = 0.0;
  double t_end = 16.0;
  double dt = 0.01;
  std::optional<double> load_level;  // must match the system model when given
};

/// Representative level used at `load_level`: starting from the level
/// nearest nominal, move one representative level at a time in the direction
/// of the load change while the gap is at least `fraction` and the move does
/// not take the model further away.
inline double active_model_level(const std::vector<double>& levels, double load_level, double fraction) {
  if (levels.empty()) throw ConfigError("no representative load levels");
  std::vector<double> sorted = levels;
  std::sort(sorted.begin(), sorted.end());
  constexpr double tol = 1e-9;
  std::size_t cur = 0;
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (std::abs(sorted[i] - 1.0) < std::abs(sorted[cur] - 1.0)) cur = i;
  const bool up = load_level > sorted[cur];
  while (std::abs(load_level - sorted[cur]) >= fraction - tol) {
    if (up ? cur + 1 >= sorted.size() : cur == 0) break;
    const std::size_t next = up ? cur + 1 : cur - 1;
    if (std::abs(load_level - sorted[next]) > std::abs(load_level - sorted[cur]) + tol) break;
    cur = next;
  }
  return sorted[cur];
}

namespace detail {

inline std::shared_ptr<const TaylorModel> model_at(const ModelSet& set, double level) {
  for (const auto& m : set)
    if (std::abs(m->load_level - level) < 1e-9) return m;
  throw ConfigError("missing model for load level " + format_double(level));
}

inline std::size_t step_index(double t, double dt, const char* what) {
  const double k = t / dt;
  const double r = std::round(k);
  if (!(t >= 0.0) || std::abs(k - r) > 1e-6 * std::max(1.0, k))
    throw ConfigError(std::string(what) + " must be a non-negative multiple of the time step");
  return static_cast<std::size_t>(r);
}

}  // namespace detail

/// Runs one contingency on `sys` (the system at the scenario's load level).
/// Pre-fault [0, t_on) and fault-on [t_on, t_clear) use the full model; the
/// post-fault phase follows `policy.mode`. Undisturbed runs are post-fault
/// from t = 0.
inline Trajectory run_adaptive(const SystemModel& sys, const ModelSet& models, const Scenario& sc,
                               const SwitchPolicy& policy) {
  policy.validate(sys);
  if (sc.load_level && std::abs(*sc.load_level - sys.load_level()) > 1e-12)
    throw ConfigError("scenario load level does not match the system model");
  const std::size_t steps = step_count(0.0, sc.t_end, sc.dt);
  std::size_t k_on = 0, k_clear = 0;
  if (sc.fault_bus) {
    k_on = detail::step_index(sc.t_fault_on, sc.dt, "fault-on time");
    k_clear = detail::step_index(sc.t_clear, sc.dt, "clearing time");
    if (k_clear < k_on || k_clear > steps) throw ConfigError("scenario times must satisfy t_on <= t_clear <= t_end");
  }

  const std::size_t ref = sys.system.machine_index(
      policy.reference_generator ? *policy.reference_generator : select_reference_generator(sys, policy.norm_threshold).id);

  // Active Taylor model, resolved only when a reduced mode is possible.
  std::shared_ptr<const TaylorModel> taylor;
  double taylor_level = sys.load_level();
  bool swapped = false;  // the active model differs from the one nearest nominal load
  if (policy.mode != SimMode::force_full) {
    std::vector<double> levels = policy.representative_levels;
    if (levels.empty())
      for (const auto& m : models) levels.push_back(m->load_level);
    for (double l : levels) detail::model_at(models, l);
    taylor_level = active_model_level(levels, sys.load_level(), policy.load_change_fraction);
    swapped = taylor_level != active_model_level(levels, 1.0, policy.load_change_fraction);
    taylor = detail::model_at(models, taylor_level);
    if (taylor->n() != sys.states()) throw DimensionError("Taylor model does not match the system size");
  }

  auto full_pre = std::make_shared<FullModel>(sys, sys.prefault);
  std::shared_ptr<FullModel> full_fault;
  if (sc.fault_bus && k_clear > k_on) full_fault = std::make_shared<FullModel>(sys, sys.faulted(*sc.fault_bus));

  const auto nonlinear = select_boundary_generators(sys, policy.norm_threshold);
  auto make_rhs = [&](ModelKind kind) -> Rhs {
    if (kind == ModelKind::full) return [m = full_pre](const Vector& x, Vector& dx) { (*m)(x, dx); };
    std::vector<int> keep;
    if (kind == ModelKind::hybrid || (kind == ModelKind::linear && policy.linear_keeps_boundary)) keep = nonlinear;
    HybridRhsOptions o;
    o.linear_only = kind == ModelKind::linear;
    auto h = std::make_shared<HybridRhs>(sys, sys.prefault, make_hybrid(sys, taylor, keep), o);
    return [h](const Vector& x, Vector& dx) { (*h)(x, dx); };
  };

  Trajectory tr;
  tr.times.reserve(steps + 1);
  tr.states.reserve(steps + 1);
  tr.modes.reserve(steps);
  tr.times.push_back(0.0);
  tr.states.push_back(sys.x0);

  std::string current = "none";
  auto level_of = [&](ModelKind k) { return k == ModelKind::full ? sys.load_level() : taylor_level; };
  auto log = [&](double t, const std::string& to, const std::string& reason, double level) {
    tr.switch_log.push_back({t, current, to, reason, level});
    current = to;
  };

  Rk4 rk(sys.x0.size());
  Vector x = sys.x0;
  Rhs rhs;
  enum class Phase { pre, fault, post } phase = Phase::pre;
  ModelKind kind = ModelKind::full;
  bool started_post = false;
  const bool faulted_run = sc.fault_bus.has_value();

  for (std::size_t k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * sc.dt;
    Phase want = Phase::post;
    if (faulted_run && k < k_on) want = Phase::pre;
    if (faulted_run && k >= k_on && k < k_clear) want = Phase::fault;

    if (k == 0 || want != phase) {
      phase = want;
      if (phase == Phase::pre) {
        kind = ModelKind::full;
        rhs = make_rhs(kind);
        log(t, "full", "pre_fault", sys.load_level());
      } else if (phase == Phase::fault) {
        kind = ModelKind::full;
        auto m = full_fault;
        rhs = [m](const Vector& xx, Vector& dx) { (*m)(xx, dx); };
        log(t, "full", "fault_on", sys.load_level());
      }
    }
    if (phase == Phase::post) {
      ModelKind next = kind;
      std::string reason;
      if (!started_post) {
        started_post = true;
        reason = faulted_run ? "fault_cleared" : "start";
        switch (policy.mode) {
          case SimMode::force_full: next = ModelKind::full; break;
          case SimMode::force_hybrid: next = ModelKind::hybrid; break;
          case SimMode::force_taylor: next = ModelKind::taylor; break;
          case SimMode::force_linear: next = ModelKind::linear; break;
          case SimMode::adaptive:
            next = max_rotor_deviation(x, sys.x0, sys.study, ref) > policy.angle_threshold_deg ? ModelKind::hybrid
                                                                                               : ModelKind::taylor;
            break;
        }
        kind = next;
        rhs = make_rhs(kind);
        if (kind != ModelKind::full && swapped) reason += "+load_change";
        log(t, to_string(kind), reason, level_of(kind));
      } else if (policy.mode == SimMode::adaptive && kind == ModelKind::hybrid &&
                 max_rotor_deviation(x, sys.x0, sys.study, ref) <= policy.angle_threshold_deg) {
        kind = ModelKind::taylor;
        rhs = make_rhs(kind);
        log(t, "taylor", "deviation_below_threshold", level_of(kind));
      }
    }

    tr.modes.push_back(kind);
    rk.step(rhs, x, sc.dt);
    if (!x.allFinite()) {
      tr.modes.pop_back();
      tr.truncated = true;
      tr.truncation_reason = "non-finite state at t = " + format_double(t + sc.dt);
      break;
    }
    tr.times.push_back(static_cast<double>(k + 1) * sc.dt);
    tr.states.push_back(x);
  }
  return tr;
}

}  // namespace tdmor
