#pragma once

// Study procedures over the adaptive runner: angle RMS errors, critical
// clearing time, rank and threshold searches, timing and load sweeps.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "tdmor/sim/adaptive.hpp"

namespace tdmor {

/// Per-generator RMS, in degrees, of the angle difference between two runs on
/// the same time grid. Angles are taken relative to machine `reference` in
/// each run.
inline std::vector<double> rms_error(const Trajectory& a, const Trajectory& b, const std::vector<std::size_t>& machines,
                                     std::size_t reference) {
  if (a.size() != b.size() || a.size() == 0) throw ConfigError("rms_error: time grids differ");
  for (std::size_t k = 0; k < a.size(); ++k)
    if (a.times[k] != b.times[k]) throw ConfigError("rms_error: time grids differ");
  const auto r = static_cast<Eigen::Index>(state_index(reference, kDelta));
  std::vector<double> out;
  for (std::size_t g : machines) {
    const auto i = static_cast<Eigen::Index>(state_index(g, kDelta));
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double d = (a.states[k](i) - a.states[k](r)) - (b.states[k](i) - b.states[k](r));
      acc += d * d;
    }
    out.push_back(std::sqrt(acc / static_cast<double>(a.size())) * kRadToDeg);
  }
  return out;
}

/// Largest instantaneous relative-angle difference, in degrees.
inline std::vector<double> max_abs_error(const Trajectory& a, const Trajectory& b,
                                         const std::vector<std::size_t>& machines, std::size_t reference) {
  if (a.size() != b.size() || a.size() == 0) throw ConfigError("max_abs_error: time grids differ");
  const auto r = static_cast<Eigen::Index>(state_index(reference, kDelta));
  std::vector<double> out;
  for (std::size_t g : machines) {
    const auto i = static_cast<Eigen::Index>(state_index(g, kDelta));
    double worst = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k)
      worst = std::max(worst, std::abs((a.states[k](i) - a.states[k](r)) - (b.states[k](i) - b.states[k](r))));
    out.push_back(worst * kRadToDeg);
  }
  return out;
}

enum class ErrorMetric { rms, max_abs };

/// Worst study-area error of `run` against `reference_run`; a run that
/// diverged (truncated) counts as infinitely wrong.
inline double study_error(const Trajectory& run, const Trajectory& reference_run, const SystemModel& sys,
                          std::size_t reference, ErrorMetric metric = ErrorMetric::rms) {
  if (run.truncated || reference_run.truncated) return std::numeric_limits<double>::infinity();
  const auto e = metric == ErrorMetric::rms ? rms_error(run, reference_run, sys.study, reference)
                                            : max_abs_error(run, reference_run, sys.study, reference);
  return *std::max_element(e.begin(), e.end());
}

inline std::size_t reference_index(const SystemModel& sys, const SwitchPolicy& policy) {
  return sys.system.machine_index(policy.reference_generator ? *policy.reference_generator
                                                             : select_reference_generator(sys, policy.norm_threshold).id);
}

/// Loss of synchronism: the run diverged, or some study machine's angle
/// relative to the reference exceeded `limit_deg`.
inline bool lost_synchronism(const Trajectory& tr, const SystemModel& sys, std::size_t reference,
                             double limit_deg = 180.0) {
  if (tr.truncated) return true;
  const auto r = static_cast<Eigen::Index>(state_index(reference, kDelta));
  for (const auto& x : tr.states)
    for (std::size_t g : sys.study)
      if (std::abs(x(static_cast<Eigen::Index>(state_index(g, kDelta))) - x(r)) * kRadToDeg > limit_deg) return true;
  return false;
}

struct CctOptions {
  double resolution = 0.01;  // also the integration step
  double horizon = 16.0;
  double t_fault_on = 0.0;
  double max_duration = 1.5;
  double limit_deg = 180.0;
};

struct CctResult {
  std::optional<double> cct;  // empty: still stable at max_duration
  bool confirmed = false;     // stable at cct and unstable at cct + resolution, re-run after the search
  int runs = 0;
};

/// Longest stable fault duration at `bus`, by bisection over whole steps.
inline CctResult cct_search(const SystemModel& sys, const ModelSet& models, const SwitchPolicy& policy, int bus,
                            const CctOptions& opts = {}) {
  if (!(opts.resolution > 0.0) || !(opts.max_duration > 0.0)) throw ConfigError("cct: bad resolution or bound");
  const std::size_t ref = reference_index(sys, policy);
  CctResult res;
  auto unstable = [&](std::size_t steps) {
    Scenario sc;
    sc.fault_bus = bus;
    sc.dt = opts.resolution;
    sc.t_fault_on = opts.t_fault_on;
    sc.t_clear = opts.t_fault_on + static_cast<double>(steps) * opts.resolution;
    sc.t_end = opts.t_fault_on + opts.horizon;
    ++res.runs;
    return lost_synchronism(run_adaptive(sys, models, sc, policy), sys, ref, opts.limit_deg);
  };
  if (unstable(0)) throw NumericalError("cct: unstable even for a zero-duration fault at bus " + std::to_string(bus));
  std::size_t lo = 0;
  std::size_t hi = static_cast<std::size_t>(std::floor(opts.max_duration / opts.resolution + 1e-9));
  if (!unstable(hi)) return res;
  while (hi - lo > 1) {
    const std::size_t mid = lo + (hi - lo) / 2;
    (unstable(mid) ? hi : lo) = mid;
  }
  res.cct = std::round(static_cast<double>(lo) * opts.resolution * 1e12) / 1e12;  // drop step-product noise
  res.confirmed = !unstable(lo) && unstable(lo + 1);
  return res;
}

struct RankPoint {
  TaylorRanks ranks;
  double error = 0.0;  // worst study-area error, degrees
};

struct RankSearchOptions {
  std::size_t start_rank = 1;
  double improvement_tol_deg = 0.1;
  std::size_t max_rank = 0;              // 0: n^2
  std::vector<std::size_t> offsets{0, 1, 2};  // r3 = r2 + offset
};

struct RankSearchResult {
  TaylorRanks ranks;
  std::vector<RankPoint> curve;  // best point per r2
  bool stabilized = false;       // false: the bound was hit first
  std::string diagnostic;
};

/// Raises r2 (with r3 = r2 + offset, best offset kept) until the next rank
/// no longer improves the error by the tolerance; returns the last rank that
/// did. `error_of` maps ranks to the worst study-area error.
inline RankSearchResult rank_search(const std::function<double(TaylorRanks)>& error_of, std::size_t n,
                                    const RankSearchOptions& opts = {}) {
  if (opts.start_rank == 0) throw ConfigError("rank search: start rank must be at least 1");
  if (opts.offsets.empty()) throw ConfigError("rank search: no r3 offsets");
  const std::size_t bound = opts.max_rank ? opts.max_rank : n * n;
  RankSearchResult res;
  auto best_at = [&](std::size_t r2) {
    RankPoint best{{r2, r2 + opts.offsets[0]}, std::numeric_limits<double>::infinity()};
    for (std::size_t off : opts.offsets) {
      const TaylorRanks r{r2, r2 + off};
      const double e = error_of(r);
      if (e < best.error) best = {r, e};
    }
    return best;
  };
  res.curve.push_back(best_at(opts.start_rank));
  for (std::size_t r2 = opts.start_rank + 1; r2 <= bound; ++r2) {
    res.curve.push_back(best_at(r2));
    const double prev = res.curve[res.curve.size() - 2].error;
    const double cur = res.curve.back().error;
    const bool both_infinite = std::isinf(prev) && std::isinf(cur);
    if (!both_infinite && !(prev - cur >= opts.improvement_tol_deg)) {
      res.ranks = res.curve[res.curve.size() - 2].ranks;
      res.stabilized = true;
      // a rise past 5% usually means an ALS local minimum at the higher rank
      if (cur > 1.05 * prev)
        res.diagnostic = "error rose from " + format_double(prev) + " to " + format_double(cur) + " deg at r2 = " +
                         std::to_string(r2);
      return res;
    }
  }
  res.ranks = res.curve.back().ranks;
  res.diagnostic = "rank bound " + std::to_string(bound) + " reached without the improvement falling below tolerance";
  return res;
}

/// Rank search on a power system: a Taylor model per candidate rank at the
/// system's own load level, run in `policy.mode` against the full model.
inline RankSearchResult rank_search(const SystemModel& sys, const Scenario& sc, const SwitchPolicy& policy,
                                    const RankSearchOptions& opts = {}, const CpOptions& cp = {}) {
  const std::size_t ref = reference_index(sys, policy);
  SwitchPolicy full_policy = policy;
  full_policy.mode = SimMode::force_full;
  const Trajectory full = run_adaptive(sys, {}, sc, full_policy);
  SwitchPolicy p = policy;
  p.representative_levels = {sys.load_level()};
  auto error_of = [&](TaylorRanks r) {
    TaylorBuildOptions b;
    b.ranks = r;
    b.cp = cp;
    b.retain_raw = false;
    ModelSet set{std::make_shared<const TaylorModel>(build_taylor_model(sys, b))};
    return study_error(run_adaptive(sys, set, sc, p), full, sys, ref);
  };
  return rank_search(error_of, sys.states(), opts);
}

struct ThresholdPoint {
  double threshold_deg = 0.0;
  double error = 0.0;
};

struct ThresholdSearchOptions {
  double start_deg = 1.0;
  double step_deg = 1.0;
  double upper_deg = 90.0;
  double max_error_deg = 5.0;
  ErrorMetric metric = ErrorMetric::rms;
};

struct ThresholdSearchResult {
  double threshold_deg = 0.0;  // 0 when no threshold meets the bound
  std::vector<ThresholdPoint> curve;
  std::string diagnostic;
};

/// Raises the switching threshold from `start_deg` and keeps the largest value
/// reached before the worst study-area error first fails to stay below the bound.
inline ThresholdSearchResult threshold_search(const SystemModel& sys, const ModelSet& models, const Scenario& sc,
                                              const SwitchPolicy& policy, const ThresholdSearchOptions& opts = {}) {
  if (!(opts.step_deg > 0.0) || !(opts.start_deg > 0.0)) throw ConfigError("threshold search: bad sweep");
  const std::size_t ref = reference_index(sys, policy);
  SwitchPolicy p = policy;
  p.mode = SimMode::force_full;
  const Trajectory full = run_adaptive(sys, models, sc, p);
  p.mode = SimMode::adaptive;
  ThresholdSearchResult res;
  const auto steps = static_cast<std::size_t>(std::floor((opts.upper_deg - opts.start_deg) / opts.step_deg + 1e-9));
  for (std::size_t i = 0; i <= steps; ++i) {
    p.angle_threshold_deg = opts.start_deg + static_cast<double>(i) * opts.step_deg;
    const double e = study_error(run_adaptive(sys, models, sc, p), full, sys, ref, opts.metric);
    res.curve.push_back({p.angle_threshold_deg, e});
    if (!(e < opts.max_error_deg)) break;
    res.threshold_deg = p.angle_threshold_deg;
  }
  if (res.threshold_deg == 0.0)
    res.diagnostic = "no threshold keeps the error below " + format_double(opts.max_error_deg) + " deg";
  return res;
}

struct TimingRow {
  SimMode mode = SimMode::force_full;
  double median_s = 0.0;
  std::vector<double> samples_s;
  std::size_t rhs_flops = 0;  // post-fault right-hand side, per evaluation
};

/// Post-fault right-hand-side operation count of one mode.
inline std::size_t post_fault_flops(const SystemModel& sys, const ModelSet& models, const SwitchPolicy& policy,
                                    SimMode mode) {
  if (mode == SimMode::force_full) return FullModel::flops(sys.machines(), sys.machines());
  std::vector<double> levels = policy.representative_levels;
  if (levels.empty())
    for (const auto& m : models) levels.push_back(m->load_level);
  const auto taylor = detail::model_at(models, active_model_level(levels, sys.load_level(), policy.load_change_fraction));
  std::vector<int> keep;
  const auto nl = select_boundary_generators(sys, policy.norm_threshold);
  if (mode == SimMode::force_hybrid || (mode == SimMode::force_linear && policy.linear_keeps_boundary)) keep = nl;
  HybridRhsOptions o;
  o.linear_only = mode == SimMode::force_linear;
  return HybridRhs(sys, sys.prefault, make_hybrid(sys, taylor, keep), o).flops();
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

/// Median wall time of whole runs per mode. Models are prebuilt, so build
/// time is excluded; one untimed warm-up run precedes each mode.
inline std::vector<TimingRow> timing_compare(const SystemModel& sys, const ModelSet& models, const Scenario& sc,
                                             const SwitchPolicy& policy, const std::vector<SimMode>& modes,
                                             int repetitions = 5) {
  if (repetitions < 5) throw ConfigError("timing: at least 5 repetitions");
  std::vector<TimingRow> rows;
  for (SimMode m : modes) {
    SwitchPolicy p = policy;
    p.mode = m;
    TimingRow row;
    row.mode = m;
    row.rhs_flops = post_fault_flops(sys, models, policy, m);
    (void)run_adaptive(sys, models, sc, p);
    for (int i = 0; i < repetitions; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto tr = run_adaptive(sys, models, sc, p);
      row.samples_s.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      if (tr.size() == 0) throw NumericalError("timing: empty run");
    }
    row.median_s = median(row.samples_s);
    rows.push_back(row);
  }
  return rows;
}

struct SweepOptions {
  std::vector<double> levels{0.80, 0.85, 0.90, 0.95, 1.00, 1.05, 1.10, 1.15, 1.20};
  int fault_bus = 7;
  CctOptions cct;
  PowerFlowOptions power_flow;
};

struct SweepRow {
  double load_level = 0.0;
  double model_level = 0.0;       // representative level in use
  std::optional<double> cct_full;  // s
  double fault_duration = 0.0;     // s, the full-model CCT
  std::vector<double> rms_deg;     // per study machine
  double max_rms_deg = 0.0;
  bool truncated = false;
  std::string diagnostic;          // set when the level was skipped
};

/// Per load level: re-solve the operating point, find the full-model CCT,
/// then run the policy at that fault duration and compare with the full model.
inline std::vector<SweepRow> load_sweep(const PowerSystem& system, const ModelSet& models, const SwitchPolicy& policy,
                                        const SweepOptions& opts = {}) {
  std::vector<SweepRow> rows;
  for (double level : opts.levels) {
    SweepRow row;
    row.load_level = level;
    SystemModel sys;
    try {
      sys = build_system_model(system, level, opts.power_flow);
    } catch (const NumericalError& e) {
      row.diagnostic = std::string("skipped: ") + e.what();
      rows.push_back(row);
      continue;
    }
    std::vector<double> levels = policy.representative_levels;
    if (levels.empty())
      for (const auto& m : models) levels.push_back(m->load_level);
    row.model_level = active_model_level(levels, level, policy.load_change_fraction);

    SwitchPolicy full_policy = policy;
    full_policy.mode = SimMode::force_full;
    const auto cct = cct_search(sys, models, full_policy, opts.fault_bus, opts.cct);
    row.cct_full = cct.cct;
    if (!cct.cct) {
      row.diagnostic = "no loss of synchronism up to " + format_double(opts.cct.max_duration) + " s";
      rows.push_back(row);
      continue;
    }
    row.fault_duration = *cct.cct;
    Scenario sc;
    sc.fault_bus = opts.fault_bus;
    sc.dt = opts.cct.resolution;
    sc.t_fault_on = opts.cct.t_fault_on;
    sc.t_clear = opts.cct.t_fault_on + *cct.cct;
    sc.t_end = opts.cct.t_fault_on + opts.cct.horizon;
    const auto full = run_adaptive(sys, models, sc, full_policy);
    const auto run = run_adaptive(sys, models, sc, policy);
    const std::size_t ref = reference_index(sys, policy);
    row.truncated = run.truncated;
    if (run.truncated) {
      row.rms_deg.assign(sys.study.size(), std::numeric_limits<double>::infinity());
    } else {
      row.rms_deg = rms_error(run, full, sys.study, ref);
    }
    row.max_rms_deg = *std::max_element(row.rms_deg.begin(), row.rms_deg.end());
    rows.push_back(row);
  }
  return rows;
}

}  // namespace tdmor
