#pragma once

// Classical fixed-step RK4 and trajectory containers.

#include <charconv>
#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "tdmor/core/types.hpp"

namespace tdmor {

using Rhs = std::function<void(const Vector& x, Vector& dx)>;

enum class ModelKind { full, hybrid, taylor, linear };

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::full: return "full";
    case ModelKind::hybrid: return "hybrid";
    case ModelKind::taylor: return "taylor";
    case ModelKind::linear: return "linear";
  }
  return "?";
}

struct SwitchEvent {
  double t = 0.0;
  std::string from, to, reason;
  double level = 1.0;  // load level of the active Taylor model (scenario level for full)
};

struct Trajectory {
  std::vector<double> times;
  std::vector<Vector> states;
  std::vector<ModelKind> modes;  // modes[k] advanced states[k] -> states[k+1]
  std::vector<SwitchEvent> switch_log;
  bool truncated = false;        // a non-finite state ended the run early
  std::string truncation_reason;

  std::size_t size() const noexcept { return times.size(); }
};

/// One RK4 step with reusable workspace.
class Rk4 {
public:
  explicit Rk4(Eigen::Index n) : k1_(n), k2_(n), k3_(n), k4_(n), tmp_(n) {}

  void step(const Rhs& f, Vector& x, double dt) {
    f(x, k1_);
    tmp_ = x + 0.5 * dt * k1_;
    f(tmp_, k2_);
    tmp_ = x + 0.5 * dt * k2_;
    f(tmp_, k3_);
    tmp_ = x + dt * k3_;
    f(tmp_, k4_);
    x += (dt / 6.0) * (k1_ + 2.0 * k2_ + 2.0 * k3_ + k4_);
  }

private:
  Vector k1_, k2_, k3_, k4_, tmp_;
};

/// Number of fixed steps covering [t0, t1]; the span must be a whole number of steps.
inline std::size_t step_count(double t0, double t1, double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("time step must be positive and finite");
  if (!(t1 >= t0)) throw ConfigError("time span must be ordered");
  const double steps = (t1 - t0) / dt;
  const double rounded = std::round(steps);
  if (std::abs(steps - rounded) > 1e-6 * std::max(1.0, steps))
    throw ConfigError("time span is not a whole number of steps of " + std::to_string(dt) + " s");
  return static_cast<std::size_t>(rounded);
}

/// Integrates x' = f(x) over [t0, t1] with fixed step dt, recording every step.
/// A non-finite state stops the run; the trajectory ends at the last finite state.
inline Trajectory integrate(const Rhs& f, const Vector& x_init, double t0, double t1, double dt) {
  const std::size_t steps = step_count(t0, t1, dt);
  Trajectory tr;
  tr.times.reserve(steps + 1);
  tr.states.reserve(steps + 1);
  tr.times.push_back(t0);
  tr.states.push_back(x_init);
  Rk4 rk(x_init.size());
  Vector x = x_init;
  for (std::size_t k = 0; k < steps; ++k) {
    rk.step(f, x, dt);
    if (!x.allFinite()) {
      tr.truncated = true;
      tr.truncation_reason = "non-finite state at t = " + std::to_string(t0 + static_cast<double>(k + 1) * dt);
      break;
    }
    tr.times.push_back(t0 + static_cast<double>(k + 1) * dt);
    tr.states.push_back(x);
  }
  return tr;
}

/// Shortest round-trip decimal form of a double.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

/// CSV: header `time,<names>`, one row per sample.
inline void write_trajectory_csv(std::ostream& out, const Trajectory& tr, const std::vector<std::string>& names) {
  out << "time";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (std::size_t k = 0; k < tr.size(); ++k) {
    if (static_cast<std::size_t>(tr.states[k].size()) != names.size())
      throw DimensionError("trajectory state size does not match the column names");
    out << format_double(tr.times[k]);
    for (Eigen::Index i = 0; i < tr.states[k].size(); ++i) out << ',' << format_double(tr.states[k](i));
    out << '\n';
  }
}

inline std::string json_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out;
}

/// JSON lines: {"t": .., "from": .., "to": .., "reason": .., "level": ..}
inline void write_switch_log_jsonl(std::ostream& out, const std::vector<SwitchEvent>& log) {
  for (const auto& e : log)
    out << "{\"t\":" << format_double(e.t) << ",\"from\":\"" << json_escape(e.from) << "\",\"to\":\""
        << json_escape(e.to) << "\",\"reason\":\"" << json_escape(e.reason) << "\",\"level\":" << format_double(e.level)
        << "}\n";
}

}  // namespace tdmor
