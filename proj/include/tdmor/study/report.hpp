#pragma once

// Study report serialization. Every payload carries the tool version, the
// seed and a hash of the canonical config JSON (object keys sorted, doubles
// in shortest round-trip form), so identical configs give identical bytes.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "tdmor/study/study.hpp"

#ifndef TDMOR_VERSION
#define TDMOR_VERSION "0.0.0"
#endif

namespace tdmor {

inline constexpr const char* kToolVersion = TDMOR_VERSION;
inline constexpr const char* kReportFormat = "tdmor-study-report";
inline constexpr int kReportVersion = 1;

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string config_hash(const nlohmann::json& config) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(config.dump())));
  return buf;
}

/// Non-finite numbers become null (JSON has no infinity).
inline nlohmann::json number_json(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline nlohmann::json report_envelope(const std::string& kind, const nlohmann::json& config, std::uint64_t seed) {
  return {{"format", kReportFormat}, {"version", kReportVersion}, {"kind", kind},          {"tool_version", kToolVersion},
          {"config_hash", config_hash(config)}, {"seed", seed},    {"config", config}};
}

inline nlohmann::json switch_log_json(const std::vector<SwitchEvent>& log) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : log) arr.push_back({{"t", e.t}, {"from", e.from}, {"to", e.to}, {"reason", e.reason}, {"level", e.level}});
  return arr;
}

inline nlohmann::json to_json(const CctResult& r) {
  return {{"cct", r.cct ? nlohmann::json(*r.cct) : nlohmann::json(nullptr)}, {"confirmed", r.confirmed}, {"runs", r.runs}};
}

inline nlohmann::json to_json(const RankSearchResult& r) {
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& p : r.curve) curve.push_back({{"r2", p.ranks.r2}, {"r3", p.ranks.r3}, {"error_deg", number_json(p.error)}});
  return {{"r2", r.ranks.r2}, {"r3", r.ranks.r3}, {"stabilized", r.stabilized}, {"diagnostic", r.diagnostic}, {"curve", curve}};
}

inline nlohmann::json to_json(const ThresholdSearchResult& r) {
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& p : r.curve) curve.push_back({{"threshold_deg", p.threshold_deg}, {"error_deg", number_json(p.error)}});
  return {{"threshold_deg", r.threshold_deg}, {"diagnostic", r.diagnostic}, {"curve", curve}};
}

inline nlohmann::json to_json(const SweepRow& r) {
  nlohmann::json rms = nlohmann::json::array();
  for (double v : r.rms_deg) rms.push_back(number_json(v));
  return {{"load_level", r.load_level},
          {"model_level", r.model_level},
          {"cct_full", r.cct_full ? nlohmann::json(*r.cct_full) : nlohmann::json(nullptr)},
          {"fault_duration", r.fault_duration},
          {"rms_deg", rms},
          {"max_rms_deg", number_json(r.max_rms_deg)},
          {"truncated", r.truncated},
          {"diagnostic", r.diagnostic}};
}

/// Operation counts only; wall times are measurements and go elsewhere.
inline nlohmann::json timing_counts_json(const std::vector<TimingRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) arr.push_back({{"mode", to_string(r.mode)}, {"rhs_flops", r.rhs_flops}});
  return arr;
}

inline nlohmann::json timing_measured_json(const std::vector<TimingRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows)
    arr.push_back({{"mode", to_string(r.mode)}, {"median_s", r.median_s}, {"samples_s", r.samples_s}, {"rhs_flops", r.rhs_flops}});
  return arr;
}

inline std::string csv_number(double v) { return std::isfinite(v) ? format_double(v) : std::string(); }

/// load_level,model_level,cct_s,fault_duration_s,max_rms_deg,<rms per study machine>
inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows, const std::vector<std::string>& study_names) {
  out << "load_level,model_level,cct_s,fault_duration_s,max_rms_deg";
  for (const auto& n : study_names) out << ",rms_deg_" << n;
  out << '\n';
  for (const auto& r : rows) {
    out << format_double(r.load_level) << ',' << format_double(r.model_level) << ','
        << (r.cct_full ? format_double(*r.cct_full) : std::string()) << ',' << format_double(r.fault_duration) << ','
        << csv_number(r.max_rms_deg);
    for (std::size_t i = 0; i < study_names.size(); ++i)
      out << ',' << (i < r.rms_deg.size() ? csv_number(r.rms_deg[i]) : std::string());
    out << '\n';
  }
}

/// mode,rhs_flops,median_s
inline void write_timing_csv(std::ostream& out, const std::vector<TimingRow>& rows) {
  out << "mode,rhs_flops,median_s\n";
  for (const auto& r : rows) out << to_string(r.mode) << ',' << r.rhs_flops << ',' << format_double(r.median_s) << '\n';
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << content;
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace tdmor
