#pragma once

// System description and its JSON file format.
//
// {
//   "name": "wscc9", "base_mva": 100, "frequency_hz": 60,
//   "buses":    [{"id": 1, "type": "slack"|"pv"|"pq", "pd": 0, "qd": 0, "pg": 0,
//                 "vm": 1.04, "va_deg": 0, "gs": 0, "bs": 0}, ...],
//   "branches": [{"from": 1, "to": 4, "r": 0, "x": 0.0576, "b": 0, "tap": 1}, ...],
//   "machines": [{"id": 1, "bus": 1, "H": 23.64, "D": 2, "Xd": .., "Xq": ..,
//                 "Xd_prime": .., "Xq_prime": .., "Td0_prime": .., "Tq0_prime": ..,
//                 "exciter":  {"KA", "TA", "KE", "TE", "KF", "TF", "A_ex", "B_ex"},
//                 "governor": {"R", "TG", "TCH"}}, ...],
//   "areas": {"study": [machine ids], "external": [machine ids]}
// }
//
// All electrical quantities are per unit on base_mva; H and time constants in
// seconds. "pg" is the scheduled active generation of a PV bus. A slack bus
// without a machine acts as an infinite bus (fixed voltage source).

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "tdmor/core/types.hpp"

namespace tdmor {

enum class BusType { slack, pv, pq };

struct Bus {
  int id = 0;
  BusType type = BusType::pq;
  double pd = 0.0, qd = 0.0;  // load
  double pg = 0.0;            // scheduled generation (PV)
  double vm = 1.0;            // voltage setpoint (slack, PV) or initial guess
  double va_deg = 0.0;        // slack angle
  double gs = 0.0, bs = 0.0;  // shunt
};

struct Branch {
  int from = 0, to = 0;
  double r = 0.0, x = 0.0, b = 0.0, tap = 1.0;
};

struct ExciterParams {
  double KA = 20.0, TA = 0.2, KE = 1.0, TE = 0.314, KF = 0.063, TF = 0.35;
  double A_ex = 0.0039, B_ex = 1.555;
};

struct GovernorParams {
  double R = 0.05, TG = 0.2, TCH = 0.3;
};

struct MachineParams {
  int id = 0;
  int bus = 0;
  double H = 1.0, D = 0.0;
  double Xd = 1.0, Xq = 1.0, Xd_prime = 0.2, Xq_prime = 0.2;
  double Td0_prime = 5.0, Tq0_prime = 0.5;
  ExciterParams exciter;
  GovernorParams governor;
};

/// Parsed but unsolved system.
struct PowerSystem {
  std::string name;
  double base_mva = 100.0;
  double frequency_hz = 60.0;
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<MachineParams> machines;
  std::vector<int> study_area;     // machine ids
  std::vector<int> external_area;  // machine ids

  std::size_t bus_index(int id) const {
    for (std::size_t i = 0; i < buses.size(); ++i)
      if (buses[i].id == id) return i;
    throw ConfigError("unknown bus id " + std::to_string(id));
  }

  std::size_t machine_index(int id) const {
    for (std::size_t i = 0; i < machines.size(); ++i)
      if (machines[i].id == id) return i;
    throw ConfigError("unknown machine id " + std::to_string(id));
  }

  bool has_bus(int id) const {
    return std::any_of(buses.begin(), buses.end(), [&](const Bus& b) { return b.id == id; });
  }
};

inline std::string to_string(BusType t) {
  switch (t) {
    case BusType::slack: return "slack";
    case BusType::pv: return "pv";
    case BusType::pq: return "pq";
  }
  return "?";
}

namespace detail {

inline double get_number(const nlohmann::json& obj, const std::string& key, const std::string& where,
                         std::optional<double> fallback = std::nullopt) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    if (fallback) return *fallback;
    throw ConfigError(where + "." + key + ": missing required field");
  }
  if (!it->is_number()) throw ConfigError(where + "." + key + ": expected a number");
  return it->get<double>();
}

inline int get_int(const nlohmann::json& obj, const std::string& key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ConfigError(where + "." + key + ": missing required field");
  if (!it->is_number_integer()) throw ConfigError(where + "." + key + ": expected an integer");
  return it->get<int>();
}

inline std::size_t line_of_offset(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(byte), '\n'));
}

inline void require_positive(double v, const std::string& what) {
  if (!(v > 0.0)) throw ConfigError(what + " must be positive, got " + std::to_string(v));
}

}  // namespace detail

/// Bus and branch invariants needed by the power flow.
inline void validate_network(const PowerSystem& sys) {
  if (sys.buses.empty()) throw ConfigError("system has no buses");
  std::set<int> ids;
  int slack = 0;
  for (const auto& b : sys.buses) {
    if (!ids.insert(b.id).second) throw ConfigError("buses: duplicate bus id " + std::to_string(b.id));
    if (b.type == BusType::slack) ++slack;
  }
  if (slack != 1) throw ConfigError("buses: exactly one slack bus required, found " + std::to_string(slack));
  for (std::size_t i = 0; i < sys.branches.size(); ++i) {
    const auto& br = sys.branches[i];
    const std::string where = "branches[" + std::to_string(i) + "]";
    if (!sys.has_bus(br.from) || !sys.has_bus(br.to)) throw ConfigError(where + ": references unknown bus");
    if (br.from == br.to) throw ConfigError(where + ": from and to are the same bus");
    if (br.r == 0.0 && br.x == 0.0) throw ConfigError(where + ": zero impedance");
    detail::require_positive(br.tap, where + ".tap");
  }
}

/// Checks the invariants every dynamic stage relies on.
inline void validate(const PowerSystem& sys) {
  validate_network(sys);
  std::set<int> mids, mbuses;
  for (std::size_t i = 0; i < sys.machines.size(); ++i) {
    const auto& m = sys.machines[i];
    const std::string where = "machines[" + std::to_string(i) + "]";
    if (!mids.insert(m.id).second) throw ConfigError(where + ": duplicate machine id " + std::to_string(m.id));
    if (!sys.has_bus(m.bus)) throw ConfigError(where + ": unknown bus " + std::to_string(m.bus));
    if (!mbuses.insert(m.bus).second) throw ConfigError(where + ": more than one machine on bus " + std::to_string(m.bus));
    if (sys.buses[sys.bus_index(m.bus)].type == BusType::pq)
      throw ConfigError(where + ": machine on PQ bus " + std::to_string(m.bus));
    detail::require_positive(m.H, where + ".H");
    detail::require_positive(m.Xd_prime, where + ".Xd_prime");
    detail::require_positive(m.Xq_prime, where + ".Xq_prime");
    detail::require_positive(m.Td0_prime, where + ".Td0_prime");
    detail::require_positive(m.Tq0_prime, where + ".Tq0_prime");
    detail::require_positive(m.exciter.TA, where + ".exciter.TA");
    detail::require_positive(m.exciter.TE, where + ".exciter.TE");
    detail::require_positive(m.exciter.TF, where + ".exciter.TF");
    detail::require_positive(m.exciter.KA, where + ".exciter.KA");
    detail::require_positive(m.governor.R, where + ".governor.R");
    detail::require_positive(m.governor.TG, where + ".governor.TG");
    detail::require_positive(m.governor.TCH, where + ".governor.TCH");
    if (m.Xd_prime > m.Xd) throw ConfigError(where + ": Xd_prime exceeds Xd");
    if (m.Xq_prime > m.Xq) throw ConfigError(where + ": Xq_prime exceeds Xq");
  }
  for (const auto& b : sys.buses)
    if (b.type == BusType::pv && !mbuses.count(b.id))
      throw ConfigError("bus " + std::to_string(b.id) + ": PV bus without a machine");

  std::set<int> seen;
  for (int id : sys.study_area) {
    if (!mids.count(id)) throw ConfigError("areas.study: unknown machine " + std::to_string(id));
    if (!seen.insert(id).second) throw ConfigError("areas: machine " + std::to_string(id) + " listed twice");
  }
  for (int id : sys.external_area) {
    if (!mids.count(id)) throw ConfigError("areas.external: unknown machine " + std::to_string(id));
    if (!seen.insert(id).second) throw ConfigError("areas: machine " + std::to_string(id) + " listed twice");
  }
  if (seen.size() != sys.machines.size())
    throw ConfigError("areas: study and external areas must partition all machines");
  if (sys.study_area.empty()) throw ConfigError("areas.study: empty study area");
}

inline PowerSystem parse_system(const nlohmann::json& j) {
  using detail::get_int;
  using detail::get_number;
  if (!j.is_object()) throw ConfigError("system file: top level must be an object");
  PowerSystem sys;
  sys.name = j.value("name", std::string("system"));
  sys.base_mva = get_number(j, "base_mva", "system", 100.0);
  sys.frequency_hz = get_number(j, "frequency_hz", "system", 60.0);

  for (const char* section : {"buses", "branches", "machines"})
    if (!j.contains(section) || !j[section].is_array())
      throw ConfigError(std::string("system.") + section + ": missing or not an array");

  for (std::size_t i = 0; i < j["buses"].size(); ++i) {
    const auto& b = j["buses"][i];
    const std::string where = "buses[" + std::to_string(i) + "]";
    Bus bus;
    bus.id = get_int(b, "id", where);
    const std::string type = b.value("type", std::string("pq"));
    if (type == "slack") bus.type = BusType::slack;
    else if (type == "pv") bus.type = BusType::pv;
    else if (type == "pq") bus.type = BusType::pq;
    else throw ConfigError(where + ".type: unknown bus type '" + type + "'");
    bus.pd = get_number(b, "pd", where, 0.0);
    bus.qd = get_number(b, "qd", where, 0.0);
    bus.pg = get_number(b, "pg", where, 0.0);
    bus.vm = get_number(b, "vm", where, 1.0);
    bus.va_deg = get_number(b, "va_deg", where, 0.0);
    bus.gs = get_number(b, "gs", where, 0.0);
    bus.bs = get_number(b, "bs", where, 0.0);
    sys.buses.push_back(bus);
  }
  for (std::size_t i = 0; i < j["branches"].size(); ++i) {
    const auto& b = j["branches"][i];
    const std::string where = "branches[" + std::to_string(i) + "]";
    Branch br;
    br.from = get_int(b, "from", where);
    br.to = get_int(b, "to", where);
    br.r = get_number(b, "r", where, 0.0);
    br.x = get_number(b, "x", where);
    br.b = get_number(b, "b", where, 0.0);
    br.tap = get_number(b, "tap", where, 1.0);
    sys.branches.push_back(br);
  }
  for (std::size_t i = 0; i < j["machines"].size(); ++i) {
    const auto& m = j["machines"][i];
    const std::string where = "machines[" + std::to_string(i) + "]";
    MachineParams mp;
    mp.id = get_int(m, "id", where);
    mp.bus = get_int(m, "bus", where);
    mp.H = get_number(m, "H", where);
    mp.D = get_number(m, "D", where, 0.0);
    mp.Xd = get_number(m, "Xd", where);
    mp.Xq = get_number(m, "Xq", where);
    mp.Xd_prime = get_number(m, "Xd_prime", where);
    mp.Xq_prime = get_number(m, "Xq_prime", where);
    mp.Td0_prime = get_number(m, "Td0_prime", where);
    mp.Tq0_prime = get_number(m, "Tq0_prime", where);
    if (!m.contains("exciter") || !m["exciter"].is_object())
      throw ConfigError(where + ".exciter: missing or not an object");
    if (!m.contains("governor") || !m["governor"].is_object())
      throw ConfigError(where + ".governor: missing or not an object");
    const auto& e = m["exciter"];
    const std::string ew = where + ".exciter";
    mp.exciter = {get_number(e, "KA", ew), get_number(e, "TA", ew), get_number(e, "KE", ew),
                  get_number(e, "TE", ew), get_number(e, "KF", ew), get_number(e, "TF", ew),
                  get_number(e, "A_ex", ew), get_number(e, "B_ex", ew)};
    const auto& g = m["governor"];
    const std::string gw = where + ".governor";
    mp.governor = {get_number(g, "R", gw), get_number(g, "TG", gw), get_number(g, "TCH", gw)};
    sys.machines.push_back(mp);
  }
  if (!j.contains("areas") || !j["areas"].is_object()) throw ConfigError("system.areas: missing or not an object");
  const auto& areas = j["areas"];
  for (const char* key : {"study", "external"})
    if (!areas.contains(key) || !areas[key].is_array())
      throw ConfigError(std::string("areas.") + key + ": missing or not an array");
  sys.study_area = areas["study"].get<std::vector<int>>();
  sys.external_area = areas["external"].get<std::vector<int>>();
  validate(sys);
  return sys;
}

inline PowerSystem parse_system_text(const std::string& text) {
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) throw ConfigError("system file is empty");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("parse error at line " + std::to_string(detail::line_of_offset(text, e.byte)) + ": " +
                      e.what());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("parse error: ") + e.what());
  }
  try {
    return parse_system(j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("schema error: ") + e.what());
  }
}

inline PowerSystem load_system(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open system file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_system_text(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline nlohmann::json to_json(const PowerSystem& sys) {
  nlohmann::json j;
  j["name"] = sys.name;
  j["base_mva"] = sys.base_mva;
  j["frequency_hz"] = sys.frequency_hz;
  j["buses"] = nlohmann::json::array();
  for (const auto& b : sys.buses)
    j["buses"].push_back({{"id", b.id}, {"type", to_string(b.type)}, {"pd", b.pd}, {"qd", b.qd}, {"pg", b.pg},
                          {"vm", b.vm}, {"va_deg", b.va_deg}, {"gs", b.gs}, {"bs", b.bs}});
  j["branches"] = nlohmann::json::array();
  for (const auto& br : sys.branches)
    j["branches"].push_back({{"from", br.from}, {"to", br.to}, {"r", br.r}, {"x", br.x}, {"b", br.b}, {"tap", br.tap}});
  j["machines"] = nlohmann::json::array();
  for (const auto& m : sys.machines) {
    const auto& e = m.exciter;
    const auto& g = m.governor;
    j["machines"].push_back({{"id", m.id}, {"bus", m.bus}, {"H", m.H}, {"D", m.D}, {"Xd", m.Xd}, {"Xq", m.Xq},
                             {"Xd_prime", m.Xd_prime}, {"Xq_prime", m.Xq_prime}, {"Td0_prime", m.Td0_prime},
                             {"Tq0_prime", m.Tq0_prime},
                             {"exciter", {{"KA", e.KA}, {"TA", e.TA}, {"KE", e.KE}, {"TE", e.TE}, {"KF", e.KF},
                                          {"TF", e.TF}, {"A_ex", e.A_ex}, {"B_ex", e.B_ex}}},
                             {"governor", {{"R", g.R}, {"TG", g.TG}, {"TCH", g.TCH}}}});
  }
  j["areas"] = {{"study", sys.study_area}, {"external", sys.external_area}};
  return j;
}

}  // namespace tdmor
