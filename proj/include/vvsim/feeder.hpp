#pragma once

// Distribution-feeder data model: buses, lines, ZIP loads, in-line voltage
// regulators, capacitor banks, and PV smart inverters with Volt/VAR curves.
// Includes the modified IEEE 34-bus benchmark builder and JSON (de)serialization.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vvsim/util.hpp"

namespace vvsim {

struct Bus {
  int id = 0;
  double base_kv = 4.16;
  double v_min = 0.95;
  double v_max = 1.05;

  bool operator==(const Bus&) const = default;
};

// Series branch in per-unit on the feeder's system base.
struct Line {
  int from_bus = 0;
  int to_bus = 0;
  double r = 0.0;
  double x = 0.0;

  bool operator==(const Line&) const = default;
};

struct ZipLoad {
  int bus = 0;
  double p0_kw = 0.0;
  double q0_kvar = 0.0;
  double z_frac = 0.3;
  double i_frac = 0.4;
  double p_frac = 0.3;

  bool operator==(const ZipLoad&) const = default;
};

// Ideal in-line ratio device attached to an existing line; the ratio applies
// at the from-bus end.
struct VoltageRegulator {
  std::string id;
  int from_bus = 0;
  int to_bus = 0;
  int tap = 0;
  int tap_min = -16;
  int tap_max = 16;
  double step_ratio = 0.00625;

  double ratio() const { return 1.0 + tap * step_ratio; }
  double ratio_at(int t) const { return 1.0 + t * step_ratio; }

  bool operator==(const VoltageRegulator&) const = default;
};

struct CapacitorBank {
  int bus = 0;
  int step = 0;
  int n_steps = 0;
  double step_kvar = 0.0;

  bool operator==(const CapacitorBank&) const = default;
};

struct VoltVarCurve {
  double v1 = 0.92;
  double v2 = 0.98;
  double v3 = 1.02;
  double v4 = 1.08;
  double q_max_frac = 0.6;

  bool operator==(const VoltVarCurve&) const = default;
};

struct PvSmartInverter {
  int bus = 0;
  double s_rating_kva = 0.0;
  double p_avail_kw = 0.0;
  VoltVarCurve curve;

  bool operator==(const PvSmartInverter&) const = default;
};

struct FeederModel {
  std::string name;
  double base_kv = 4.16;
  double s_base_mva = 10.0;
  int substation_bus = 1;
  double source_v_pu = 1.0;
  std::vector<Bus> buses;
  std::vector<Line> lines;
  std::vector<ZipLoad> loads;
  std::vector<VoltageRegulator> regulators;
  std::vector<CapacitorBank> capacitors;
  std::vector<PvSmartInverter> inverters;
  std::vector<int> meters;  // buses with smart meters

  bool operator==(const FeederModel&) const = default;

  size_t bus_pos(int id) const {
    for (size_t i = 0; i < buses.size(); ++i)
      if (buses[i].id == id) return i;
    throw ValidationError("unknown bus id " + std::to_string(id));
  }
  bool has_bus(int id) const {
    return std::any_of(buses.begin(), buses.end(), [&](const Bus& b) { return b.id == id; });
  }
  const VoltageRegulator* regulator_on(int from, int to) const {
    for (const auto& vr : regulators)
      if (vr.from_bus == from && vr.to_bus == to) return &vr;
    return nullptr;
  }
  const VoltageRegulator& regulator(const std::string& rid) const {
    for (const auto& vr : regulators)
      if (vr.id == rid) return vr;
    throw ValidationError("unknown regulator id " + rid);
  }
  double p_base_kw() const { return s_base_mva * 1000.0; }
};

// Controller-issued setpoints. `taps` keyed by regulator id, `cap_steps` and
// `curves` by bus id. `stale` marks a cycle where degraded telemetry forced
// the previous setpoints to be kept.
struct VvoSetpoints {
  std::map<std::string, int> taps;
  std::map<int, int> cap_steps;
  std::map<int, VoltVarCurve> curves;
  double objective_value = 0.0;
  bool feasible = true;
  bool stale = false;

  bool operator==(const VvoSetpoints&) const = default;
};

// ---------------------------------------------------------------------------
// Validation.

inline void validate_curve(const VoltVarCurve& c, const std::string& where) {
  if (!(c.v1 < c.v2 && c.v2 <= c.v3 && c.v3 < c.v4))
    throw ValidationError(where + ": breakpoints must satisfy v1 < v2 <= v3 < v4");
  if (c.q_max_frac < 0.0 || c.q_max_frac > 0.6)
    throw ValidationError(where + ": q_max_frac must lie in [0, 0.6]");
}

inline void validate(const FeederModel& m) {
  if (m.base_kv <= 0) throw ValidationError("feeder: base_kv must be positive");
  if (m.s_base_mva <= 0) throw ValidationError("feeder: s_base_mva must be positive");
  if (m.source_v_pu <= 0) throw ValidationError("feeder: source_v_pu must be positive");
  if (m.buses.empty()) throw ValidationError("feeder: no buses");

  std::set<int> ids;
  for (const auto& b : m.buses) {
    std::string where = "bus " + std::to_string(b.id);
    if (!ids.insert(b.id).second) throw ValidationError(where + ": duplicate id");
    if (b.base_kv <= 0) throw ValidationError(where + ": base_kv must be positive");
    if (!(b.v_min < b.v_max)) throw ValidationError(where + ": v_min must be below v_max");
  }
  if (!ids.count(m.substation_bus))
    throw ValidationError("feeder: substation bus " + std::to_string(m.substation_bus) +
                          " not in bus list");

  std::map<int, std::vector<int>> adj;
  std::set<std::pair<int, int>> line_keys;
  for (const auto& l : m.lines) {
    std::string where = "line " + std::to_string(l.from_bus) + "-" + std::to_string(l.to_bus);
    if (!ids.count(l.from_bus) || !ids.count(l.to_bus))
      throw ValidationError(where + ": references unknown bus");
    if (l.from_bus == l.to_bus) throw ValidationError(where + ": self loop");
    if (l.r < 0 || l.x < 0) throw ValidationError(where + ": negative impedance");
    if (!line_keys.insert({std::min(l.from_bus, l.to_bus), std::max(l.from_bus, l.to_bus)}).second)
      throw ValidationError(where + ": duplicate line");
    adj[l.from_bus].push_back(l.to_bus);
    adj[l.to_bus].push_back(l.from_bus);
  }

  // Radial check: a spanning tree over all buses rooted at the substation.
  if (m.lines.size() != m.buses.size() - 1)
    throw ValidationError("feeder: not radial (" + std::to_string(m.lines.size()) +
                          " lines for " + std::to_string(m.buses.size()) + " buses)");
  std::set<int> seen{m.substation_bus};
  std::queue<int> frontier;
  frontier.push(m.substation_bus);
  while (!frontier.empty()) {
    int b = frontier.front();
    frontier.pop();
    for (int nb : adj[b])
      if (seen.insert(nb).second) frontier.push(nb);
  }
  if (seen.size() != m.buses.size())
    throw ValidationError("feeder: not radial (unreachable buses from substation)");

  for (const auto& ld : m.loads) {
    std::string where = "load at bus " + std::to_string(ld.bus);
    if (!ids.count(ld.bus)) throw ValidationError(where + ": unknown bus");
    if (ld.z_frac < 0 || ld.i_frac < 0 || ld.p_frac < 0)
      throw ValidationError(where + ": negative zip fraction");
    double sum = ld.z_frac + ld.i_frac + ld.p_frac;
    if (std::abs(sum - 1.0) > 1e-9)
      throw ValidationError(where + ": zip fractions sum to " + fmt_g(sum) + ", expected 1");
  }

  std::set<std::string> vr_ids;
  for (const auto& vr : m.regulators) {
    std::string where = "regulator " + vr.id;
    if (vr.id.empty()) throw ValidationError("regulator with empty id");
    if (!vr_ids.insert(vr.id).second) throw ValidationError(where + ": duplicate id");
    bool on_line = std::any_of(m.lines.begin(), m.lines.end(), [&](const Line& l) {
      return l.from_bus == vr.from_bus && l.to_bus == vr.to_bus;
    });
    if (!on_line)
      throw ValidationError(where + ": no line " + std::to_string(vr.from_bus) + "-" +
                            std::to_string(vr.to_bus) + " to attach to");
    if (!(vr.tap_min <= vr.tap && vr.tap <= vr.tap_max))
      throw ValidationError(where + ": tap " + std::to_string(vr.tap) + " outside [" +
                            std::to_string(vr.tap_min) + ", " + std::to_string(vr.tap_max) + "]");
    if (vr.step_ratio <= 0) throw ValidationError(where + ": step_ratio must be positive");
    if (vr.ratio_at(vr.tap_min) < 0.9 - 1e-12 || vr.ratio_at(vr.tap_max) > 1.1 + 1e-12)
      throw ValidationError(where + ": tap range exceeds the 0.9-1.1 ratio band");
  }

  for (const auto& cb : m.capacitors) {
    std::string where = "capacitor at bus " + std::to_string(cb.bus);
    if (!ids.count(cb.bus)) throw ValidationError(where + ": unknown bus");
    if (cb.n_steps < 0 || cb.step < 0 || cb.step > cb.n_steps)
      throw ValidationError(where + ": step outside [0, n_steps]");
    if (cb.step_kvar < 0) throw ValidationError(where + ": negative step_kvar");
  }

  std::set<int> inv_buses;
  for (const auto& inv : m.inverters) {
    std::string where = "inverter at bus " + std::to_string(inv.bus);
    if (!ids.count(inv.bus)) throw ValidationError(where + ": unknown bus");
    if (!inv_buses.insert(inv.bus).second) throw ValidationError(where + ": duplicate inverter");
    if (inv.s_rating_kva <= 0) throw ValidationError(where + ": s_rating_kva must be positive");
    if (inv.p_avail_kw < 0 || inv.p_avail_kw > inv.s_rating_kva)
      throw ValidationError(where + ": p_avail_kw outside [0, s_rating]");
    validate_curve(inv.curve, where);
  }

  std::set<int> meter_set;
  for (int b : m.meters) {
    if (!ids.count(b))
      throw ValidationError("meter at unknown bus " + std::to_string(b));
    if (!meter_set.insert(b).second)
      throw ValidationError("duplicate meter at bus " + std::to_string(b));
  }
}

// ---------------------------------------------------------------------------
// Setpoint application (controller side: rejects out-of-range values).

inline FeederModel apply_setpoints(const FeederModel& model, const VvoSetpoints& sp) {
  FeederModel out = model;
  for (const auto& [rid, tap] : sp.taps) {
    bool found = false;
    for (auto& vr : out.regulators) {
      if (vr.id != rid) continue;
      if (tap < vr.tap_min || tap > vr.tap_max)
        throw ValidationError("regulator " + rid + ": tap " + std::to_string(tap) +
                              " outside [" + std::to_string(vr.tap_min) + ", " +
                              std::to_string(vr.tap_max) + "]");
      vr.tap = tap;
      found = true;
    }
    if (!found) throw ValidationError("unknown regulator id " + rid);
  }
  for (const auto& [bus, step] : sp.cap_steps) {
    bool found = false;
    for (auto& cb : out.capacitors) {
      if (cb.bus != bus) continue;
      if (step < 0 || step > cb.n_steps)
        throw ValidationError("capacitor at bus " + std::to_string(bus) + ": step " +
                              std::to_string(step) + " outside [0, " +
                              std::to_string(cb.n_steps) + "]");
      cb.step = step;
      found = true;
    }
    if (!found) throw ValidationError("unknown capacitor bus " + std::to_string(bus));
  }
  for (const auto& [bus, curve] : sp.curves) {
    bool found = false;
    for (auto& inv : out.inverters) {
      if (inv.bus != bus) continue;
      validate_curve(curve, "inverter at bus " + std::to_string(bus));
      inv.curve = curve;
      found = true;
    }
    if (!found) throw ValidationError("unknown inverter bus " + std::to_string(bus));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Benchmark builder: modified IEEE 34-bus feeder.

// Classic 34-bus radial distribution data (branch impedances in ohms on an
// 11 kV base, spot loads in kW/kVAr), per-unitized here on 10 MVA. The study
// system replaces the bus-8 spot load with a 0.1 MW / 0.6 MVAr constant-
// impedance RL load, adds regulators in lines 7-8 and 19-20, and a 2 MVA PV
// smart inverter at bus 34.
inline FeederModel build_ieee34_modified() {
  struct Row {
    int from, to;
    double r_ohm, x_ohm, p_kw, q_kvar;
  };
  static const Row rows[] = {
      {1, 2, 0.117, 0.048, 230.0, 142.5},   {2, 3, 0.10725, 0.044, 0.0, 0.0},
      {3, 4, 0.16445, 0.04565, 230.0, 142.5}, {4, 5, 0.1495, 0.0415, 230.0, 142.5},
      {5, 6, 0.1495, 0.0415, 0.0, 0.0},     {6, 7, 0.3144, 0.054, 0.0, 0.0},
      {7, 8, 0.2096, 0.036, 230.0, 142.5},  {8, 9, 0.3144, 0.054, 230.0, 142.5},
      {9, 10, 0.2096, 0.036, 0.0, 0.0},     {10, 11, 0.131, 0.0225, 230.0, 142.5},
      {11, 12, 0.1048, 0.018, 137.0, 84.0}, {3, 13, 0.1572, 0.027, 72.0, 45.0},
      {13, 14, 0.2096, 0.036, 72.0, 45.0},  {14, 15, 0.1048, 0.018, 72.0, 45.0},
      {15, 16, 0.0524, 0.009, 13.5, 7.5},   {6, 17, 0.1794, 0.0498, 230.0, 142.5},
      {17, 18, 0.16445, 0.04565, 230.0, 142.5}, {18, 19, 0.2079, 0.0473, 230.0, 142.5},
      {19, 20, 0.189, 0.043, 230.0, 142.5}, {20, 21, 0.189, 0.043, 230.0, 142.5},
      {21, 22, 0.262, 0.045, 230.0, 142.5}, {22, 23, 0.262, 0.045, 230.0, 142.5},
      {23, 24, 0.3144, 0.054, 230.0, 142.5}, {24, 25, 0.2096, 0.036, 230.0, 142.5},
      {25, 26, 0.131, 0.0225, 230.0, 142.5}, {26, 27, 0.1048, 0.018, 137.0, 85.0},
      {7, 28, 0.1572, 0.027, 75.0, 48.0},   {28, 29, 0.1572, 0.027, 75.0, 48.0},
      {29, 30, 0.1572, 0.027, 75.0, 48.0},  {10, 31, 0.1572, 0.027, 57.0, 34.5},
      {31, 32, 0.2096, 0.036, 57.0, 34.5},  {32, 33, 0.1572, 0.027, 57.0, 34.5},
      {33, 34, 0.1048, 0.018, 57.0, 34.5},
  };
  constexpr double z_base_ohm = 11.0 * 11.0 / 10.0;  // dataset's own voltage base

  FeederModel m;
  m.name = "ieee34-modified";
  m.base_kv = 4.16;
  m.s_base_mva = 10.0;
  m.substation_bus = 1;
  m.source_v_pu = 1.0;

  for (int id = 1; id <= 34; ++id) m.buses.push_back({id, m.base_kv, 0.95, 1.05});
  for (const Row& row : rows) {
    m.lines.push_back({row.from, row.to, row.r_ohm / z_base_ohm, row.x_ohm / z_base_ohm});
    if (row.to == 8) {
      m.loads.push_back({8, 100.0, 600.0, 1.0, 0.0, 0.0});  // the RL study load
    } else if (row.p_kw > 0 || row.q_kvar > 0) {
      m.loads.push_back({row.to, row.p_kw, row.q_kvar, 0.3, 0.4, 0.3});
    }
  }
  m.regulators.push_back({"VR1", 7, 8, 0, -16, 16, 0.00625});
  m.regulators.push_back({"VR2", 19, 20, 0, -16, 16, 0.00625});
  m.inverters.push_back({34, 2000.0, 0.0, VoltVarCurve{}});
  for (const auto& b : m.buses) m.meters.push_back(b.id);

  validate(m);
  return m;
}

// ---------------------------------------------------------------------------
// JSON serialization.

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& j, const char* key,
                                           const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(where + ": missing field '" + key + "'");
  return *it;
}

template <typename T>
T field_as(const nlohmann::json& j, const char* key, const std::string& where) {
  try {
    return require_field(j, key, where).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + ": field '" + key + "': " + e.what());
  }
}

template <typename T>
T field_or(const nlohmann::json& j, const char* key, const std::string& where, T fallback) {
  if (!j.contains(key)) return fallback;
  return field_as<T>(j, key, where);
}

inline VoltVarCurve curve_from_json(const nlohmann::json& j, const std::string& where) {
  VoltVarCurve c;
  c.v1 = field_as<double>(j, "v1", where);
  c.v2 = field_as<double>(j, "v2", where);
  c.v3 = field_as<double>(j, "v3", where);
  c.v4 = field_as<double>(j, "v4", where);
  c.q_max_frac = field_as<double>(j, "q_max_frac", where);
  return c;
}

inline nlohmann::ordered_json curve_to_json(const VoltVarCurve& c) {
  return {{"v1", c.v1}, {"v2", c.v2}, {"v3", c.v3}, {"v4", c.v4},
          {"q_max_frac", c.q_max_frac}};
}

}  // namespace detail

inline FeederModel feeder_from_json(const nlohmann::json& j, const std::string& source) {
  using detail::field_as;
  using detail::field_or;
  FeederModel m;
  m.name = field_or<std::string>(j, "name", source, "");
  m.base_kv = field_as<double>(j, "base_kv", source);
  m.s_base_mva = field_or<double>(j, "s_base_mva", source, 10.0);
  m.substation_bus = field_as<int>(j, "substation_bus", source);
  m.source_v_pu = field_or<double>(j, "source_v_pu", source, 1.0);

  size_t n = 0;
  for (const auto& bj : detail::require_field(j, "buses", source)) {
    std::string where = source + ": buses[" + std::to_string(n++) + "]";
    Bus b;
    b.id = field_as<int>(bj, "id", where);
    b.base_kv = field_or<double>(bj, "base_kv", where, m.base_kv);
    b.v_min = field_or<double>(bj, "v_min", where, 0.95);
    b.v_max = field_or<double>(bj, "v_max", where, 1.05);
    m.buses.push_back(b);
  }
  n = 0;
  for (const auto& lj : detail::require_field(j, "lines", source)) {
    std::string where = source + ": lines[" + std::to_string(n++) + "]";
    Line l;
    l.from_bus = field_as<int>(lj, "from", where);
    l.to_bus = field_as<int>(lj, "to", where);
    l.r = field_as<double>(lj, "r", where);
    l.x = field_as<double>(lj, "x", where);
    m.lines.push_back(l);
  }
  n = 0;
  if (j.contains("loads")) {
    for (const auto& dj : j["loads"]) {
      std::string where = source + ": loads[" + std::to_string(n++) + "]";
      ZipLoad d;
      d.bus = field_as<int>(dj, "bus", where);
      d.p0_kw = field_as<double>(dj, "p0_kw", where);
      d.q0_kvar = field_as<double>(dj, "q0_kvar", where);
      if (dj.contains("zip")) {
        auto zip = field_as<std::vector<double>>(dj, "zip", where);
        if (zip.size() != 3) throw ParseError(where + ": zip must have 3 entries");
        d.z_frac = zip[0];
        d.i_frac = zip[1];
        d.p_frac = zip[2];
      }
      m.loads.push_back(d);
    }
  }
  n = 0;
  if (j.contains("regulators")) {
    for (const auto& rj : j["regulators"]) {
      std::string where = source + ": regulators[" + std::to_string(n++) + "]";
      VoltageRegulator vr;
      vr.id = field_as<std::string>(rj, "id", where);
      vr.from_bus = field_as<int>(rj, "from", where);
      vr.to_bus = field_as<int>(rj, "to", where);
      vr.tap = field_or<int>(rj, "tap", where, 0);
      vr.tap_min = field_as<int>(rj, "tap_min", where);
      vr.tap_max = field_as<int>(rj, "tap_max", where);
      vr.step_ratio = field_as<double>(rj, "step_ratio", where);
      m.regulators.push_back(vr);
    }
  }
  n = 0;
  if (j.contains("capacitors")) {
    for (const auto& cj : j["capacitors"]) {
      std::string where = source + ": capacitors[" + std::to_string(n++) + "]";
      CapacitorBank cb;
      cb.bus = field_as<int>(cj, "bus", where);
      cb.step = field_or<int>(cj, "step", where, 0);
      cb.n_steps = field_as<int>(cj, "n_steps", where);
      cb.step_kvar = field_as<double>(cj, "step_kvar", where);
      m.capacitors.push_back(cb);
    }
  }
  n = 0;
  if (j.contains("inverters")) {
    for (const auto& ij : j["inverters"]) {
      std::string where = source + ": inverters[" + std::to_string(n++) + "]";
      PvSmartInverter inv;
      inv.bus = field_as<int>(ij, "bus", where);
      inv.s_rating_kva = field_as<double>(ij, "s_rating_kva", where);
      inv.p_avail_kw = field_or<double>(ij, "p_avail_kw", where, 0.0);
      if (ij.contains("curve"))
        inv.curve = detail::curve_from_json(ij["curve"], where + ": curve");
      m.inverters.push_back(inv);
    }
  }
  if (j.contains("meters")) {
    m.meters = field_as<std::vector<int>>(j, "meters", source);
  } else {
    for (const auto& b : m.buses) m.meters.push_back(b.id);
  }

  validate(m);
  return m;
}

inline nlohmann::ordered_json feeder_to_json(const FeederModel& m) {
  nlohmann::ordered_json j;
  j["name"] = m.name;
  j["base_kv"] = m.base_kv;
  j["s_base_mva"] = m.s_base_mva;
  j["substation_bus"] = m.substation_bus;
  j["source_v_pu"] = m.source_v_pu;
  j["buses"] = nlohmann::ordered_json::array();
  for (const auto& b : m.buses)
    j["buses"].push_back({{"id", b.id}, {"base_kv", b.base_kv},
                          {"v_min", b.v_min}, {"v_max", b.v_max}});
  j["lines"] = nlohmann::ordered_json::array();
  for (const auto& l : m.lines)
    j["lines"].push_back({{"from", l.from_bus}, {"to", l.to_bus}, {"r", l.r}, {"x", l.x}});
  j["loads"] = nlohmann::ordered_json::array();
  for (const auto& d : m.loads)
    j["loads"].push_back({{"bus", d.bus}, {"p0_kw", d.p0_kw}, {"q0_kvar", d.q0_kvar},
                          {"zip", {d.z_frac, d.i_frac, d.p_frac}}});
  j["regulators"] = nlohmann::ordered_json::array();
  for (const auto& vr : m.regulators)
    j["regulators"].push_back({{"id", vr.id}, {"from", vr.from_bus}, {"to", vr.to_bus},
                               {"tap", vr.tap}, {"tap_min", vr.tap_min},
                               {"tap_max", vr.tap_max}, {"step_ratio", vr.step_ratio}});
  j["capacitors"] = nlohmann::ordered_json::array();
  for (const auto& cb : m.capacitors)
    j["capacitors"].push_back({{"bus", cb.bus}, {"step", cb.step}, {"n_steps", cb.n_steps},
                               {"step_kvar", cb.step_kvar}});
  j["inverters"] = nlohmann::ordered_json::array();
  for (const auto& inv : m.inverters)
    j["inverters"].push_back({{"bus", inv.bus}, {"s_rating_kva", inv.s_rating_kva},
                              {"p_avail_kw", inv.p_avail_kw},
                              {"curve", detail::curve_to_json(inv.curve)}});
  j["meters"] = m.meters;
  return j;
}

inline FeederModel load_feeder(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw ParseError("feeder file " + path + ": cannot open");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("feeder file " + path + ": " + e.what());
  }
  return feeder_from_json(j, "feeder file " + path);
}

inline void save_feeder(const FeederModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out.good()) throw ParseError("feeder file " + path + ": cannot open for writing");
  out << feeder_to_json(m).dump(1) << "\n";
}

}  // namespace vvsim
