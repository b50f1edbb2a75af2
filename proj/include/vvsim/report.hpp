#pragma once

// Impact accounting for a completed run. The co-simulation records raw
// series (per-bus voltage samples, substation power, device movements,
// message counters); everything reported is derived from those series here,
// so violation counts and durations can always be recomputed from the same
// trace a reader sees in the CSV exports.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vvsim/util.hpp"
#include "vvsim/vvo.hpp"

namespace vvsim {

struct SegmentSpan {
  std::string label;
  double t0_s = 0.0;
  double t1_s = 0.0;
};

// A plant-side applied change (tap moved, capacitor switched, curve field
// rewritten). `commanded` is the raw value in the operate request; the
// applied values reflect physical clamping.
struct DeviceEvent {
  double t_s = 0.0;
  std::string device;
  double commanded = 0.0;
  double applied_from = 0.0;
  double applied_to = 0.0;
};

struct ViolationEpisode {
  int bus = 0;
  bool high = false;  // above v_max rather than below v_min
  double t_start_s = 0.0;
  double t_end_s = 0.0;
  double seconds = 0.0;
  double extreme_v = 0.0;
};

struct RunSeries {
  double metering_period_s = 60.0;
  double control_period_s = 900.0;
  double duration_s = 0.0;
  std::vector<double> t_s;
  std::vector<int> metered_buses;
  std::map<int, std::vector<double>> v;                    // per metered bus
  std::map<int, std::pair<double, double>> limits;         // bus -> (v_min, v_max)
  std::vector<double> p_sub_kw;
  std::vector<double> loss_kw;
  std::map<int, std::vector<double>> q_pvsi_kvar;          // per inverter bus
  std::vector<std::string> segment;                        // label per sample
  std::vector<SegmentSpan> segments;
  std::vector<DeviceEvent> tap_events;
  std::vector<DeviceEvent> cap_events;
  std::vector<DeviceEvent> curve_events;
};

struct RunCounters {
  uint64_t control_cycles = 0;
  uint64_t stale_cycles = 0;
  uint64_t diverged_solves = 0;
  double max_balance_residual_pu = 0.0;
  uint64_t requests_sent = 0;
  uint64_t responses_received = 0;
  uint64_t timeouts = 0;
  uint64_t decode_failures = 0;
  uint64_t outstation_rejects = 0;
  uint64_t pending_at_end = 0;
  uint64_t datagrams_sent = 0;
  uint64_t frames_delivered = 0;
  uint64_t frames_dropped = 0;
  uint64_t frames_mutated = 0;
  uint64_t attack_warnings = 0;
  uint64_t perturbed_values = 0;
  double sum_abs_value_delta = 0.0;
};

struct RunMeta {
  std::string name;
  std::string feeder;
  bool cvr_enabled = false;
  PriceBook prices;
};

struct ScenarioReport {
  std::string name;
  std::string feeder;
  bool cvr_enabled = false;
  double duration_s = 0.0;
  double control_period_s = 0.0;
  double metering_period_s = 0.0;

  double energy_purchased_kwh = 0.0;
  double energy_cost_usd = 0.0;
  double loss_kwh = 0.0;
  double loss_cost_usd = 0.0;
  double vr_cost_usd = 0.0;
  double cap_cost_usd = 0.0;
  double pvsi_kvarh = 0.0;
  double pvsi_cost_usd = 0.0;
  double total_cost_usd = 0.0;

  // device -> segment label -> applied-change count; "total" is always set
  std::map<std::string, std::map<std::string, uint64_t>> vr_updates;
  uint64_t cap_updates = 0;
  uint64_t curve_updates = 0;

  uint64_t violation_count = 0;
  double violation_seconds = 0.0;
  std::vector<ViolationEpisode> episodes;

  double mean_voltage_pu = 0.0;
  double min_voltage_pu = 0.0;
  double max_voltage_pu = 0.0;

  RunCounters counters;

  std::string baseline_name;
  std::optional<double> pct_energy_saved;
  std::optional<double> pct_voltage_reduction;
  std::optional<double> cvr_factor;

  std::string voltages_csv;
  std::string events_csv;
  std::string capture_log;
};

// Contiguous excursion episodes per bus, recomputed from the stored trace.
inline std::vector<ViolationEpisode> find_violations(const RunSeries& s) {
  std::vector<ViolationEpisode> out;
  for (int bus : s.metered_buses) {
    auto vit = s.v.find(bus);
    auto lit = s.limits.find(bus);
    if (vit == s.v.end() || lit == s.limits.end()) continue;
    const auto& trace = vit->second;
    const auto [lo, hi] = lit->second;
    std::optional<ViolationEpisode> open;
    for (size_t k = 0; k < trace.size(); ++k) {
      const double v = trace[k];
      const bool low = v < lo, high = v > hi;
      if (low || high) {
        if (open && open->high != high) {
          out.push_back(*open);
          open.reset();
        }
        if (!open) {
          open = ViolationEpisode{};
          open->bus = bus;
          open->high = high;
          open->t_start_s = s.t_s[k];
          open->extreme_v = v;
        }
        open->t_end_s = s.t_s[k] + s.metering_period_s;
        open->seconds += s.metering_period_s;
        open->extreme_v = high ? std::max(open->extreme_v, v)
                               : std::min(open->extreme_v, v);
      } else if (open) {
        out.push_back(*open);
        open.reset();
      }
    }
    if (open) out.push_back(*open);
  }
  return out;
}

inline ScenarioReport summarize(const RunSeries& s, const RunCounters& c,
                                const RunMeta& meta) {
  ScenarioReport r;
  r.name = meta.name;
  r.feeder = meta.feeder;
  r.cvr_enabled = meta.cvr_enabled;
  r.duration_s = s.duration_s;
  r.control_period_s = s.control_period_s;
  r.metering_period_s = s.metering_period_s;
  r.counters = c;

  const double dt_h = s.metering_period_s / 3600.0;
  for (double p : s.p_sub_kw) r.energy_purchased_kwh += p * dt_h;
  for (double l : s.loss_kw) r.loss_kwh += l * dt_h;
  for (const auto& [bus, q] : s.q_pvsi_kvar)
    for (double qk : q) r.pvsi_kvarh += std::abs(qk) * dt_h;
  r.energy_cost_usd = r.energy_purchased_kwh * meta.prices.c_energy;
  r.loss_cost_usd = r.loss_kwh * meta.prices.c_energy;
  r.pvsi_cost_usd = r.pvsi_kvarh * meta.prices.c_grid;

  auto segment_of = [&](double t) -> std::string {
    for (const auto& seg : s.segments)
      if (t >= seg.t0_s && t < seg.t1_s) return seg.label;
    return "";
  };
  for (const auto& ev : s.tap_events) {
    auto& per = r.vr_updates[ev.device];
    per["total"]++;
    std::string seg = segment_of(ev.t_s);
    if (!seg.empty()) per[seg]++;
  }
  r.vr_cost_usd = static_cast<double>(s.tap_events.size()) * meta.prices.c_vr_step;
  r.cap_updates = s.cap_events.size();
  r.cap_cost_usd = static_cast<double>(s.cap_events.size()) * meta.prices.c_cb_step;
  r.curve_updates = s.curve_events.size();
  r.total_cost_usd =
      r.energy_cost_usd + r.vr_cost_usd + r.cap_cost_usd + r.pvsi_cost_usd;

  r.episodes = find_violations(s);
  r.violation_count = r.episodes.size();
  for (const auto& e : r.episodes) r.violation_seconds += e.seconds;

  double sum = 0.0, lo = 0.0, hi = 0.0;
  size_t n = 0;
  bool first = true;
  for (const auto& [bus, trace] : s.v)
    for (double v : trace) {
      sum += v;
      if (first) {
        lo = hi = v;
        first = false;
      } else {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      ++n;
    }
  r.mean_voltage_pu = n ? sum / static_cast<double>(n) : 0.0;
  r.min_voltage_pu = lo;
  r.max_voltage_pu = hi;
  return r;
}

// Energy-reduction metrics against a named baseline run. The CVR factor is
// the percentage of energy saved per percent of voltage reduction; it is
// absent when the voltage did not actually drop.
inline void compare_to_baseline(ScenarioReport& r, const ScenarioReport& base) {
  if (std::abs(r.duration_s - base.duration_s) > 1e-9)
    throw ValidationError("baseline run covers a different duration");
  r.baseline_name = base.name;
  r.pct_energy_saved.reset();
  r.pct_voltage_reduction.reset();
  r.cvr_factor.reset();
  if (base.energy_purchased_kwh > 0.0)
    r.pct_energy_saved = 100.0 *
                         (base.energy_purchased_kwh - r.energy_purchased_kwh) /
                         base.energy_purchased_kwh;
  if (base.mean_voltage_pu > 0.0)
    r.pct_voltage_reduction =
        100.0 * (base.mean_voltage_pu - r.mean_voltage_pu) /
        base.mean_voltage_pu;
  if (r.pct_energy_saved && r.pct_voltage_reduction &&
      *r.pct_voltage_reduction > 1e-12)
    r.cvr_factor = *r.pct_energy_saved / *r.pct_voltage_reduction;
}

struct AttackScore {
  double damage_usd = 0.0;  // operating-cost impact versus the baseline
  double similarity = 0.0;  // mean absolute perturbation of tampered values
  double score = 0.0;       // damage + lambda * similarity
};

inline AttackScore attack_cost(const ScenarioReport& attacked,
                               const ScenarioReport& baseline, double lambda) {
  AttackScore s;
  s.damage_usd = attacked.total_cost_usd - baseline.total_cost_usd;
  s.similarity = attacked.counters.perturbed_values
                     ? attacked.counters.sum_abs_value_delta /
                           static_cast<double>(attacked.counters.perturbed_values)
                     : 0.0;
  s.score = s.damage_usd + lambda * s.similarity;
  return s;
}

inline nlohmann::ordered_json report_to_json(const ScenarioReport& r) {
  nlohmann::ordered_json j;
  j["name"] = r.name;
  j["feeder"] = r.feeder;
  j["cvr_enabled"] = r.cvr_enabled;
  j["duration_s"] = r.duration_s;
  j["control_period_s"] = r.control_period_s;
  j["metering_period_s"] = r.metering_period_s;
  j["energy_purchased_kwh"] = r.energy_purchased_kwh;
  j["energy_cost_usd"] = r.energy_cost_usd;
  j["loss_kwh"] = r.loss_kwh;
  j["loss_cost_usd"] = r.loss_cost_usd;
  j["vr_cost_usd"] = r.vr_cost_usd;
  j["cap_cost_usd"] = r.cap_cost_usd;
  j["pvsi_kvarh"] = r.pvsi_kvarh;
  j["pvsi_cost_usd"] = r.pvsi_cost_usd;
  j["total_cost_usd"] = r.total_cost_usd;
  j["vr_updates"] = nlohmann::ordered_json::object();
  for (const auto& [dev, per] : r.vr_updates) {
    nlohmann::ordered_json pj;
    for (const auto& [seg, count] : per) pj[seg] = count;
    j["vr_updates"][dev] = pj;
  }
  j["cap_updates"] = r.cap_updates;
  j["curve_updates"] = r.curve_updates;
  j["violation_count"] = r.violation_count;
  j["violation_seconds"] = r.violation_seconds;
  j["episodes"] = nlohmann::ordered_json::array();
  for (const auto& e : r.episodes) {
    nlohmann::ordered_json ej;
    ej["bus"] = e.bus;
    ej["high"] = e.high;
    ej["t_start_s"] = e.t_start_s;
    ej["t_end_s"] = e.t_end_s;
    ej["seconds"] = e.seconds;
    ej["extreme_v"] = e.extreme_v;
    j["episodes"].push_back(ej);
  }
  j["mean_voltage_pu"] = r.mean_voltage_pu;
  j["min_voltage_pu"] = r.min_voltage_pu;
  j["max_voltage_pu"] = r.max_voltage_pu;
  nlohmann::ordered_json c;
  c["control_cycles"] = r.counters.control_cycles;
  c["stale_cycles"] = r.counters.stale_cycles;
  c["diverged_solves"] = r.counters.diverged_solves;
  c["max_balance_residual_pu"] = r.counters.max_balance_residual_pu;
  c["requests_sent"] = r.counters.requests_sent;
  c["responses_received"] = r.counters.responses_received;
  c["timeouts"] = r.counters.timeouts;
  c["decode_failures"] = r.counters.decode_failures;
  c["outstation_rejects"] = r.counters.outstation_rejects;
  c["pending_at_end"] = r.counters.pending_at_end;
  c["datagrams_sent"] = r.counters.datagrams_sent;
  c["frames_delivered"] = r.counters.frames_delivered;
  c["frames_dropped"] = r.counters.frames_dropped;
  c["frames_mutated"] = r.counters.frames_mutated;
  c["attack_warnings"] = r.counters.attack_warnings;
  c["perturbed_values"] = r.counters.perturbed_values;
  c["sum_abs_value_delta"] = r.counters.sum_abs_value_delta;
  j["counters"] = c;
  if (!r.baseline_name.empty()) {
    nlohmann::ordered_json b;
    b["name"] = r.baseline_name;
    if (r.pct_energy_saved) b["pct_energy_saved"] = *r.pct_energy_saved;
    if (r.pct_voltage_reduction)
      b["pct_voltage_reduction"] = *r.pct_voltage_reduction;
    if (r.cvr_factor) b["cvr_factor"] = *r.cvr_factor;
    j["baseline"] = b;
  }
  nlohmann::ordered_json files;
  files["voltages_csv"] = r.voltages_csv;
  files["events_csv"] = r.events_csv;
  files["capture_log"] = r.capture_log;
  j["files"] = files;
  return j;
}

inline ScenarioReport report_from_json(const nlohmann::json& j) {
  ScenarioReport r;
  r.name = j.value("name", std::string());
  r.feeder = j.value("feeder", std::string());
  r.cvr_enabled = j.value("cvr_enabled", false);
  r.duration_s = j.value("duration_s", 0.0);
  r.control_period_s = j.value("control_period_s", 0.0);
  r.metering_period_s = j.value("metering_period_s", 0.0);
  r.energy_purchased_kwh = j.value("energy_purchased_kwh", 0.0);
  r.energy_cost_usd = j.value("energy_cost_usd", 0.0);
  r.loss_kwh = j.value("loss_kwh", 0.0);
  r.loss_cost_usd = j.value("loss_cost_usd", 0.0);
  r.vr_cost_usd = j.value("vr_cost_usd", 0.0);
  r.cap_cost_usd = j.value("cap_cost_usd", 0.0);
  r.pvsi_kvarh = j.value("pvsi_kvarh", 0.0);
  r.pvsi_cost_usd = j.value("pvsi_cost_usd", 0.0);
  r.total_cost_usd = j.value("total_cost_usd", 0.0);
  if (j.contains("vr_updates"))
    for (auto it = j["vr_updates"].begin(); it != j["vr_updates"].end(); ++it)
      for (auto seg = it.value().begin(); seg != it.value().end(); ++seg)
        r.vr_updates[it.key()][seg.key()] = seg.value().get<uint64_t>();
  r.cap_updates = j.value("cap_updates", uint64_t{0});
  r.curve_updates = j.value("curve_updates", uint64_t{0});
  r.violation_count = j.value("violation_count", uint64_t{0});
  r.violation_seconds = j.value("violation_seconds", 0.0);
  if (j.contains("episodes"))
    for (const auto& ej : j["episodes"]) {
      ViolationEpisode e;
      e.bus = ej.value("bus", 0);
      e.high = ej.value("high", false);
      e.t_start_s = ej.value("t_start_s", 0.0);
      e.t_end_s = ej.value("t_end_s", 0.0);
      e.seconds = ej.value("seconds", 0.0);
      e.extreme_v = ej.value("extreme_v", 0.0);
      r.episodes.push_back(e);
    }
  r.mean_voltage_pu = j.value("mean_voltage_pu", 0.0);
  r.min_voltage_pu = j.value("min_voltage_pu", 0.0);
  r.max_voltage_pu = j.value("max_voltage_pu", 0.0);
  if (j.contains("counters")) {
    const auto& c = j["counters"];
    r.counters.control_cycles = c.value("control_cycles", uint64_t{0});
    r.counters.stale_cycles = c.value("stale_cycles", uint64_t{0});
    r.counters.diverged_solves = c.value("diverged_solves", uint64_t{0});
    r.counters.max_balance_residual_pu = c.value("max_balance_residual_pu", 0.0);
    r.counters.requests_sent = c.value("requests_sent", uint64_t{0});
    r.counters.responses_received = c.value("responses_received", uint64_t{0});
    r.counters.timeouts = c.value("timeouts", uint64_t{0});
    r.counters.decode_failures = c.value("decode_failures", uint64_t{0});
    r.counters.outstation_rejects = c.value("outstation_rejects", uint64_t{0});
    r.counters.pending_at_end = c.value("pending_at_end", uint64_t{0});
    r.counters.datagrams_sent = c.value("datagrams_sent", uint64_t{0});
    r.counters.frames_delivered = c.value("frames_delivered", uint64_t{0});
    r.counters.frames_dropped = c.value("frames_dropped", uint64_t{0});
    r.counters.frames_mutated = c.value("frames_mutated", uint64_t{0});
    r.counters.attack_warnings = c.value("attack_warnings", uint64_t{0});
    r.counters.perturbed_values = c.value("perturbed_values", uint64_t{0});
    r.counters.sum_abs_value_delta = c.value("sum_abs_value_delta", 0.0);
  }
  if (j.contains("baseline")) {
    const auto& b = j["baseline"];
    r.baseline_name = b.value("name", std::string());
    if (b.contains("pct_energy_saved"))
      r.pct_energy_saved = b["pct_energy_saved"].get<double>();
    if (b.contains("pct_voltage_reduction"))
      r.pct_voltage_reduction = b["pct_voltage_reduction"].get<double>();
    if (b.contains("cvr_factor")) r.cvr_factor = b["cvr_factor"].get<double>();
  }
  if (j.contains("files")) {
    r.voltages_csv = j["files"].value("voltages_csv", std::string());
    r.events_csv = j["files"].value("events_csv", std::string());
    r.capture_log = j["files"].value("capture_log", std::string());
  }
  return r;
}

// Flat key,value rows in a fixed order.
inline std::string format_report_csv(const ScenarioReport& r) {
  std::ostringstream out;
  out << "metric,value\n";
  out << "name," << r.name << "\n";
  out << "feeder," << r.feeder << "\n";
  out << "cvr_enabled," << (r.cvr_enabled ? 1 : 0) << "\n";
  out << "duration_s," << fmt_g(r.duration_s) << "\n";
  out << "energy_purchased_kwh," << fmt_f(r.energy_purchased_kwh, 3) << "\n";
  out << "energy_cost_usd," << fmt_f(r.energy_cost_usd, 2) << "\n";
  out << "loss_kwh," << fmt_f(r.loss_kwh, 3) << "\n";
  out << "loss_cost_usd," << fmt_f(r.loss_cost_usd, 2) << "\n";
  out << "vr_cost_usd," << fmt_f(r.vr_cost_usd, 2) << "\n";
  out << "cap_cost_usd," << fmt_f(r.cap_cost_usd, 2) << "\n";
  out << "pvsi_kvarh," << fmt_f(r.pvsi_kvarh, 3) << "\n";
  out << "pvsi_cost_usd," << fmt_f(r.pvsi_cost_usd, 2) << "\n";
  out << "total_cost_usd," << fmt_f(r.total_cost_usd, 2) << "\n";
  for (const auto& [dev, per] : r.vr_updates)
    for (const auto& [seg, count] : per)
      out << "updates." << dev << "." << seg << "," << count << "\n";
  out << "cap_updates," << r.cap_updates << "\n";
  out << "curve_updates," << r.curve_updates << "\n";
  out << "violation_count," << r.violation_count << "\n";
  out << "violation_seconds," << fmt_f(r.violation_seconds, 1) << "\n";
  out << "mean_voltage_pu," << fmt_f(r.mean_voltage_pu, 6) << "\n";
  out << "min_voltage_pu," << fmt_f(r.min_voltage_pu, 6) << "\n";
  out << "max_voltage_pu," << fmt_f(r.max_voltage_pu, 6) << "\n";
  out << "control_cycles," << r.counters.control_cycles << "\n";
  out << "stale_cycles," << r.counters.stale_cycles << "\n";
  out << "requests_sent," << r.counters.requests_sent << "\n";
  out << "responses_received," << r.counters.responses_received << "\n";
  out << "timeouts," << r.counters.timeouts << "\n";
  out << "frames_dropped," << r.counters.frames_dropped << "\n";
  out << "frames_mutated," << r.counters.frames_mutated << "\n";
  if (!r.baseline_name.empty()) {
    out << "baseline," << r.baseline_name << "\n";
    if (r.pct_energy_saved)
      out << "pct_energy_saved," << fmt_f(*r.pct_energy_saved, 4) << "\n";
    if (r.pct_voltage_reduction)
      out << "pct_voltage_reduction," << fmt_f(*r.pct_voltage_reduction, 4)
          << "\n";
    if (r.cvr_factor) out << "cvr_factor," << fmt_f(*r.cvr_factor, 4) << "\n";
  }
  return out.str();
}

inline std::string format_report_text(const ScenarioReport& r) {
  std::ostringstream out;
  out << "Scenario " << r.name << "  (feeder " << r.feeder << ", CVR "
      << (r.cvr_enabled ? "on" : "off") << ")\n";
  out << "  duration " << fmt_f(r.duration_s, 0) << " s, control every "
      << fmt_f(r.control_period_s, 0) << " s, metering every "
      << fmt_f(r.metering_period_s, 0) << " s\n\n";
  out << "  energy purchased  " << std::setw(14) << fmt_f(r.energy_purchased_kwh, 3)
      << " kWh   $" << fmt_f(r.energy_cost_usd, 2) << "\n";
  out << "  feeder losses     " << std::setw(14) << fmt_f(r.loss_kwh, 3)
      << " kWh   $" << fmt_f(r.loss_cost_usd, 2) << "\n";
  out << "  inverter support  " << std::setw(14) << fmt_f(r.pvsi_kvarh, 3)
      << " kVArh $" << fmt_f(r.pvsi_cost_usd, 2) << "\n";
  out << "  regulator wear    " << std::setw(14) << " "
      << "       $" << fmt_f(r.vr_cost_usd, 2) << "\n";
  out << "  total operating cost          $" << fmt_f(r.total_cost_usd, 2)
      << "\n\n";

  std::vector<std::string> segs;
  for (const auto& [dev, per] : r.vr_updates)
    for (const auto& [seg, count] : per)
      if (seg != "total" &&
          std::find(segs.begin(), segs.end(), seg) == segs.end())
        segs.push_back(seg);
  std::sort(segs.begin(), segs.end());
  out << "  setpoint updates\n    device";
  for (const auto& s : segs) out << std::setw(8) << s;
  out << std::setw(8) << "total" << "\n";
  for (const auto& [dev, per] : r.vr_updates) {
    out << "    " << std::left << std::setw(6) << dev << std::right;
    for (const auto& s : segs) {
      auto it = per.find(s);
      out << std::setw(8) << (it == per.end() ? 0 : it->second);
    }
    auto tot = per.find("total");
    out << std::setw(8) << (tot == per.end() ? 0 : tot->second) << "\n";
  }
  out << "\n  voltage  mean " << fmt_f(r.mean_voltage_pu, 4) << "  min "
      << fmt_f(r.min_voltage_pu, 4) << "  max " << fmt_f(r.max_voltage_pu, 4)
      << " pu\n";
  out << "  violations  " << r.violation_count << " episode(s), "
      << fmt_f(r.violation_seconds, 0) << " s total\n";
  out << "  messages  " << r.counters.requests_sent << " sent, "
      << r.counters.responses_received << " answered, "
      << r.counters.timeouts << " timed out, "
      << r.counters.frames_dropped << " dropped, "
      << r.counters.frames_mutated << " tampered\n";
  if (r.counters.stale_cycles)
    out << "  control held STALE measurements for " << r.counters.stale_cycles
        << " cycle(s)\n";
  if (!r.baseline_name.empty()) {
    out << "\n  versus baseline " << r.baseline_name << ":\n";
    if (r.pct_energy_saved)
      out << "    energy saved        " << fmt_f(*r.pct_energy_saved, 4)
          << " %\n";
    if (r.pct_voltage_reduction)
      out << "    voltage reduction   " << fmt_f(*r.pct_voltage_reduction, 4)
          << " %\n";
    if (r.cvr_factor)
      out << "    CVR factor          " << fmt_f(*r.cvr_factor, 4) << "\n";
    else
      out << "    CVR factor          n/a\n";
  }
  return out.str();
}

inline std::string format_voltages_csv(const RunSeries& s) {
  std::ostringstream out;
  out << "t_s";
  for (int bus : s.metered_buses) out << ",v" << bus;
  out << ",p_sub_kw,loss_kw,segment\n";
  for (size_t k = 0; k < s.t_s.size(); ++k) {
    out << fmt_g(s.t_s[k]);
    for (int bus : s.metered_buses) {
      auto it = s.v.find(bus);
      out << "," << fmt_f(it == s.v.end() ? 0.0 : it->second[k], 6);
    }
    out << "," << fmt_f(s.p_sub_kw[k], 3) << "," << fmt_f(s.loss_kw[k], 3)
        << "," << (k < s.segment.size() ? s.segment[k] : "") << "\n";
  }
  return out.str();
}

inline std::string format_events_csv(const RunSeries& s) {
  struct Row {
    double t;
    std::string kind;
    const DeviceEvent* ev;
  };
  std::vector<Row> rows;
  for (const auto& e : s.tap_events) rows.push_back({e.t_s, "tap", &e});
  for (const auto& e : s.cap_events) rows.push_back({e.t_s, "cap", &e});
  for (const auto& e : s.curve_events) rows.push_back({e.t_s, "curve", &e});
  std::stable_sort(rows.begin(), rows.end(),
                   [](const Row& a, const Row& b) { return a.t < b.t; });
  std::ostringstream out;
  out << "t_s,kind,device,commanded,applied_from,applied_to\n";
  for (const auto& row : rows)
    out << fmt_g(row.t) << "," << row.kind << "," << row.ev->device << ","
        << fmt_g(row.ev->commanded) << "," << fmt_g(row.ev->applied_from)
        << "," << fmt_g(row.ev->applied_to) << "\n";
  return out.str();
}

inline void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path + ": cannot open for writing");
  out << body;
}

}  // namespace vvsim
