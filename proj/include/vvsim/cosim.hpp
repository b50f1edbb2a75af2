#pragma once

// Discrete-event co-simulation binding the feeder plant, the DNP3 field
// devices, the adversarial channel and the control master to one clock.
//
// Time is integer microseconds. Events due at the same instant execute in a
// fixed priority order (attack window edges, profile steps, frame
// deliveries, timeouts, meter samples, control cycles) and, within a
// priority, in insertion order, so runs are bit-reproducible.
//
// Per metering period the plant solves a power flow at the current operating
// point, refreshes every outstation's analog inputs, and the master polls
// each outstation through the channel. Per control period the master runs
// the Volt/VAR solver on its telemetry mirror and re-sends setpoints to all
// devices, whether or not they changed; devices apply raw received values
// with physical clamping only. Inverters re-evaluate their (possibly
// tampered) droop curve at every metering period against the last solved
// voltage.

#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vvsim/attack.hpp"
#include "vvsim/dnp3.hpp"
#include "vvsim/feeder.hpp"
#include "vvsim/powerflow.hpp"
#include "vvsim/profiles.hpp"
#include "vvsim/report.hpp"
#include "vvsim/util.hpp"
#include "vvsim/vvo.hpp"

namespace vvsim {

constexpr uint16_t kMasterAddress = 1;
constexpr uint16_t kOutstationBase = 100;  // outstation address = base + bus id

struct CvrConfig {
  bool enabled = false;
  double target_v = 0.975;
  double weight = 200.0;
};

struct ControllerConfig {
  int search_radius = 4;
  size_t smoothing_samples = 4;
  double response_timeout_s = 5.0;
  double v_margin = 0.0;
  double beta_min = 0.0;
  double beta_max = 0.6;
};

struct LoadStepChange {
  double time_s = 0.0;
  int bus = 0;
  double multiplier = 1.0;
};

struct ScenarioConfig {
  std::string name = "scenario";
  std::string feeder_path;
  std::string load_profile_path;
  std::string pv_profile_path;  // optional
  PriceBook prices;
  CvrConfig cvr;
  double control_period_s = 900.0;
  double metering_period_s = 60.0;
  double duration_s = 86400.0;
  double channel_latency_s = 0.05;
  ControllerConfig controller;
  uint64_t seed = 1;
  std::vector<LoadStepChange> load_steps;
  std::vector<attack::ModpAttack> modp;
  std::vector<attack::DosAttack> dos;
};

inline void validate(const ScenarioConfig& cfg) {
  if (cfg.metering_period_s <= 0 || cfg.control_period_s <= 0)
    throw ValidationError("scenario: periods must be positive");
  const double ratio = cfg.control_period_s / cfg.metering_period_s;
  if (std::abs(ratio - std::round(ratio)) > 1e-9)
    throw ValidationError(
        "scenario: control period must be a multiple of the metering period");
  if (cfg.duration_s < cfg.control_period_s)
    throw ValidationError(
        "scenario: duration must cover at least one control period");
  if (cfg.channel_latency_s < 0)
    throw ValidationError("scenario: channel latency must be >= 0");
  if (cfg.controller.smoothing_samples < 1)
    throw ValidationError("scenario: smoothing_samples must be >= 1");
  if (cfg.feeder_path.empty())
    throw ValidationError("scenario: missing feeder path");
  if (cfg.load_profile_path.empty())
    throw ValidationError("scenario: missing load profile path");
}

inline ScenarioConfig scenario_from_json(const nlohmann::json& j,
                                         const std::string& base_dir,
                                         const std::string& where) {
  if (!j.is_object()) throw ParseError(where + ": expected an object");
  auto resolve = [&](const std::string& p) -> std::string {
    if (p.empty()) return p;
    std::filesystem::path fp(p);
    if (fp.is_absolute() || base_dir.empty()) return p;
    return (std::filesystem::path(base_dir) / fp).lexically_normal().string();
  };
  ScenarioConfig cfg;
  cfg.name = j.value("name", std::string("scenario"));
  if (!j.contains("feeder")) throw ParseError(where + ": missing field 'feeder'");
  cfg.feeder_path = resolve(j.at("feeder").get<std::string>());
  if (!j.contains("load_profile"))
    throw ParseError(where + ": missing field 'load_profile'");
  cfg.load_profile_path = resolve(j.at("load_profile").get<std::string>());
  cfg.pv_profile_path = resolve(j.value("pv_profile", std::string()));
  if (j.contains("prices")) {
    const auto& p = j.at("prices");
    cfg.prices.c_energy = p.value("c_energy", cfg.prices.c_energy);
    cfg.prices.c_vr_step = p.value("c_vr_step", cfg.prices.c_vr_step);
    cfg.prices.c_cb_step = p.value("c_cb_step", cfg.prices.c_cb_step);
    cfg.prices.c_grid = p.value("c_grid", cfg.prices.c_grid);
  }
  if (j.contains("cvr")) {
    const auto& c = j.at("cvr");
    cfg.cvr.enabled = c.value("enabled", false);
    cfg.cvr.target_v = c.value("target_v", cfg.cvr.target_v);
    cfg.cvr.weight = c.value("weight", cfg.cvr.weight);
  }
  cfg.control_period_s = j.value("control_period_s", cfg.control_period_s);
  cfg.metering_period_s = j.value("metering_period_s", cfg.metering_period_s);
  cfg.duration_s = j.value("duration_s", cfg.duration_s);
  if (j.contains("channel")) {
    const auto& c = j.at("channel");
    cfg.channel_latency_s = c.value("latency_s", cfg.channel_latency_s);
    cfg.controller.response_timeout_s =
        c.value("response_timeout_s", cfg.controller.response_timeout_s);
  }
  if (j.contains("controller")) {
    const auto& c = j.at("controller");
    cfg.controller.search_radius =
        c.value("search_radius", cfg.controller.search_radius);
    cfg.controller.smoothing_samples =
        c.value("smoothing_samples", cfg.controller.smoothing_samples);
    cfg.controller.v_margin = c.value("v_margin", cfg.controller.v_margin);
    cfg.controller.beta_min = c.value("beta_min", cfg.controller.beta_min);
    cfg.controller.beta_max = c.value("beta_max", cfg.controller.beta_max);
  }
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("load_steps")) {
    size_t k = 0;
    for (const auto& sj : j.at("load_steps")) {
      LoadStepChange s;
      s.time_s = sj.value("time_s", 0.0);
      if (!sj.contains("bus"))
        throw ParseError(where + ": load_steps[" + std::to_string(k) +
                         "]: missing field 'bus'");
      s.bus = sj.at("bus").get<int>();
      s.multiplier = sj.value("multiplier", 1.0);
      cfg.load_steps.push_back(s);
      ++k;
    }
  }
  if (j.contains("attacks")) {
    const auto& a = j.at("attacks");
    if (a.contains("modp")) {
      size_t k = 0;
      for (const auto& mj : a.at("modp"))
        cfg.modp.push_back(attack::modp_from_json(
            mj, where + ": attacks.modp[" + std::to_string(k++) + "]"));
    }
    if (a.contains("dos")) {
      size_t k = 0;
      for (const auto& dj : a.at("dos"))
        cfg.dos.push_back(attack::dos_from_json(
            dj, where + ": attacks.dos[" + std::to_string(k++) + "]"));
    }
  }
  validate(cfg);
  return cfg;
}

inline ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  return scenario_from_json(j, std::filesystem::path(path).parent_path().string(),
                            path);
}

// ---------------------------------------------------------------------------
// Capture log: every frame that crosses the channel, in both its sent and
// delivered form, plus control-plane notes. Written as JSON lines so the
// replay command can re-decode the raw bytes later.

struct CaptureEntry {
  int64_t t_us = 0;
  std::string event;  // SENT/MUTATED/DELIVERED/DROPPED/REJECTED/TIMEOUT/ATTACK/NOTE
  uint16_t station = 0;
  bool from_master = true;
  uint64_t datagram = 0;
  std::vector<uint8_t> bytes;
  std::string summary;
};

namespace cosimdetail {

inline std::string describe(const dnp3::ApplicationFragment& frag) {
  std::ostringstream out;
  out << dnp3::function_name(frag.function) << " seq=" << int(frag.seq());
  for (const auto& blk : frag.objects) {
    out << " g" << int(blk.group) << "v" << int(blk.variation);
    if (blk.points.empty()) {
      out << " all";
      continue;
    }
    for (const auto& p : blk.points)
      out << " [" << p.index << "]=" << fmt_g(static_cast<double>(p.value));
  }
  return out.str();
}

inline std::string describe_bytes(const std::vector<uint8_t>& bytes) {
  auto decoded = dnp3::decode_frame(bytes);
  if (auto* frag = std::get_if<dnp3::ApplicationFragment>(&decoded))
    return describe(*frag);
  const auto& err = std::get<dnp3::DecodeError>(decoded);
  return std::string("undecodable: ") + dnp3::diag_name(err.kind) + " " +
         err.detail;
}

inline std::string describe_mutation(const attack::PerturbationRecord& rec) {
  std::ostringstream out;
  out << rec.attack;
  if (rec.warning) {
    out << " warning: " << rec.note;
    return out.str();
  }
  out << " changed " << rec.bytes_changed << " byte(s)";
  const size_t n = std::min(rec.values_before.size(), rec.values_after.size());
  for (size_t i = 0; i < n; ++i)
    out << " " << fmt_g(rec.values_before[i]) << " -> "
        << fmt_g(rec.values_after[i]);
  return out.str();
}

}  // namespace cosimdetail

inline void write_capture(const std::vector<CaptureEntry>& entries,
                          const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path + ": cannot open for writing");
  for (const auto& e : entries) {
    nlohmann::ordered_json j;
    j["t_us"] = e.t_us;
    j["event"] = e.event;
    j["station"] = e.station;
    j["from_master"] = e.from_master;
    j["datagram"] = e.datagram;
    j["bytes"] = to_hex(e.bytes);
    j["summary"] = e.summary;
    out << j.dump() << "\n";
  }
}

inline std::vector<CaptureEntry> load_capture(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open");
  std::vector<CaptureEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    CaptureEntry e;
    e.t_us = j.value("t_us", int64_t{0});
    e.event = j.value("event", std::string());
    e.station = static_cast<uint16_t>(j.value("station", 0));
    e.from_master = j.value("from_master", true);
    e.datagram = j.value("datagram", uint64_t{0});
    e.bytes = from_hex(j.value("bytes", std::string()));
    e.summary = j.value("summary", std::string());
    entries.push_back(std::move(e));
  }
  return entries;
}

inline std::string render_capture_entry(const CaptureEntry& e) {
  std::ostringstream out;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%12.6f", us_to_s(e.t_us));
  out << "[" << buf << "] ";
  if (e.station != 0)
    out << (e.from_master ? "M->" : "M<-") << e.station << " ";
  out << e.event;
  if (!e.bytes.empty()) out << " len=" << e.bytes.size();
  if (!e.summary.empty()) out << "  " << e.summary;
  return out.str();
}

// ---------------------------------------------------------------------------

class Simulation {
 public:
  explicit Simulation(const ScenarioConfig& cfg)
      : Simulation(cfg, load_feeder(cfg.feeder_path),
                   load_profile(cfg.load_profile_path),
                   cfg.pv_profile_path.empty()
                       ? StepProfile{}
                       : load_profile(cfg.pv_profile_path)) {}

  Simulation(const ScenarioConfig& cfg, FeederModel model, StepProfile load,
             StepProfile pv)
      : cfg_(cfg),
        model_(std::move(model)),
        model_ctrl_(model_),
        load_profile_(std::move(load)),
        pv_profile_(std::move(pv)) {
    validate(cfg_);
    vvsim::validate(model_);
    channel_.latency_us = s_to_us(cfg_.channel_latency_s);
    channel_.modp = cfg_.modp;
    // The run seed perturbs random byte replacement without touching the
    // (otherwise fully deterministic) physics or protocol machinery.
    for (auto& m : channel_.modp) m.seed ^= mix64(cfg_.seed);
    channel_.dos = cfg_.dos;
    init_setpoints();
    init_stations();
    init_series();
    schedule_calendar();
  }

  // Processes every event due at or before t_s.
  void step_until(double t_s) {
    const int64_t horizon = s_to_us(t_s);
    while (!queue_.empty() && queue_.top().t_us <= horizon) step_one();
  }

  // Drains the whole calendar.
  void run() {
    while (!queue_.empty()) step_one();
  }

  double now_s() const { return us_to_s(now_us_); }
  const FeederModel& plant() const { return model_; }
  const VvoSetpoints& believed_setpoints() const { return sp_prev_; }
  const RunSeries& series() const { return series_; }
  const std::vector<CaptureEntry>& capture() const { return capture_; }
  const std::vector<attack::PerturbationRecord>& perturbations() const {
    return perturbations_;
  }
  const attack::Channel& channel() const { return channel_; }
  const dnp3::MasterAssociation& association(int bus) const {
    return assocs_.at(station_of(bus));
  }

  RunCounters counters() const {
    RunCounters c = counters_;
    for (const auto& [addr, assoc] : assocs_) {
      c.requests_sent += assoc.counters().requests_sent;
      c.responses_received += assoc.counters().responses_received;
      c.timeouts += assoc.counters().timeouts;
      c.decode_failures += assoc.counters().decode_failures;
      c.pending_at_end += assoc.pending_count();
    }
    const auto& st = channel_.stats();
    c.datagrams_sent = st.datagrams_sent;
    c.frames_delivered = st.delivered;
    c.frames_dropped = st.dropped;
    c.frames_mutated = st.mutated;
    c.attack_warnings = st.warnings;
    for (const auto& rec : perturbations_) {
      if (rec.warning) continue;
      const size_t n = std::min(rec.values_before.size(), rec.values_after.size());
      for (size_t i = 0; i < n; ++i) {
        c.perturbed_values++;
        c.sum_abs_value_delta +=
            std::abs(rec.values_after[i] - rec.values_before[i]);
      }
    }
    return c;
  }

  ScenarioReport report() const {
    RunMeta meta;
    meta.name = cfg_.name;
    meta.feeder = model_.name;
    meta.cvr_enabled = cfg_.cvr.enabled;
    meta.prices = cfg_.prices;
    return summarize(series_, counters(), meta);
  }

  static uint16_t station_of(int bus) {
    return static_cast<uint16_t>(kOutstationBase + bus);
  }

 private:
  enum class EventKind : int {
    AttackEdge = 0,
    ProfileStep = 1,
    Delivery = 2,
    Timeout = 3,
    MeterSample = 4,
    ControlCycle = 5,
  };

  struct Event {
    int64_t t_us = 0;
    EventKind kind = EventKind::MeterSample;
    uint64_t order = 0;
    uint16_t station = 0;
    bool to_master = false;
    std::vector<uint8_t> bytes;
    uint64_t datagram = 0;
    uint8_t seq = 0;       // Timeout
    int64_t sent_us = 0;   // Timeout
    int index = -1;        // ProfileStep: load_steps index; AttackEdge: note id
    std::string note;      // AttackEdge label
  };

  struct EventAfter {
    bool operator()(const Event& a, const Event& b) const {
      if (a.t_us != b.t_us) return a.t_us > b.t_us;
      if (a.kind != b.kind) return static_cast<int>(a.kind) > static_cast<int>(b.kind);
      return a.order > b.order;
    }
  };

  // Analog output slot layout per hosting bus: regulator tap first, then
  // capacitor step, then the four droop-curve fields.
  struct AoSlot {
    enum class Kind { Tap, CapStep, CurveCenter, CurveHalf, CurveQmax, CurveSlope };
    Kind kind;
    std::string reg_id;  // Tap
    int bus = 0;
  };

  void init_setpoints() {
    for (const auto& vr : model_ctrl_.regulators) sp_prev_.taps[vr.id] = vr.tap;
    for (const auto& cb : model_ctrl_.capacitors)
      sp_prev_.cap_steps[cb.bus] = cb.step;
    for (const auto& inv : model_ctrl_.inverters)
      sp_prev_.curves[inv.bus] = inv.curve;
    sp_prev_.feasible = true;
  }

  void init_stations() {
    for (int bus : model_.meters) {
      const uint16_t addr = station_of(bus);
      stations_.emplace(addr, dnp3::Outstation(addr, kMasterAddress));
      assocs_.emplace(addr, dnp3::MasterAssociation(addr));
      station_bus_[addr] = bus;
      stations_.at(addr).on_analog_output = [this, bus](uint16_t idx, double v) {
        apply_analog_output(bus, idx, v);
      };
    }
    for (const auto& vr : model_.regulators) {
      if (!station_bus_count(vr.to_bus))
        throw ValidationError("regulator host bus " + std::to_string(vr.to_bus) +
                              " has no outstation (not metered)");
      ao_slots_[vr.to_bus].push_back({AoSlot::Kind::Tap, vr.id, vr.to_bus});
    }
    for (const auto& cb : model_.capacitors) {
      if (!station_bus_count(cb.bus))
        throw ValidationError("capacitor host bus " + std::to_string(cb.bus) +
                              " has no outstation (not metered)");
      ao_slots_[cb.bus].push_back({AoSlot::Kind::CapStep, "", cb.bus});
    }
    for (const auto& inv : model_.inverters) {
      if (!station_bus_count(inv.bus))
        throw ValidationError("inverter host bus " + std::to_string(inv.bus) +
                              " has no outstation (not metered)");
      auto& slots = ao_slots_[inv.bus];
      slots.push_back({AoSlot::Kind::CurveCenter, "", inv.bus});
      slots.push_back({AoSlot::Kind::CurveHalf, "", inv.bus});
      slots.push_back({AoSlot::Kind::CurveQmax, "", inv.bus});
      slots.push_back({AoSlot::Kind::CurveSlope, "", inv.bus});
    }
  }

  bool station_bus_count(int bus) const {
    return station_bus_.count(station_of(bus)) != 0;
  }

  void init_series() {
    series_.metering_period_s = cfg_.metering_period_s;
    series_.control_period_s = cfg_.control_period_s;
    series_.duration_s = cfg_.duration_s;
    series_.metered_buses = model_.meters;
    std::sort(series_.metered_buses.begin(), series_.metered_buses.end());
    for (int bus : series_.metered_buses) {
      const Bus& b = model_.buses[model_.bus_pos(bus)];
      series_.limits[bus] = {b.v_min, b.v_max};
      series_.v[bus] = {};
    }
    for (const auto& inv : model_.inverters) series_.q_pvsi_kvar[inv.bus] = {};
    // Segment spans from the load profile labels.
    const auto& steps = load_profile_.steps();
    for (size_t i = 0; i < steps.size(); ++i) {
      if (steps[i].label.empty()) continue;
      if (!series_.segments.empty() &&
          series_.segments.back().label == steps[i].label) {
        series_.segments.back().t1_s =
            (i + 1 < steps.size()) ? steps[i + 1].t_s : cfg_.duration_s;
        continue;
      }
      SegmentSpan span;
      span.label = steps[i].label;
      span.t0_s = series_.segments.empty() ? 0.0 : steps[i].t_s;
      span.t1_s = (i + 1 < steps.size()) ? steps[i + 1].t_s : cfg_.duration_s;
      series_.segments.push_back(span);
    }
    if (!series_.segments.empty())
      series_.segments.back().t1_s =
          std::max(series_.segments.back().t1_s, cfg_.duration_s);
  }

  void schedule_calendar() {
    const int64_t duration_us = s_to_us(cfg_.duration_s);
    const int64_t meter_us = s_to_us(cfg_.metering_period_s);
    const int64_t control_us = s_to_us(cfg_.control_period_s);
    for (int64_t t = 0; t < duration_us; t += meter_us)
      push_event(t, EventKind::MeterSample);
    for (int64_t t = control_us; t < duration_us; t += control_us)
      push_event(t, EventKind::ControlCycle);
    for (size_t i = 0; i < cfg_.load_steps.size(); ++i) {
      Event e;
      e.index = static_cast<int>(i);
      push_event(s_to_us(cfg_.load_steps[i].time_s), EventKind::ProfileStep, e);
    }
    auto edge = [&](double t_s, const std::string& label) {
      if (t_s < 0) return;
      Event e;
      e.note = label;
      push_event(s_to_us(t_s), EventKind::AttackEdge, e);
    };
    for (const auto& m : cfg_.modp) {
      edge(m.t_start_s, m.name + " ON");
      edge(m.t_end_s, m.name + " OFF");
    }
    for (const auto& d : cfg_.dos) {
      edge(d.t_start_s, d.name + " ON");
      edge(d.t_end_s, d.name + " OFF");
    }
  }

  void push_event(int64_t t_us, EventKind kind) {
    push_event(t_us, kind, Event());
  }

  void push_event(int64_t t_us, EventKind kind, Event proto) {
    proto.t_us = t_us;
    proto.kind = kind;
    proto.order = order_seq_++;
    queue_.push(std::move(proto));
  }

  void step_one() {
    Event ev = queue_.top();
    queue_.pop();
    now_us_ = ev.t_us;
    switch (ev.kind) {
      case EventKind::AttackEdge: on_attack_edge(ev); break;
      case EventKind::ProfileStep: on_profile_step(ev); break;
      case EventKind::Delivery: on_delivery(ev); break;
      case EventKind::Timeout: on_timeout(ev); break;
      case EventKind::MeterSample: on_meter_sample(); break;
      case EventKind::ControlCycle: on_control_cycle(); break;
    }
  }

  void note(const std::string& text) {
    CaptureEntry e;
    e.t_us = now_us_;
    e.event = "NOTE";
    e.summary = text;
    capture_.push_back(std::move(e));
  }

  void on_attack_edge(const Event& ev) {
    CaptureEntry e;
    e.t_us = now_us_;
    e.event = "ATTACK";
    e.summary = ev.note;
    capture_.push_back(std::move(e));
  }

  void on_profile_step(const Event& ev) {
    const auto& step = cfg_.load_steps[static_cast<size_t>(ev.index)];
    bus_step_scale_[step.bus] = step.multiplier;
    note("load step: bus " + std::to_string(step.bus) + " x" +
         fmt_g(step.multiplier));
  }

  OperatingPoint plant_operating_point(double t_s) const {
    OperatingPoint op;
    op.time_s = t_s;
    op.load_scale = load_profile_.empty() ? 1.0 : load_profile_.value_at(t_s);
    op.bus_load_scale = bus_step_scale_;
    for (const auto& inv : model_.inverters)
      op.p_avail_kw[inv.bus] = pv_profile_.empty()
                                   ? inv.p_avail_kw
                                   : std::max(0.0, pv_profile_.value_at(t_s));
    op.q_pvsi_kvar = q_pvsi_;
    return op;
  }

  void on_meter_sample() {
    const double t_s = us_to_s(now_us_);

    // Inverters track their droop curve against the last solved voltage.
    for (const auto& inv : model_.inverters) {
      double v = last_v_.count(inv.bus) ? last_v_.at(inv.bus) : 1.0;
      PvSmartInverter dev = inv;
      if (!pv_profile_.empty())
        dev.p_avail_kw = std::max(0.0, pv_profile_.value_at(t_s));
      q_pvsi_[inv.bus] = volt_var_q(dev.curve, v, dev);
    }

    OperatingPoint op = plant_operating_point(t_s);
    PowerFlowSolution pf = solve(model_, op, 1e-8, 200);
    if (pf.converged) {
      last_pf_ = pf;
      have_pf_ = true;
      counters_.max_balance_residual_pu = std::max(
          counters_.max_balance_residual_pu, pf.balance_residual_pu);
      for (int bus : series_.metered_buses) last_v_[bus] = pf.v_at(model_, bus);
    } else {
      counters_.diverged_solves++;
      note("power flow diverged; holding last converged state");
      if (!have_pf_) return;  // nothing sensible to record yet
      pf = last_pf_;
    }

    series_.t_s.push_back(t_s);
    for (int bus : series_.metered_buses)
      series_.v[bus].push_back(pf.v_at(model_, bus));
    series_.p_sub_kw.push_back(pf.p_sub_kw);
    series_.loss_kw.push_back(pf.loss_kw);
    for (const auto& inv : model_.inverters)
      series_.q_pvsi_kvar[inv.bus].push_back(q_pvsi_.at(inv.bus));
    series_.segment.push_back(load_profile_.empty()
                                  ? std::string()
                                  : load_profile_.label_at(t_s));

    // Refresh the field databases and poll every outstation.
    for (int bus : series_.metered_buses) {
      auto& db = stations_.at(station_of(bus)).db();
      const size_t bp = model_.bus_pos(bus);
      db.analog_inputs[0] = {pf.v[bp], now_us_};
      db.analog_inputs[1] = {pf.p_load_kw[bp], now_us_};
      db.analog_inputs[2] = {pf.q_load_kvar[bp], now_us_};
    }
    for (const auto& inv : model_.inverters) {
      auto& db = stations_.at(station_of(inv.bus)).db();
      double avail = pv_profile_.empty() ? inv.p_avail_kw
                                         : std::max(0.0, pv_profile_.value_at(t_s));
      db.analog_inputs[3] = {avail, now_us_};
    }
    for (auto& [addr, assoc] : assocs_) {
      auto frag = assoc.make_poll(now_us_);
      send_request(addr, frag);
    }
  }

  void send_request(uint16_t station, const dnp3::ApplicationFragment& frag) {
    Event to;
    to.station = station;
    to.seq = frag.seq();
    to.sent_us = now_us_;
    push_event(now_us_ + s_to_us(cfg_.controller.response_timeout_s),
               EventKind::Timeout, to);
    send_datagram(station, true, frag);
  }

  void send_datagram(uint16_t station, bool from_master,
                     const dnp3::ApplicationFragment& frag) {
    auto frames = from_master
                      ? dnp3::encode_frame(frag, kMasterAddress, station, true)
                      : dnp3::encode_frame(frag, station, kMasterAddress, false);
    std::vector<uint8_t> wire;
    for (const auto& f : frames) wire.insert(wire.end(), f.begin(), f.end());

    const uint64_t id = ++datagram_seq_;
    CaptureEntry sent;
    sent.t_us = now_us_;
    sent.event = "SENT";
    sent.station = station;
    sent.from_master = from_master;
    sent.datagram = id;
    sent.bytes = wire;
    sent.summary = cosimdetail::describe(frag);
    capture_.push_back(std::move(sent));

    auto out = channel_.process(now_us_, station, from_master, std::move(wire));
    for (auto& rec : out.records) {
      CaptureEntry mut;
      mut.t_us = now_us_;
      mut.event = rec.warning ? "ATTACK_WARNING" : "MUTATED";
      mut.station = station;
      mut.from_master = from_master;
      mut.datagram = id;
      mut.bytes = rec.perturbed;
      mut.summary = cosimdetail::describe_mutation(rec);
      capture_.push_back(std::move(mut));
      perturbations_.push_back(std::move(rec));
    }
    if (out.dropped) {
      CaptureEntry drop;
      drop.t_us = now_us_;
      drop.event = "DROPPED";
      drop.station = station;
      drop.from_master = from_master;
      drop.datagram = id;
      drop.summary = out.dropped_by;
      capture_.push_back(std::move(drop));
      return;
    }
    Event dv;
    dv.station = station;
    dv.to_master = !from_master;
    dv.bytes = std::move(out.bytes);
    dv.datagram = id;
    push_event(now_us_ + channel_.latency_us, EventKind::Delivery, dv);
  }

  void on_delivery(Event& ev) {
    CaptureEntry del;
    del.t_us = now_us_;
    del.event = "DELIVERED";
    del.station = ev.station;
    del.from_master = !ev.to_master;
    del.datagram = ev.datagram;
    del.bytes = ev.bytes;

    auto decoded = dnp3::decode_frame(ev.bytes);
    auto* frag = std::get_if<dnp3::ApplicationFragment>(&decoded);
    if (!frag) {
      const auto& err = std::get<dnp3::DecodeError>(decoded);
      del.event = "REJECTED";
      del.summary = dnp3::diag_name(err.kind) + std::string(" ") + err.detail;
      capture_.push_back(std::move(del));
      if (ev.to_master)
        assocs_.at(ev.station).note_decode_failure();
      else
        counters_.outstation_rejects++;
      return;
    }
    del.summary = cosimdetail::describe(*frag);
    capture_.push_back(std::move(del));

    if (!ev.to_master) {
      auto resp = stations_.at(ev.station).handle(*frag);
      send_datagram(ev.station, false, resp);
      return;
    }
    auto& assoc = assocs_.at(ev.station);
    if (!assoc.handle_response(*frag, now_us_)) {
      note("unmatched response from station " + std::to_string(ev.station));
      return;
    }
    // Track a short smoothing window of delivered voltage samples.
    bool has_read = false;
    for (const auto& blk : frag->objects)
      if (blk.group == dnp3::kGroupAnalogInput) has_read = true;
    if (has_read) {
      const int bus = station_bus_.at(ev.station);
      const auto& mirror = assoc.mirror();
      if (mirror.analog_inputs.count(0)) {
        auto& hist = v_history_[bus];
        hist.push_back(mirror.analog_inputs.at(0).value);
        while (hist.size() > cfg_.controller.smoothing_samples) hist.pop_front();
      }
    }
  }

  void on_timeout(const Event& ev) {
    auto& assoc = assocs_.at(ev.station);
    if (assoc.expire(ev.seq, ev.sent_us)) {
      CaptureEntry e;
      e.t_us = now_us_;
      e.event = "TIMEOUT";
      e.station = ev.station;
      e.from_master = true;
      e.summary = "request seq=" + std::to_string(int(ev.seq)) +
                  " unanswered; association DOWN";
      capture_.push_back(std::move(e));
    }
  }

  MeasurementSet assemble_measurements() const {
    MeasurementSet meas;
    for (int bus : series_.metered_buses) {
      const auto& assoc = assocs_.at(station_of(bus));
      const auto& ai = assoc.mirror().analog_inputs;
      if (!ai.count(0) || !ai.count(1) || !ai.count(2)) continue;
      BusMeasurement m;
      auto hit = v_history_.find(bus);
      if (hit != v_history_.end() && !hit->second.empty()) {
        double sum = 0.0;
        for (double v : hit->second) sum += v;
        m.v_pu = sum / static_cast<double>(hit->second.size());
      } else {
        m.v_pu = ai.at(0).value;
      }
      m.p_kw = ai.at(1).value;
      m.q_kvar = ai.at(2).value;
      m.timestamp_us = ai.at(0).timestamp_us;
      meas.by_bus[bus] = m;
    }
    for (const auto& inv : model_ctrl_.inverters) {
      const auto& ai = assocs_.at(station_of(inv.bus)).mirror().analog_inputs;
      if (ai.count(3)) meas.pv_p_avail_kw[inv.bus] = ai.at(3).value;
    }
    return meas;
  }

  void on_control_cycle() {
    counters_.control_cycles++;
    MeasurementSet meas = assemble_measurements();
    VvoOptions opts;
    opts.search_radius = cfg_.controller.search_radius;
    opts.control_period_s = cfg_.control_period_s;
    opts.cvr_enabled = cfg_.cvr.enabled;
    opts.cvr_target_v = cfg_.cvr.target_v;
    opts.cvr_weight = cfg_.cvr.weight;
    opts.v_margin = cfg_.controller.v_margin;
    opts.beta_min = cfg_.controller.beta_min;
    opts.beta_max = cfg_.controller.beta_max;
    VvoSetpoints result =
        solve_vvo(model_ctrl_, meas, sp_prev_, cfg_.prices, opts, now_us_);
    if (result.stale) {
      counters_.stale_cycles++;
      note("control hold: telemetry STALE (staleness " +
           fmt_f(meas.staleness_s(now_us_), 1) + " s)");
      return;
    }
    sp_prev_ = result;
    std::ostringstream plan;
    plan << "vvo:";
    for (const auto& [id, tap] : result.taps) plan << " " << id << "=" << tap;
    for (const auto& [bus, st] : result.cap_steps)
      plan << " CB" << bus << "=" << st;
    for (const auto& [bus, c] : result.curves)
      plan << " beta" << bus << "=" << fmt_g(c.q_max_frac);
    plan << (result.feasible ? "" : " (predicted violation)")
         << " cost=" << fmt_g(result.objective_value);
    note(plan.str());

    // Write-always refresh: every device gets its setpoints each cycle.
    for (const auto& [bus, slots] : ao_slots_) {
      std::vector<dnp3::AnalogPoint> pts;
      for (size_t i = 0; i < slots.size(); ++i) {
        const AoSlot& slot = slots[i];
        float value = 0.0f;
        switch (slot.kind) {
          case AoSlot::Kind::Tap:
            value = static_cast<float>(result.taps.at(slot.reg_id));
            break;
          case AoSlot::Kind::CapStep:
            value = static_cast<float>(result.cap_steps.at(slot.bus));
            break;
          case AoSlot::Kind::CurveCenter:
          case AoSlot::Kind::CurveHalf:
          case AoSlot::Kind::CurveQmax:
          case AoSlot::Kind::CurveSlope: {
            const VoltVarCurve& c = result.curves.at(slot.bus);
            const PvSmartInverter& inv = inverter_at(model_ctrl_, slot.bus);
            const double q_max = c.q_max_frac * inv.s_rating_kva;
            if (slot.kind == AoSlot::Kind::CurveCenter)
              value = static_cast<float>(0.5 * (c.v2 + c.v3));
            else if (slot.kind == AoSlot::Kind::CurveHalf)
              value = static_cast<float>(0.5 * (c.v3 - c.v2));
            else if (slot.kind == AoSlot::Kind::CurveQmax)
              value = static_cast<float>(c.q_max_frac);
            else
              value = static_cast<float>(q_max / (c.v2 - c.v1));
            break;
          }
        }
        pts.push_back({static_cast<uint16_t>(i), value, 0});
      }
      const uint16_t addr = station_of(bus);
      auto frag = assocs_.at(addr).make_operate(std::move(pts), now_us_);
      send_request(addr, frag);
    }
  }

  static const PvSmartInverter& inverter_at(const FeederModel& m, int bus) {
    for (const auto& inv : m.inverters)
      if (inv.bus == bus) return inv;
    throw ValidationError("no inverter at bus " + std::to_string(bus));
  }

  // Plant-side application of a raw analog output value. Only physical
  // clamping is applied; the commanded value is recorded as received.
  void apply_analog_output(int bus, uint16_t index, double value) {
    auto it = ao_slots_.find(bus);
    if (it == ao_slots_.end() || index >= it->second.size()) {
      note("station " + std::to_string(station_of(bus)) +
           " ignored write to undefined AO index " + std::to_string(index));
      return;
    }
    const AoSlot& slot = it->second[index];
    const double t_s = us_to_s(now_us_);
    switch (slot.kind) {
      case AoSlot::Kind::Tap: {
        for (auto& vr : model_.regulators) {
          if (vr.id != slot.reg_id) continue;
          int target = static_cast<int>(std::lround(value));
          int applied = std::clamp(target, vr.tap_min, vr.tap_max);
          if (applied != vr.tap) {
            series_.tap_events.push_back(
                {t_s, vr.id, value, double(vr.tap), double(applied)});
            vr.tap = applied;
          }
          return;
        }
        break;
      }
      case AoSlot::Kind::CapStep: {
        for (auto& cb : model_.capacitors) {
          if (cb.bus != slot.bus) continue;
          int target = static_cast<int>(std::lround(value));
          int applied = std::clamp(target, 0, cb.n_steps);
          if (applied != cb.step) {
            series_.cap_events.push_back({t_s, "CB" + std::to_string(cb.bus),
                                          value, double(cb.step),
                                          double(applied)});
            cb.step = applied;
          }
          return;
        }
        break;
      }
      case AoSlot::Kind::CurveCenter:
      case AoSlot::Kind::CurveHalf:
      case AoSlot::Kind::CurveQmax:
      case AoSlot::Kind::CurveSlope: {
        auto& stage = curve_stage_[slot.bus];
        if (!stage.primed) {
          for (const auto& inv : model_.inverters) {
            if (inv.bus != slot.bus) continue;
            stage.center = 0.5 * (inv.curve.v2 + inv.curve.v3);
            stage.half = 0.5 * (inv.curve.v3 - inv.curve.v2);
            stage.qmax = inv.curve.q_max_frac;
            stage.slope = inv.curve.q_max_frac *
                          inv.s_rating_kva / (inv.curve.v2 - inv.curve.v1);
            stage.primed = true;
          }
        }
        if (slot.kind == AoSlot::Kind::CurveCenter) stage.center = value;
        if (slot.kind == AoSlot::Kind::CurveHalf) stage.half = value;
        if (slot.kind == AoSlot::Kind::CurveQmax) stage.qmax = value;
        if (slot.kind == AoSlot::Kind::CurveSlope) {
          stage.slope = value;
          commit_curve(slot.bus, value, t_s);
        }
        return;
      }
    }
  }

  // The curve takes effect when its last field (the slope) is written. The
  // device reconstructs breakpoints from the four raw fields and clamps them
  // to physically representable values; it does not enforce grid policy.
  void commit_curve(int bus, double commanded_slope, double t_s) {
    auto& stage = curve_stage_[bus];
    for (auto& inv : model_.inverters) {
      if (inv.bus != bus) continue;
      const double center = std::clamp(stage.center, 0.5, 1.5);
      const double half = std::clamp(stage.half, 1e-6, 0.5);
      const double qmax = std::clamp(stage.qmax, 0.0, 1.0);
      const double slope = std::clamp(std::abs(stage.slope), 1e-3, 1e12);
      const double q_max_kvar = std::max(qmax * inv.s_rating_kva, 1e-9);
      const double span = std::clamp(q_max_kvar / slope, 1e-6, 0.5);
      VoltVarCurve next;
      next.v2 = center - half;
      next.v3 = center + half;
      next.v1 = next.v2 - span;
      next.v4 = next.v3 + span;
      next.q_max_frac = qmax;
      const double old_slope =
          inv.curve.q_max_frac * inv.s_rating_kva / (inv.curve.v2 - inv.curve.v1);
      if (!(next == inv.curve)) {
        series_.curve_events.push_back({t_s, "PVSI" + std::to_string(bus),
                                        commanded_slope, old_slope,
                                        q_max_kvar / span});
        inv.curve = next;
      }
      return;
    }
  }

  struct CurveStage {
    bool primed = false;
    double center = 1.0;
    double half = 0.0;
    double qmax = 0.0;
    double slope = 1.0;
  };

  ScenarioConfig cfg_;
  FeederModel model_;       // plant truth; devices mutate it
  FeederModel model_ctrl_;  // controller's pristine model
  StepProfile load_profile_;
  StepProfile pv_profile_;

  std::map<int, double> bus_step_scale_;
  std::map<int, double> q_pvsi_;
  std::map<int, double> last_v_;
  PowerFlowSolution last_pf_;
  bool have_pf_ = false;

  std::map<uint16_t, dnp3::Outstation> stations_;
  std::map<uint16_t, dnp3::MasterAssociation> assocs_;
  std::map<uint16_t, int> station_bus_;
  std::map<int, std::vector<AoSlot>> ao_slots_;
  std::map<int, CurveStage> curve_stage_;
  std::map<int, std::deque<double>> v_history_;
  VvoSetpoints sp_prev_;

  attack::Channel channel_;
  std::priority_queue<Event, std::vector<Event>, EventAfter> queue_;
  uint64_t order_seq_ = 0;
  uint64_t datagram_seq_ = 0;
  int64_t now_us_ = 0;

  RunSeries series_;
  RunCounters counters_;
  std::vector<CaptureEntry> capture_;
  std::vector<attack::PerturbationRecord> perturbations_;
};

}  // namespace vvsim
