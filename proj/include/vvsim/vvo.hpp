#pragma once

// Volt/VAR optimization. Each control cycle the master assembles a
// MeasurementSet from its point mirrors and calls solve_vvo, which:
//
//   1. holds the previous setpoints when the measurements are DEGRADED
//      (any feeder measurement older than one control period);
//   2. estimates per-bus load scaling from measured injections and the ZIP
//      voltage dependence;
//   3. anchors predictions to telemetry: candidate voltages are the model
//      solution plus the per-bus residual between measurement and the model
//      at the currently believed setpoints, so steady model bias cancels;
//   4. enumerates tap/capacitor combinations within a search window around
//      the believed state (exhaustively when the cross product is small,
//      coordinate descent otherwise) and ranks them by operating cost plus
//      penalties: a hard penalty for predicted limit violations and, in CVR
//      mode, a soft penalty for voltage above the reduction target;
//   5. refines the inverter reactive headroom fraction by golden-section
//      search over its allowed range.
//
// Ties rank by smaller total device movement, then lexicographically by
// device id, making the selection independent of evaluation order. The
// solver is fully deterministic.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vvsim/feeder.hpp"
#include "vvsim/powerflow.hpp"
#include "vvsim/util.hpp"

namespace vvsim {

struct PriceBook {
  double c_energy = 0.20;   // $/kWh purchased or lost
  double c_vr_step = 0.05;  // $ per regulator tap movement
  double c_cb_step = 0.05;  // $ per capacitor step movement
  double c_grid = 0.20;     // $/kVArh of inverter reactive support

  bool operator==(const PriceBook&) const = default;
};

struct BusMeasurement {
  double v_pu = 0.0;
  double p_kw = 0.0;
  double q_kvar = 0.0;
  int64_t timestamp_us = 0;
};

struct MeasurementSet {
  std::map<int, BusMeasurement> by_bus;
  std::map<int, double> pv_p_avail_kw;

  double staleness_s(int64_t now_us) const {
    if (by_bus.empty()) return std::numeric_limits<double>::infinity();
    int64_t oldest = std::numeric_limits<int64_t>::max();
    for (const auto& [bus, m] : by_bus) oldest = std::min(oldest, m.timestamp_us);
    return us_to_s(now_us - oldest);
  }

  bool degraded(int64_t now_us, double control_period_s) const {
    return staleness_s(now_us) > control_period_s;
  }
};

struct VvoOptions {
  int search_radius = 4;         // taps/steps explored each side; <=0 means full range
  size_t max_candidates = 4096;  // exhaustive limit before coordinate descent
  double control_period_s = 900.0;
  bool cvr_enabled = false;
  double cvr_target_v = 0.975;   // pu; voltage above this is penalized in CVR mode
  double cvr_weight = 200.0;     // $ per pu^2 of excess, summed over buses
  double v_margin = 0.0;         // pu back-off on bus limits when scoring candidates
  double beta_min = 0.0;         // inverter reactive headroom fraction range
  double beta_max = 0.6;
  int beta_iterations = 32;      // golden-section refinement steps
};

// Operating cost of moving from sp_prev to sp_cand and running one control
// interval at the solved operating point: energy loss, regulator and
// capacitor wear, and compensation for inverter reactive support.
inline double objective(const FeederModel& model, const VvoSetpoints& sp_prev,
                        const VvoSetpoints& sp_cand, const OperatingPoint& op,
                        const PowerFlowSolution& pf, const PriceBook& prices,
                        double dt_hours) {
  if (!pf.converged)
    throw ValidationError("objective requires a converged power flow");
  double cost = prices.c_energy * pf.loss_kw * dt_hours;
  for (const auto& [id, tap] : sp_cand.taps) {
    int prev = sp_prev.taps.count(id) ? sp_prev.taps.at(id)
                                      : model.regulator(id).tap;
    cost += prices.c_vr_step * std::abs(tap - prev);
  }
  for (const auto& [bus, step] : sp_cand.cap_steps) {
    int prev = step;
    if (sp_prev.cap_steps.count(bus)) {
      prev = sp_prev.cap_steps.at(bus);
    } else {
      for (const auto& cb : model.capacitors)
        if (cb.bus == bus) prev = cb.step;
    }
    cost += prices.c_cb_step * std::abs(step - prev);
  }
  for (const auto& [bus, q] : op.q_pvsi_kvar)
    cost += prices.c_grid * std::abs(q) * dt_hours;
  return cost;
}

namespace vvodetail {

struct Candidate {
  std::map<std::string, int> taps;
  std::map<int, int> cap_steps;
  double rank = std::numeric_limits<double>::infinity();
  double cost = 0.0;
  double violation = 0.0;
  int movement = 0;
  bool valid = false;
  // q_max_frac the candidate was screened at; negative when it was
  // evaluated with the curves the caller carried in.
  double headroom = -1.0;
};

// Order-independent ranking: cheaper rank wins, then less device movement,
// then lexicographically smaller tap and step vectors.
inline bool better(const Candidate& a, const Candidate& b) {
  if (a.valid != b.valid) return a.valid;
  if (a.rank != b.rank) return a.rank < b.rank;
  if (a.movement != b.movement) return a.movement < b.movement;
  if (a.taps != b.taps) return a.taps < b.taps;
  return a.cap_steps < b.cap_steps;
}

struct Window {
  int lo = 0;
  int hi = 0;
  size_t size() const { return static_cast<size_t>(hi - lo + 1); }
};

inline Window device_window(int current, int dev_min, int dev_max, int radius) {
  Window w;
  if (radius <= 0) {
    w.lo = dev_min;
    w.hi = dev_max;
  } else {
    w.lo = std::max(dev_min, current - radius);
    w.hi = std::min(dev_max, current + radius);
  }
  return w;
}

}  // namespace vvodetail

// Fixed-point resolution of inverter reactive output against the feeder
// voltage. Deterministic and short; the loop gain of a sane droop curve is
// well below one, so a handful of sweeps settles it.
inline std::map<int, double> resolve_inverter_q(
    const FeederModel& model, OperatingPoint op,
    const std::map<int, VoltVarCurve>& curves) {
  std::map<int, double> q;
  if (model.inverters.empty()) return q;
  for (const auto& inv : model.inverters) q[inv.bus] = 0.0;
  for (int pass = 0; pass < 24; ++pass) {
    op.q_pvsi_kvar = q;
    PowerFlowSolution pf = solve(model, op);
    if (!pf.converged) break;
    double worst = 0.0;
    for (const auto& inv : model.inverters) {
      VoltVarCurve curve =
          curves.count(inv.bus) ? curves.at(inv.bus) : inv.curve;
      PvSmartInverter dev = inv;
      dev.curve = curve;
      if (op.p_avail_kw.count(inv.bus)) dev.p_avail_kw = op.p_avail_kw.at(inv.bus);
      double nq = volt_var_q(curve, pf.v_at(model, inv.bus), dev);
      // Half-step relaxation keeps the sweep contracting even when the
      // droop loop gain approaches one.
      nq = q[inv.bus] + 0.5 * (nq - q[inv.bus]);
      worst = std::max(worst, std::abs(nq - q[inv.bus]));
      q[inv.bus] = nq;
    }
    if (worst < 0.5) break;
  }
  return q;
}

inline VvoSetpoints solve_vvo(const FeederModel& model,
                              const MeasurementSet& meas,
                              const VvoSetpoints& sp_prev,
                              const PriceBook& prices, const VvoOptions& opts,
                              int64_t now_us) {
  VvoSetpoints hold = sp_prev;
  hold.objective_value = sp_prev.objective_value;
  hold.feasible = false;
  hold.stale = true;
  if (meas.degraded(now_us, opts.control_period_s)) return hold;

  const double dt_hours = opts.control_period_s / 3600.0;

  // Believed device state: previous setpoints, falling back to the model.
  std::map<std::string, int> believed_taps;
  for (const auto& vr : model.regulators)
    believed_taps[vr.id] = sp_prev.taps.count(vr.id) ? sp_prev.taps.at(vr.id)
                                                     : vr.tap;
  std::map<int, int> believed_steps;
  for (const auto& cb : model.capacitors)
    believed_steps[cb.bus] = sp_prev.cap_steps.count(cb.bus)
                                 ? sp_prev.cap_steps.at(cb.bus)
                                 : cb.step;
  std::map<int, VoltVarCurve> believed_curves;
  for (const auto& inv : model.inverters)
    believed_curves[inv.bus] = sp_prev.curves.count(inv.bus)
                                   ? sp_prev.curves.at(inv.bus)
                                   : inv.curve;

  // Load estimation: scale each bus's nominal load so the ZIP model
  // reproduces the measured active power at the measured voltage.
  OperatingPoint op;
  op.taps = believed_taps;
  op.cap_steps = believed_steps;
  for (const auto& [bus, avail] : meas.pv_p_avail_kw) op.p_avail_kw[bus] = avail;
  for (const auto& [bus, m] : meas.by_bus) {
    double nominal = 0.0;
    for (const auto& load : model.loads)
      if (load.bus == bus)
        nominal += load.p0_kw * (load.z_frac * m.v_pu * m.v_pu +
                                 load.i_frac * m.v_pu + load.p_frac);
    if (std::abs(nominal) < 1e-9) continue;
    op.bus_load_scale[bus] = std::clamp(m.p_kw / nominal, 0.0, 10.0);
  }

  // Reactive output the plant is currently producing under its believed
  // curves; kept fixed across tap candidates.
  std::map<int, double> q_now = resolve_inverter_q(model, op, believed_curves);
  op.q_pvsi_kvar = q_now;

  // Measurement anchoring: residual between telemetry and the model at the
  // believed state. Candidate predictions add this residual per bus, so a
  // constant plant/model offset drops out of the comparison.
  PowerFlowSolution pf_believed = solve(model, op);
  std::map<int, double> anchor;
  if (pf_believed.converged)
    for (const auto& [bus, m] : meas.by_bus)
      anchor[bus] = m.v_pu - pf_believed.v_at(model, bus);

  auto evaluate = [&](const std::map<std::string, int>& taps,
                      const std::map<int, int>& steps,
                      const std::map<int, double>& q,
                      const std::map<int, VoltVarCurve>& curves)
      -> vvodetail::Candidate {
    vvodetail::Candidate cand;
    cand.taps = taps;
    cand.cap_steps = steps;
    OperatingPoint cop = op;
    cop.taps = taps;
    cop.cap_steps = steps;
    cop.q_pvsi_kvar = q;
    PowerFlowSolution pf = solve(model, cop);
    if (!pf.converged) return cand;

    VvoSetpoints sp_cand;
    sp_cand.taps = taps;
    sp_cand.cap_steps = steps;
    sp_cand.curves = curves;
    cand.cost = objective(model, sp_prev, sp_cand, cop, pf, prices, dt_hours);

    double violation = 0.0;
    double cvr_pen = 0.0;
    for (const Bus& bus : model.buses) {
      double v = pf.v_at(model, bus.id);
      auto it = anchor.find(bus.id);
      if (it != anchor.end()) v += it->second;
      violation += std::max(0.0, bus.v_min + opts.v_margin - v) +
                   std::max(0.0, v - (bus.v_max - opts.v_margin));
      if (opts.cvr_enabled && v > opts.cvr_target_v) {
        double d = v - opts.cvr_target_v;
        cvr_pen += opts.cvr_weight * d * d;
      }
    }
    cand.violation = violation;
    cand.rank = cand.cost + cvr_pen + 1e6 * violation;
    for (const auto& [id, tap] : taps)
      cand.movement += std::abs(tap - believed_taps.at(id));
    for (const auto& [bus, st] : steps)
      cand.movement += std::abs(st - believed_steps.at(bus));
    cand.valid = true;
    return cand;
  };

  // Device search windows around the believed state.
  std::vector<std::pair<std::string, vvodetail::Window>> tap_windows;
  for (const auto& vr : model.regulators)
    tap_windows.emplace_back(
        vr.id, vvodetail::device_window(believed_taps.at(vr.id), vr.tap_min,
                                        vr.tap_max, opts.search_radius));
  std::vector<std::pair<int, vvodetail::Window>> step_windows;
  for (const auto& cb : model.capacitors)
    step_windows.emplace_back(
        cb.bus, vvodetail::device_window(believed_steps.at(cb.bus), 0,
                                         cb.n_steps, opts.search_radius));

  size_t combos = 1;
  for (const auto& [id, w] : tap_windows) combos *= w.size();
  for (const auto& [bus, w] : step_windows) combos *= w.size();

  // Feasibility of a deep tap combination can hinge on reactive support
  // that only appears at a higher headroom than the carried curve allows,
  // so every combination is screened at the top of the range as well.
  const bool screen_full =
      !model.inverters.empty() && opts.beta_max > opts.beta_min;
  std::map<int, VoltVarCurve> full_curves = believed_curves;
  if (screen_full)
    for (auto& [bus, c] : full_curves) c.q_max_frac = opts.beta_max;

  auto eval_combo = [&](const std::map<std::string, int>& taps,
                        const std::map<int, int>& steps,
                        const std::map<int, double>& q,
                        const std::map<int, VoltVarCurve>& curves)
      -> vvodetail::Candidate {
    auto cand = evaluate(taps, steps, q, curves);
    if (screen_full) {
      OperatingPoint fop = op;
      fop.taps = taps;
      fop.cap_steps = steps;
      auto fq = resolve_inverter_q(model, fop, full_curves);
      auto full = evaluate(taps, steps, fq, full_curves);
      full.headroom = opts.beta_max;
      if (vvodetail::better(full, cand)) cand = full;
    }
    return cand;
  };

  auto search_devices = [&](const std::map<int, double>& q,
                            const std::map<int, VoltVarCurve>& curves)
      -> vvodetail::Candidate {
    vvodetail::Candidate found;
    if (combos <= opts.max_candidates) {
      // Exhaustive cross product in a fixed lexicographic order.
      std::map<std::string, int> taps = believed_taps;
      std::map<int, int> steps = believed_steps;
      for (size_t flat = 0; flat < combos; ++flat) {
        size_t rem = flat;
        for (size_t d = 0; d < tap_windows.size(); ++d) {
          const auto& [id, w] = tap_windows[d];
          taps[id] = w.lo + static_cast<int>(rem % w.size());
          rem /= w.size();
        }
        for (size_t d = 0; d < step_windows.size(); ++d) {
          const auto& [bus, w] = step_windows[d];
          steps[bus] = w.lo + static_cast<int>(rem % w.size());
          rem /= w.size();
        }
        auto cand = eval_combo(taps, steps, q, curves);
        if (vvodetail::better(cand, found)) found = cand;
      }
    } else {
      // Coordinate descent: line search one device at a time until stable.
      std::map<std::string, int> taps = believed_taps;
      std::map<int, int> steps = believed_steps;
      found = eval_combo(taps, steps, q, curves);
      for (int round = 0; round < 20; ++round) {
        bool changed = false;
        for (const auto& [id, w] : tap_windows) {
          for (int t = w.lo; t <= w.hi; ++t) {
            auto trial = taps;
            trial[id] = t;
            auto cand = eval_combo(trial, steps, q, curves);
            if (vvodetail::better(cand, found)) {
              found = cand;
              changed = true;
            }
          }
          if (found.valid) taps = found.taps;
        }
        for (const auto& [bus, w] : step_windows) {
          for (int s = w.lo; s <= w.hi; ++s) {
            auto trial = steps;
            trial[bus] = s;
            auto cand = eval_combo(taps, trial, q, curves);
            if (vvodetail::better(cand, found)) {
              found = cand;
              changed = true;
            }
          }
          if (found.valid) steps = found.cap_steps;
        }
        if (!changed) break;
      }
    }
    return found;
  };

  vvodetail::Candidate best = search_devices(q_now, believed_curves);
  if (!best.valid) return hold;

  // Inverter headroom: golden-section over the allowed fraction at the
  // chosen tap/step combination, re-resolving the droop fixed point per
  // trial. The result replaces the curve's headroom, keeping its shape.
  // A refined headroom changes the reactive support every candidate rides
  // on, which can make a deeper tap combination feasible, so alternate the
  // device search with the refinement until the device choice holds still.
  std::map<int, VoltVarCurve> chosen_curves = believed_curves;
  if (!model.inverters.empty() && opts.beta_max > opts.beta_min) {
    for (int pass = 0; pass < 3; ++pass) {
      auto eval_beta = [&](double beta) -> vvodetail::Candidate {
        std::map<int, VoltVarCurve> curves = believed_curves;
        for (auto& [bus, c] : curves) c.q_max_frac = beta;
        OperatingPoint bop = op;
        bop.taps = best.taps;
        bop.cap_steps = best.cap_steps;
        auto q = resolve_inverter_q(model, bop, curves);
        return evaluate(best.taps, best.cap_steps, q, curves);
      };
      const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
      double a = opts.beta_min, b = opts.beta_max;
      double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
      auto f1 = eval_beta(x1), f2 = eval_beta(x2);
      for (int i = 0; i < opts.beta_iterations; ++i) {
        if (vvodetail::better(f1, f2)) {
          b = x2;
          x2 = x1;
          f2 = f1;
          x1 = b - gr * (b - a);
          f1 = eval_beta(x1);
        } else {
          a = x1;
          x1 = x2;
          f1 = f2;
          x2 = a + gr * (b - a);
          f2 = eval_beta(x2);
        }
      }
      const double beta = 0.5 * (a + b);
      auto refined = eval_beta(beta);
      auto prev_beta = eval_beta(believed_curves.begin()->second.q_max_frac);
      if (vvodetail::better(refined, prev_beta) &&
          vvodetail::better(refined, best)) {
        best = refined;
        for (auto& [bus, c] : chosen_curves) c.q_max_frac = beta;
      } else if (vvodetail::better(prev_beta, best)) {
        best = prev_beta;
        chosen_curves = believed_curves;
      }
      OperatingPoint rop = op;
      rop.taps = best.taps;
      rop.cap_steps = best.cap_steps;
      auto q_next = resolve_inverter_q(model, rop, chosen_curves);
      auto moved = search_devices(q_next, chosen_curves);
      if (!moved.valid || (moved.taps == best.taps &&
                           moved.cap_steps == best.cap_steps))
        break;
      best = moved;
    }
    // The winner may have come from the full-headroom screen without the
    // refinement improving on it; command the headroom it was ranked at.
    if (best.headroom >= 0.0)
      for (auto& [bus, c] : chosen_curves) c.q_max_frac = best.headroom;
  }

  VvoSetpoints out;
  out.taps = best.taps;
  out.cap_steps = best.cap_steps;
  out.curves = chosen_curves;
  out.objective_value = best.cost;
  out.feasible = best.violation < 1e-6;
  out.stale = false;
  return out;
}

}  // namespace vvsim
