#pragma once

// Radial power flow by backward/forward sweep (current summation). Regulators
// are ideal in-line ratio devices: the ratio applies at the from-bus end of
// their line, so V_child = ratio * V_parent - z * I_line and the parent sees
// the reflected current ratio * I_line.

#include <cmath>
#include <complex>
#include <map>
#include <string>
#include <vector>

#include "vvsim/feeder.hpp"

namespace vvsim {

struct OperatingPoint {
  double time_s = 0.0;
  double load_scale = 1.0;
  std::map<int, double> bus_load_scale;   // extra per-bus multiplier (default 1)
  std::map<std::string, int> taps;        // by regulator id; default = model state
  std::map<int, int> cap_steps;           // by bus; default = model state
  std::map<int, double> p_avail_kw;       // by inverter bus; default = model state
  std::map<int, double> q_pvsi_kvar;      // by inverter bus; default 0 (explicit dispatch)
};

struct PowerFlowSolution {
  std::vector<double> v;             // |V| p.u., aligned with model.buses
  std::vector<double> i_line;        // |I| p.u., aligned with model.lines
  std::vector<double> p_load_kw;     // realized ZIP consumption per bus
  std::vector<double> q_load_kvar;
  double loss_kw = 0.0;
  double p_sub_kw = 0.0;             // substation active injection
  double q_sub_kvar = 0.0;
  double balance_residual_pu = 0.0;  // |p_sub - sum(draws) - loss| in p.u.
  bool converged = false;
  int iterations = 0;
  std::vector<double> mismatch_trace;  // max |dV| per iteration

  double v_at(const FeederModel& m, int bus_id) const { return v[m.bus_pos(bus_id)]; }
};

// ZIP polynomial: both P and Q scale with z*v^2 + i*v + p.
inline std::pair<double, double> zip_power(const ZipLoad& load, double v) {
  double f = load.z_frac * v * v + load.i_frac * v + load.p_frac;
  return {load.p0_kw * f, load.q0_kvar * f};
}

// Piecewise-linear IEEE 1547 style Volt/VAR characteristic. Positive Q is
// injection (capacitive support at low voltage). Caps: the curve's own
// q_max_frac (<= 0.6 of rating) and the apparent-power circle given the
// active dispatch.
inline double volt_var_q(const VoltVarCurve& curve, double v, const PvSmartInverter& inv) {
  double q_max = curve.q_max_frac * inv.s_rating_kva;
  double q;
  if (v <= curve.v1) {
    q = q_max;
  } else if (v < curve.v2) {
    q = q_max * (curve.v2 - v) / (curve.v2 - curve.v1);
  } else if (v <= curve.v3) {
    q = 0.0;
  } else if (v < curve.v4) {
    q = -q_max * (v - curve.v3) / (curve.v4 - curve.v3);
  } else {
    q = -q_max;
  }
  double headroom2 = inv.s_rating_kva * inv.s_rating_kva - inv.p_avail_kw * inv.p_avail_kw;
  double circle = headroom2 > 0.0 ? std::sqrt(headroom2) : 0.0;
  if (q > circle) q = circle;
  if (q < -circle) q = -circle;
  return q;
}

namespace pfdetail {

struct Traversal {
  std::vector<int> order;        // bus positions, root first (BFS)
  std::vector<int> parent_line;  // line index feeding this bus position; -1 at root
  std::vector<int> parent_pos;   // parent bus position; -1 at root
};

inline Traversal traverse(const FeederModel& m) {
  size_t n = m.buses.size();
  std::map<int, size_t> pos;
  for (size_t i = 0; i < n; ++i) pos[m.buses[i].id] = i;

  std::vector<std::vector<std::pair<size_t, int>>> adj(n);  // (neighbor pos, line idx)
  for (size_t li = 0; li < m.lines.size(); ++li) {
    size_t a = pos.at(m.lines[li].from_bus);
    size_t b = pos.at(m.lines[li].to_bus);
    adj[a].push_back({b, static_cast<int>(li)});
    adj[b].push_back({a, static_cast<int>(li)});
  }

  Traversal t;
  t.parent_line.assign(n, -1);
  t.parent_pos.assign(n, -1);
  std::vector<bool> seen(n, false);
  size_t root = pos.at(m.substation_bus);
  seen[root] = true;
  t.order.push_back(static_cast<int>(root));
  for (size_t head = 0; head < t.order.size(); ++head) {
    size_t b = static_cast<size_t>(t.order[head]);
    for (auto [nb, li] : adj[b]) {
      if (seen[nb]) continue;
      seen[nb] = true;
      t.parent_line[nb] = li;
      t.parent_pos[nb] = static_cast<int>(b);
      t.order.push_back(static_cast<int>(nb));
    }
  }
  return t;
}

}  // namespace pfdetail

inline PowerFlowSolution solve(const FeederModel& model, const OperatingPoint& op,
                               double tol = 1e-6, int max_iterations = 100) {
  if (op.load_scale < 0) throw ValidationError("operating point: load_scale must be >= 0");
  using cx = std::complex<double>;
  const size_t n = model.buses.size();
  const size_t nl = model.lines.size();
  const double p_base = model.p_base_kw();
  const pfdetail::Traversal t = pfdetail::traverse(model);

  // Effective device states for this operating point.
  std::vector<double> line_ratio(nl, 1.0);
  for (const auto& vr : model.regulators) {
    int tap = vr.tap;
    if (auto it = op.taps.find(vr.id); it != op.taps.end()) tap = it->second;
    tap = std::clamp(tap, vr.tap_min, vr.tap_max);  // physical hard stops
    for (size_t li = 0; li < nl; ++li)
      if (model.lines[li].from_bus == vr.from_bus && model.lines[li].to_bus == vr.to_bus)
        line_ratio[li] = vr.ratio_at(tap);
  }
  std::vector<double> q_shunt_kvar(n, 0.0);  // capacitor + inverter injection
  std::vector<double> p_gen_kw(n, 0.0);
  for (const auto& cb : model.capacitors) {
    int step = cb.step;
    if (auto it = op.cap_steps.find(cb.bus); it != op.cap_steps.end()) step = it->second;
    step = std::clamp(step, 0, cb.n_steps);
    q_shunt_kvar[model.bus_pos(cb.bus)] += step * cb.step_kvar;
  }
  for (const auto& inv : model.inverters) {
    size_t bp = model.bus_pos(inv.bus);
    double p = inv.p_avail_kw;
    if (auto it = op.p_avail_kw.find(inv.bus); it != op.p_avail_kw.end()) p = it->second;
    p = std::clamp(p, 0.0, inv.s_rating_kva);
    p_gen_kw[bp] += p;
    if (auto it = op.q_pvsi_kvar.find(inv.bus); it != op.q_pvsi_kvar.end()) {
      double headroom2 = inv.s_rating_kva * inv.s_rating_kva - p * p;
      double circle = headroom2 > 0.0 ? std::sqrt(headroom2) : 0.0;
      q_shunt_kvar[bp] += std::clamp(it->second, -circle, circle);
    }
  }
  std::vector<double> bus_scale(n, 1.0);
  for (const auto& [bus, s] : op.bus_load_scale) bus_scale[model.bus_pos(bus)] = s;

  PowerFlowSolution sol;
  std::vector<cx> V(n, cx(model.source_v_pu, 0.0));
  std::vector<cx> I_line(nl, cx(0.0, 0.0));
  std::vector<cx> I_reflected(nl, cx(0.0, 0.0));  // current seen at the from bus
  std::vector<cx> S_draw(n, cx(0.0, 0.0));        // p.u. consumption at final V
  size_t root = static_cast<size_t>(t.order[0]);

  auto backward_forward = [&](bool update_v) -> double {
    // Nodal drawn power at present voltages.
    std::fill(S_draw.begin(), S_draw.end(), cx(0.0, 0.0));
    for (const auto& ld : model.loads) {
      size_t bp = model.bus_pos(ld.bus);
      auto [p_kw, q_kvar] = zip_power(ld, std::abs(V[bp]));
      double s = op.load_scale * bus_scale[bp];
      S_draw[bp] += cx(p_kw * s, q_kvar * s) / p_base;
    }
    for (size_t bp = 0; bp < n; ++bp)
      S_draw[bp] -= cx(p_gen_kw[bp], q_shunt_kvar[bp]) / p_base;

    // Backward: accumulate branch currents leaf-to-root.
    std::vector<cx> I_acc(n, cx(0.0, 0.0));
    for (size_t bp = 0; bp < n; ++bp) {
      size_t b = static_cast<size_t>(t.order[bp]);
      I_acc[b] = std::conj(S_draw[b] / V[b]);
    }
    for (size_t k = t.order.size(); k-- > 1;) {
      size_t b = static_cast<size_t>(t.order[k]);
      int li = t.parent_line[b];
      I_line[static_cast<size_t>(li)] = I_acc[b];
      I_reflected[static_cast<size_t>(li)] = line_ratio[static_cast<size_t>(li)] * I_acc[b];
      I_acc[static_cast<size_t>(t.parent_pos[b])] += I_reflected[static_cast<size_t>(li)];
    }

    // Forward: propagate voltages root-to-leaf.
    double mismatch = 0.0;
    if (update_v) {
      for (size_t k = 1; k < t.order.size(); ++k) {
        size_t b = static_cast<size_t>(t.order[k]);
        size_t li = static_cast<size_t>(t.parent_line[b]);
        size_t p = static_cast<size_t>(t.parent_pos[b]);
        cx z(model.lines[li].r, model.lines[li].x);
        cx v_new = line_ratio[li] * V[p] - z * I_line[li];
        mismatch = std::max(mismatch, std::abs(v_new - V[b]));
        V[b] = v_new;
      }
    }
    return mismatch;
  };

  for (int it = 1; it <= max_iterations; ++it) {
    double mismatch = backward_forward(true);
    sol.mismatch_trace.push_back(mismatch);
    sol.iterations = it;
    if (mismatch < tol) {
      sol.converged = true;
      break;
    }
  }
  // Final consistent pass: currents, losses, and injections at the final V.
  backward_forward(false);

  sol.v.resize(n);
  for (size_t i = 0; i < n; ++i) sol.v[i] = std::abs(V[i]);
  sol.i_line.resize(nl);
  double loss_pu = 0.0;
  for (size_t li = 0; li < nl; ++li) {
    sol.i_line[li] = std::abs(I_line[li]);
    loss_pu += sol.i_line[li] * sol.i_line[li] * model.lines[li].r;
  }
  sol.loss_kw = loss_pu * p_base;

  cx I_root(0.0, 0.0);
  for (size_t k = 1; k < t.order.size(); ++k) {
    size_t b = static_cast<size_t>(t.order[k]);
    if (static_cast<size_t>(t.parent_pos[b]) == root)
      I_root += I_reflected[static_cast<size_t>(t.parent_line[b])];
  }
  I_root += std::conj(S_draw[root] / V[root]);
  cx s_sub = V[root] * std::conj(I_root);
  sol.p_sub_kw = s_sub.real() * p_base;
  sol.q_sub_kvar = s_sub.imag() * p_base;

  double draw_pu = 0.0;
  for (size_t i = 0; i < n; ++i) draw_pu += S_draw[i].real();
  sol.balance_residual_pu = std::abs(s_sub.real() - draw_pu - loss_pu);

  sol.p_load_kw.assign(n, 0.0);
  sol.q_load_kvar.assign(n, 0.0);
  for (const auto& ld : model.loads) {
    size_t bp = model.bus_pos(ld.bus);
    auto [p_kw, q_kvar] = zip_power(ld, sol.v[bp]);
    double s = op.load_scale * bus_scale[bp];
    sol.p_load_kw[bp] += p_kw * s;
    sol.q_load_kvar[bp] += q_kvar * s;
  }
  return sol;
}

}  // namespace vvsim
