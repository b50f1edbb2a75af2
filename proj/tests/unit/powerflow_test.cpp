#include <catch2/catch_amalgamated.hpp>

#include "nodal_oracle.hpp"
#include "vvsim/powerflow.hpp"

using namespace vvsim;
using Catch::Approx;

namespace {

// 2-bus fixture: source 1.0 pu, one series branch, one load. s_base 10 MVA.
FeederModel two_bus(double r, double x, double p_kw, double q_kvar,
                    double z = 0.0, double i = 0.0, double p = 1.0) {
  FeederModel m;
  m.name = "two-bus";
  m.base_kv = 4.16;
  m.s_base_mva = 10.0;
  m.substation_bus = 1;
  m.buses = {{1, 4.16, 0.95, 1.05}, {2, 4.16, 0.95, 1.05}};
  m.lines = {{1, 2, r, x}};
  m.loads = {{2, p_kw, q_kvar, z, i, p}};
  m.meters = {1, 2};
  validate(m);
  return m;
}

// Branched 6-bus fixture with a mid-line regulator, a capacitor, and an
// inverter, exercising every stamp the solvers support.
FeederModel six_bus() {
  FeederModel m;
  m.name = "six-bus";
  m.base_kv = 4.16;
  m.s_base_mva = 10.0;
  m.substation_bus = 1;
  for (int id = 1; id <= 6; ++id) m.buses.push_back({id, 4.16, 0.95, 1.05});
  m.lines = {{1, 2, 0.01, 0.02},  {2, 3, 0.015, 0.02}, {2, 4, 0.02, 0.03},
             {4, 5, 0.01, 0.015}, {4, 6, 0.012, 0.01}};
  m.loads = {{3, 400.0, 200.0, 0.3, 0.4, 0.3},
             {5, 600.0, 300.0, 1.0, 0.0, 0.0},
             {6, 300.0, 100.0, 0.0, 0.0, 1.0}};
  m.regulators = {{"VRX", 2, 4, 2, -16, 16, 0.00625}};
  m.capacitors = {{5, 1, 2, 150.0}};
  m.inverters = {{6, 500.0, 200.0, VoltVarCurve{}}};
  m.meters = {1, 2, 3, 4, 5, 6};
  validate(m);
  return m;
}

}  // namespace

TEST_CASE("zip_power evaluates the polynomial") {
  ZipLoad mixed{1, 200.0, 80.0, 0.3, 0.4, 0.3};
  SECTION("nominal voltage returns nameplate") {
    auto [p, q] = zip_power(mixed, 1.0);
    CHECK(p == Approx(200.0).margin(1e-12));
    CHECK(q == Approx(80.0).margin(1e-12));
  }
  SECTION("pure impedance load scales with v^2") {
    ZipLoad z{1, 100.0, 40.0, 1.0, 0.0, 0.0};
    auto [p, q] = zip_power(z, 0.95);
    CHECK(p == Approx(90.25).margin(1e-12));
    CHECK(q == Approx(36.10).margin(1e-12));
  }
  SECTION("mixed coefficients at 0.97 pu") {
    // 0.3*0.97^2 + 0.4*0.97 + 0.3 = 0.97027
    auto [p, q] = zip_power(mixed, 0.97);
    CHECK(p == Approx(200.0 * 0.97027).margin(1e-9));
    CHECK(q == Approx(80.0 * 0.97027).margin(1e-9));
  }
}

TEST_CASE("volt_var_q follows the curve and both caps") {
  PvSmartInverter inv{34, 1000.0, 0.0, VoltVarCurve{0.92, 0.98, 1.02, 1.08, 0.6}};

  SECTION("deadband yields exactly zero") {
    for (double v : {0.98, 0.99, 1.0, 1.01, 1.02})
      CHECK(volt_var_q(inv.curve, v, inv) == 0.0);
  }
  SECTION("full capacitive support below v1 with no active dispatch") {
    CHECK(volt_var_q(inv.curve, 0.92, inv) == Approx(600.0));
    CHECK(volt_var_q(inv.curve, 0.85, inv) == Approx(600.0));
  }
  SECTION("midpoint of the absorbing segment under active dispatch") {
    inv.p_avail_kw = 800.0;  // circle headroom = 600
    double v_mid = 0.5 * (inv.curve.v3 + inv.curve.v4);
    // min(0.5 * 600, 600) absorbing
    CHECK(volt_var_q(inv.curve, v_mid, inv) == Approx(-300.0));
  }
  SECTION("circle cap binds at full active output") {
    inv.p_avail_kw = 1000.0;
    CHECK(volt_var_q(inv.curve, 0.90, inv) == 0.0);
    inv.p_avail_kw = 960.0;  // headroom = 280
    CHECK(volt_var_q(inv.curve, 0.90, inv) == Approx(280.0));
  }
  SECTION("monotone non-increasing in voltage") {
    double prev = 1e9;
    for (double v = 0.85; v <= 1.15; v += 0.001) {
      double q = volt_var_q(inv.curve, v, inv);
      CHECK(q <= prev + 1e-12);
      prev = q;
    }
  }
}

TEST_CASE("2-bus solve matches the closed-form solution") {
  // Frozen from tests/golden/two_bus_oracle.py.
  struct Case {
    double r, x, p_kw, q_kvar, v2, loss_pu;
  };
  const Case cases[] = {
      {0.01, 0.01, 1000.0, 0.0, 0.998998496489339, 0.000100200602007},
      {0.01, 0.01, 1000.0, 500.0, 0.998497617659214, 0.000125376443716},
      {0.02, 0.04, 3000.0, 1000.0, 0.989846390027432, 0.002041241496617},
  };
  for (const Case& c : cases) {
    FeederModel m = two_bus(c.r, c.x, c.p_kw, c.q_kvar);
    PowerFlowSolution sol = solve(m, {});
    REQUIRE(sol.converged);
    CHECK(sol.v[1] == Approx(c.v2).margin(2e-6));
    CHECK(sol.loss_kw == Approx(c.loss_pu * 10000.0).epsilon(1e-4));
  }
}

TEST_CASE("no load means flat unity voltage and zero loss") {
  FeederModel m = build_ieee34_modified();
  m.loads.clear();
  OperatingPoint op;
  PowerFlowSolution sol = solve(m, op);
  REQUIRE(sol.converged);
  for (double v : sol.v) CHECK(v == 1.0);
  CHECK(sol.loss_kw == 0.0);
  CHECK(sol.p_sub_kw == Approx(0.0).margin(1e-12));
}

TEST_CASE("34-bus nominal flow drops monotonically away from the source") {
  FeederModel m = build_ieee34_modified();
  PowerFlowSolution sol = solve(m, {});
  REQUIRE(sol.converged);
  CHECK(sol.iterations <= 100);

  // With all taps at 0 every path is unregulated; consumption-only flow
  // makes voltage fall along each path from the substation.
  const std::vector<std::vector<int>> paths = {
      {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12},
      {3, 13, 14, 15, 16},
      {6, 17, 18, 19, 20, 21, 22, 23, 24, 25, 26, 27},
      {7, 28, 29, 30},
      {10, 31, 32, 33, 34}};
  for (const auto& path : paths)
    for (size_t k = 1; k < path.size(); ++k)
      CHECK(sol.v_at(m, path[k]) < sol.v_at(m, path[k - 1]));

  CHECK(sol.v_at(m, 27) < sol.v_at(m, 1));
  CHECK(sol.loss_kw > 0.0);
}

TEST_CASE("sweep matches the nodal oracle") {
  auto compare = [](const FeederModel& m, const OperatingPoint& op) {
    PowerFlowSolution sweep = solve(m, op);
    testing::NodalResult oracle = testing::nodal_solve(m, op);
    REQUIRE(sweep.converged);
    REQUIRE(oracle.converged);
    for (size_t b = 0; b < m.buses.size(); ++b) {
      INFO("bus " << m.buses[b].id);
      CHECK(sweep.v[b] == Approx(oracle.v[b]).margin(1e-5));
    }
    CHECK(sweep.loss_kw == Approx(oracle.loss_kw).margin(0.05));
  };

  SECTION("2-bus") { compare(two_bus(0.01, 0.01, 1000.0, 500.0), {}); }
  SECTION("6-bus with regulator, capacitor, and inverter") {
    compare(six_bus(), {});
    OperatingPoint op;
    op.taps["VRX"] = -3;
    op.q_pvsi_kvar[6] = 250.0;
    op.load_scale = 1.2;
    compare(six_bus(), op);
  }
  SECTION("34-bus nominal") { compare(build_ieee34_modified(), {}); }
  SECTION("34-bus with taps, PV, and a bus step") {
    OperatingPoint op;
    op.taps["VR1"] = 3;
    op.taps["VR2"] = 2;
    op.p_avail_kw[34] = 1000.0;
    op.q_pvsi_kvar[34] = 300.0;
    op.bus_load_scale[8] = 1.25;
    compare(build_ieee34_modified(), op);
  }
}

TEST_CASE("substation power balances load plus loss") {
  FeederModel m = build_ieee34_modified();
  for (double scale : {0.5, 1.0, 1.05}) {
    OperatingPoint op;
    op.load_scale = scale;
    op.taps["VR1"] = 2;
    op.p_avail_kw[34] = 800.0;
    op.q_pvsi_kvar[34] = -200.0;
    PowerFlowSolution sol = solve(m, op);
    REQUIRE(sol.converged);
    double load_sum = 0.0;
    for (double p : sol.p_load_kw) load_sum += p;
    double gen = 800.0;
    // 1e-6 pu on a 10 MVA base is 0.01 kW.
    CHECK(sol.p_sub_kw == Approx(load_sum + sol.loss_kw - gen).margin(0.01));
  }
}

TEST_CASE("mismatch contracts and the solve stays within budget") {
  FeederModel m = build_ieee34_modified();
  OperatingPoint op;
  op.load_scale = 1.0;
  PowerFlowSolution sol = solve(m, op);
  REQUIRE(sol.converged);
  CHECK(sol.iterations <= 100);
  for (size_t k = 3; k < sol.mismatch_trace.size(); ++k)
    CHECK(sol.mismatch_trace[k] <= sol.mismatch_trace[k - 1]);
}

TEST_CASE("raising a tap raises every downstream voltage") {
  FeederModel m = build_ieee34_modified();
  PowerFlowSolution base = solve(m, {});
  const std::vector<int> below_vr1 = {8, 9, 10, 11, 12, 31, 32, 33, 34};
  const std::vector<int> below_vr2 = {20, 21, 22, 23, 24, 25, 26, 27};

  OperatingPoint up;
  up.taps["VR1"] = 1;
  PowerFlowSolution sol_up = solve(m, up);
  for (int b : below_vr1) CHECK(sol_up.v_at(m, b) > base.v_at(m, b));
  for (int b : below_vr2) CHECK(sol_up.v_at(m, b) == Approx(base.v_at(m, b)).margin(1e-4));

  OperatingPoint down;
  down.taps["VR1"] = -1;
  PowerFlowSolution sol_dn = solve(m, down);
  for (int b : below_vr1) CHECK(sol_dn.v_at(m, b) < base.v_at(m, b));

  OperatingPoint vr2;
  vr2.taps["VR2"] = 1;
  PowerFlowSolution sol_vr2 = solve(m, vr2);
  for (int b : below_vr2) CHECK(sol_vr2.v_at(m, b) > base.v_at(m, b));
  CHECK(sol_vr2.v_at(m, 12) == Approx(base.v_at(m, 12)).margin(1e-4));
}

TEST_CASE("taps beyond hard stops are physically clamped") {
  FeederModel m = build_ieee34_modified();
  OperatingPoint at_max, beyond;
  at_max.taps["VR1"] = m.regulators[0].tap_max;
  beyond.taps["VR1"] = m.regulators[0].tap_max + 5;
  PowerFlowSolution a = solve(m, at_max);
  PowerFlowSolution b = solve(m, beyond);
  for (size_t i = 0; i < a.v.size(); ++i) CHECK(a.v[i] == b.v[i]);
}

TEST_CASE("infeasible loading is flagged, not crashed") {
  FeederModel m = two_bus(0.05, 0.05, 60000.0, 30000.0);  // 6.0 + j3.0 pu: no solution
  PowerFlowSolution sol = solve(m, {});
  CHECK(!sol.converged);
  CHECK(sol.iterations == 100);
}

TEST_CASE("negative load scale is rejected") {
  FeederModel m = two_bus(0.01, 0.01, 1000.0, 0.0);
  OperatingPoint op;
  op.load_scale = -0.5;
  CHECK_THROWS_AS(solve(m, op), ValidationError);
}
