#include <catch2/catch_amalgamated.hpp>

#include <string>
#include <vector>

#include "vvsim/report.hpp"

using namespace vvsim;

namespace {

RunSeries one_bus_series(const std::vector<double>& trace) {
  RunSeries s;
  s.metering_period_s = 60.0;
  s.control_period_s = 900.0;
  s.duration_s = 60.0 * static_cast<double>(trace.size());
  s.metered_buses = {8};
  s.limits[8] = {0.95, 1.05};
  s.v[8] = trace;
  for (size_t k = 0; k < trace.size(); ++k) {
    s.t_s.push_back(60.0 * static_cast<double>(k));
    s.p_sub_kw.push_back(0.0);
    s.loss_kw.push_back(0.0);
    s.segment.push_back("");
  }
  return s;
}

}  // namespace

TEST_CASE("an empty run summarizes to zeros") {
  RunSeries s;
  ScenarioReport r = summarize(s, RunCounters{}, RunMeta{});
  CHECK(r.energy_purchased_kwh == 0.0);
  CHECK(r.total_cost_usd == 0.0);
  CHECK(r.violation_count == 0);
  CHECK(r.mean_voltage_pu == 0.0);
  CHECK(r.vr_updates.empty());
}

TEST_CASE("violation episodes split on direction changes") {
  // low for two samples, clean, high, then straight into low, and finally an
  // episode still open when the run ends
  auto s = one_bus_series({1.0, 0.94, 0.93, 1.0, 1.06, 0.94, 0.94, 1.0, 1.07});
  auto eps = find_violations(s);
  REQUIRE(eps.size() == 4);

  CHECK(!eps[0].high);
  CHECK(eps[0].t_start_s == 60.0);
  CHECK(eps[0].t_end_s == 180.0);
  CHECK(eps[0].seconds == 120.0);
  CHECK(eps[0].extreme_v == 0.93);

  CHECK(eps[1].high);
  CHECK(eps[1].t_start_s == 240.0);
  CHECK(eps[1].seconds == 60.0);
  CHECK(eps[1].extreme_v == 1.06);

  CHECK(!eps[2].high);
  CHECK(eps[2].t_start_s == 300.0);
  CHECK(eps[2].seconds == 120.0);

  CHECK(eps[3].high);
  CHECK(eps[3].t_start_s == 480.0);
  CHECK(eps[3].t_end_s == 540.0);
  CHECK(eps[3].extreme_v == 1.07);

  ScenarioReport r = summarize(s, RunCounters{}, RunMeta{});
  CHECK(r.violation_count == 4);
  CHECK(r.violation_seconds == 360.0);

  // Exactly touching a limit is not a violation.
  auto clean = one_bus_series({0.95, 1.05, 1.0});
  CHECK(find_violations(clean).empty());
}

TEST_CASE("costs integrate the stored series") {
  RunSeries s;
  s.metering_period_s = 900.0;  // quarter-hour samples
  s.control_period_s = 900.0;
  s.duration_s = 3600.0;
  s.metered_buses = {8};
  s.limits[8] = {0.95, 1.05};
  s.t_s = {0.0, 900.0, 1800.0, 2700.0};
  s.v[8] = {1.0, 1.0, 1.0, 1.0};
  s.p_sub_kw = {100.0, 100.0, 200.0, 200.0};
  s.loss_kw = {10.0, 10.0, 10.0, 10.0};
  s.q_pvsi_kvar[34] = {-100.0, 100.0, 0.0, 0.0};
  s.segment = {"light", "light", "heavy", "heavy"};
  s.segments = {{"light", 0.0, 1800.0}, {"heavy", 1800.0, 3600.0}};
  s.tap_events = {{900.0, "VR1", 1, 0, 1},
                  {1800.0, "VR1", 2, 1, 2},
                  {2700.0, "VR2", 1, 0, 1}};
  s.cap_events = {{900.0, "CB30", 1, 0, 1}};

  RunMeta meta;
  meta.name = "unit";
  ScenarioReport r = summarize(s, RunCounters{}, meta);

  CHECK(r.energy_purchased_kwh == Catch::Approx(150.0));
  CHECK(r.energy_cost_usd == Catch::Approx(30.0));
  CHECK(r.loss_kwh == Catch::Approx(10.0));
  CHECK(r.pvsi_kvarh == Catch::Approx(50.0));
  CHECK(r.pvsi_cost_usd == Catch::Approx(10.0));
  CHECK(r.vr_cost_usd == Catch::Approx(0.15));
  CHECK(r.cap_cost_usd == Catch::Approx(0.05));
  CHECK(r.total_cost_usd == Catch::Approx(30.0 + 0.15 + 0.05 + 10.0));

  CHECK(r.vr_updates.at("VR1").at("total") == 2);
  CHECK(r.vr_updates.at("VR1").at("light") == 1);
  CHECK(r.vr_updates.at("VR1").at("heavy") == 1);
  CHECK(r.vr_updates.at("VR2").at("total") == 1);
  CHECK(r.vr_updates.at("VR2").at("heavy") == 1);
  CHECK(r.vr_updates.at("VR2").count("light") == 0);
  CHECK(r.cap_updates == 1);
}

TEST_CASE("baseline comparison yields the reduction factor") {
  ScenarioReport base;
  base.name = "clean";
  base.duration_s = 86400.0;
  base.energy_purchased_kwh = 1000.0;
  base.mean_voltage_pu = 1.0;

  ScenarioReport run;
  run.duration_s = 86400.0;
  run.energy_purchased_kwh = 980.0;  // 2 % saved
  run.mean_voltage_pu = 0.975;       // 2.5 % lower

  compare_to_baseline(run, base);
  REQUIRE(run.pct_energy_saved);
  REQUIRE(run.pct_voltage_reduction);
  REQUIRE(run.cvr_factor);
  CHECK(*run.pct_energy_saved == Catch::Approx(2.0));
  CHECK(*run.pct_voltage_reduction == Catch::Approx(2.5));
  CHECK(*run.cvr_factor == Catch::Approx(0.8));
  CHECK(run.baseline_name == "clean");

  // No voltage drop: the factor is undefined and stays absent.
  ScenarioReport flat = base;
  compare_to_baseline(flat, base);
  CHECK(flat.pct_energy_saved);
  CHECK(!flat.cvr_factor);

  ScenarioReport other;
  other.duration_s = 3600.0;
  CHECK_THROWS_AS(compare_to_baseline(other, base), ValidationError);
}

TEST_CASE("attacking a run against itself scores zero") {
  ScenarioReport r;
  r.total_cost_usd = 123.0;
  auto s = attack_cost(r, r, 2.0);
  CHECK(s.damage_usd == 0.0);
  CHECK(s.similarity == 0.0);
  CHECK(s.score == 0.0);
}

TEST_CASE("reports survive a JSON round trip") {
  ScenarioReport r;
  r.name = "rt";
  r.feeder = "two-vr";
  r.cvr_enabled = true;
  r.duration_s = 86400.0;
  r.control_period_s = 900.0;
  r.metering_period_s = 60.0;
  r.energy_purchased_kwh = 1234.5;
  r.total_cost_usd = 321.0;
  r.vr_updates["VR1"]["total"] = 7;
  r.vr_updates["VR1"]["light"] = 3;
  r.violation_count = 1;
  r.violation_seconds = 120.0;
  r.episodes.push_back({8, true, 300.0, 420.0, 120.0, 1.062});
  r.mean_voltage_pu = 0.987;
  r.counters.requests_sent = 5000;
  r.counters.timeouts = 12;
  r.counters.sum_abs_value_delta = 42.5;
  r.baseline_name = "clean";
  r.pct_energy_saved = 3.17;
  r.pct_voltage_reduction = 3.96;
  r.cvr_factor = 0.8;
  r.voltages_csv = "out/voltages.csv";

  auto j = report_to_json(r);
  ScenarioReport back = report_from_json(j);
  CHECK(report_to_json(back).dump(2) == j.dump(2));
  CHECK(back.episodes.size() == 1);
  CHECK(back.episodes[0].extreme_v == 1.062);
  CHECK(back.counters.timeouts == 12);
  REQUIRE(back.cvr_factor);
  CHECK(*back.cvr_factor == 0.8);

  // Optional comparison block disappears with no baseline.
  ScenarioReport bare;
  auto jb = report_to_json(bare);
  CHECK(!jb.contains("baseline"));
}

TEST_CASE("csv exports are stable and ordered") {
  RunSeries s;
  s.metering_period_s = 60.0;
  s.duration_s = 120.0;
  s.metered_buses = {8, 27};
  s.limits[8] = s.limits[27] = {0.95, 1.05};
  s.t_s = {0.0, 60.0};
  s.v[8] = {1.0, 1.01};
  s.v[27] = {0.99, 0.98};
  s.p_sub_kw = {100.0, 110.0};
  s.loss_kw = {1.0, 1.1};
  s.segment = {"light", "light"};
  s.tap_events = {{90.0, "VR2", 1, 0, 1}};
  s.cap_events = {{30.0, "CB30", 1, 0, 1}};
  s.curve_events = {{30.0, "PVSI34.slope", 40.0, 12.0, 40.0}};

  std::string v_csv = format_voltages_csv(s);
  CHECK(v_csv.rfind("t_s,v8,v27,p_sub_kw,loss_kw,segment\n", 0) == 0);
  CHECK(std::count(v_csv.begin(), v_csv.end(), '\n') == 3);
  CHECK(v_csv == format_voltages_csv(s));

  std::string e_csv = format_events_csv(s);
  // Same-instant rows keep insertion order (cap before curve), later rows follow.
  auto cap_at = e_csv.find("cap,CB30");
  auto curve_at = e_csv.find("curve,PVSI34.slope");
  auto tap_at = e_csv.find("tap,VR2");
  REQUIRE(cap_at != std::string::npos);
  REQUIRE(curve_at != std::string::npos);
  REQUIRE(tap_at != std::string::npos);
  CHECK(cap_at < curve_at);
  CHECK(curve_at < tap_at);

  std::string text = format_report_text(summarize(s, RunCounters{}, RunMeta{}));
  CHECK(text.find("total operating cost") != std::string::npos);
  std::string csv = format_report_csv(summarize(s, RunCounters{}, RunMeta{}));
  CHECK(csv.rfind("metric,value\n", 0) == 0);
  CHECK(csv.find("updates.VR2.total,1") != std::string::npos);
}
