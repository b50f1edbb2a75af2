#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "vvsim/feeder.hpp"

using namespace vvsim;

namespace {

FeederModel tiny3() {
  FeederModel m;
  m.name = "tiny3";
  m.base_kv = 4.16;
  m.s_base_mva = 1.0;
  m.substation_bus = 1;
  m.buses = {{1, 4.16, 0.95, 1.05}, {2, 4.16, 0.95, 1.05}, {3, 4.16, 0.95, 1.05}};
  m.lines = {{1, 2, 0.01, 0.02}, {2, 3, 0.015, 0.025}};
  m.loads = {{3, 100.0, 50.0, 0.3, 0.4, 0.3}};
  m.meters = {1, 2, 3};
  return m;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("benchmark builder produces the modified 34-bus feeder") {
  FeederModel m = build_ieee34_modified();
  CHECK(m.buses.size() == 34);
  CHECK(m.base_kv == 4.16);
  CHECK(m.lines.size() == 33);
  REQUIRE(m.regulators.size() == 2);
  CHECK(m.regulators[0].id == "VR1");
  CHECK(m.regulators[0].from_bus == 7);
  CHECK(m.regulators[0].to_bus == 8);
  CHECK(m.regulators[1].id == "VR2");
  CHECK(m.regulators[1].from_bus == 19);
  CHECK(m.regulators[1].to_bus == 20);
  REQUIRE(m.inverters.size() == 1);
  CHECK(m.inverters[0].bus == 34);
  CHECK(m.capacitors.empty());
  CHECK(m.meters.size() == 34);  // a smart meter on every bus

  // Dataset checksum: nominal totals of the 33 spot loads with bus 8
  // replaced by the 100 kW / 600 kVAr RL study load.
  double p = 0, q = 0;
  bool rl_found = false;
  for (const auto& ld : m.loads) {
    p += ld.p0_kw;
    q += ld.q0_kvar;
    if (ld.bus == 8) {
      rl_found = true;
      CHECK(ld.p0_kw == 100.0);
      CHECK(ld.q0_kvar == 600.0);
      CHECK(ld.z_frac == 1.0);  // constant impedance
    }
  }
  CHECK(rl_found);
  CHECK(p == Catch::Approx(4636.5 - 230.0 + 100.0).epsilon(1e-12));
  CHECK(q == Catch::Approx(2873.5 - 142.5 + 600.0).epsilon(1e-12));

  CHECK_NOTHROW(validate(m));
}

TEST_CASE("validation rejects malformed feeders") {
  SECTION("zip fractions must sum to one") {
    FeederModel m = tiny3();
    m.loads[0].z_frac = 0.5;  // 0.5 + 0.4 + 0.3 = 1.2
    CHECK_THROWS_WITH(validate(m), Catch::Matchers::ContainsSubstring("load at bus 3") &&
                                       Catch::Matchers::ContainsSubstring("sum"));
  }
  SECTION("meshed loop is not radial") {
    FeederModel m = tiny3();
    m.lines.push_back({3, 1, 0.01, 0.01});
    CHECK_THROWS_WITH(validate(m), Catch::Matchers::ContainsSubstring("not radial"));
  }
  SECTION("disconnected bus is not radial") {
    FeederModel m = tiny3();
    m.buses.push_back({4, 4.16, 0.95, 1.05});
    CHECK_THROWS_WITH(validate(m), Catch::Matchers::ContainsSubstring("not radial"));
  }
  SECTION("duplicate bus id") {
    FeederModel m = tiny3();
    m.buses.push_back({2, 4.16, 0.95, 1.05});
    CHECK_THROWS_AS(validate(m), ValidationError);
  }
  SECTION("line to unknown bus") {
    FeederModel m = tiny3();
    m.lines[1].to_bus = 9;
    CHECK_THROWS_AS(validate(m), ValidationError);
  }
  SECTION("regulator must sit on an existing line") {
    FeederModel m = tiny3();
    m.regulators.push_back({"VR1", 1, 3, 0, -16, 16, 0.00625});
    CHECK_THROWS_WITH(validate(m), Catch::Matchers::ContainsSubstring("VR1"));
  }
  SECTION("regulator tap range must stay inside the ratio band") {
    FeederModel m = tiny3();
    m.regulators.push_back({"VR1", 1, 2, 0, -20, 20, 0.00625});  // 1.125 at +20
    CHECK_THROWS_WITH(validate(m), Catch::Matchers::ContainsSubstring("0.9-1.1"));
  }
  SECTION("current tap outside its own bounds") {
    FeederModel m = tiny3();
    m.regulators.push_back({"VR1", 1, 2, 9, -8, 8, 0.0125});
    CHECK_THROWS_AS(validate(m), ValidationError);
  }
  SECTION("curve breakpoints must be ordered") {
    FeederModel m = tiny3();
    PvSmartInverter inv{3, 100.0, 0.0, VoltVarCurve{0.98, 0.92, 1.02, 1.08, 0.6}};
    m.inverters.push_back(inv);
    CHECK_THROWS_WITH(validate(m), Catch::Matchers::ContainsSubstring("v1 < v2"));
  }
  SECTION("q_max_frac above 0.6 rejected") {
    FeederModel m = tiny3();
    PvSmartInverter inv{3, 100.0, 0.0, VoltVarCurve{0.92, 0.98, 1.02, 1.08, 0.7}};
    m.inverters.push_back(inv);
    CHECK_THROWS_AS(validate(m), ValidationError);
  }
  SECTION("p_avail above rating rejected") {
    FeederModel m = tiny3();
    m.inverters.push_back({3, 100.0, 150.0, VoltVarCurve{}});
    CHECK_THROWS_AS(validate(m), ValidationError);
  }
  SECTION("meter on unknown bus rejected") {
    FeederModel m = tiny3();
    m.meters.push_back(42);
    CHECK_THROWS_AS(validate(m), ValidationError);
  }
}

TEST_CASE("apply_setpoints updates devices and rejects bad values") {
  FeederModel m = build_ieee34_modified();

  SECTION("tap write lands on the right regulator") {
    VvoSetpoints sp;
    sp.taps["VR1"] = 1;
    FeederModel out = apply_setpoints(m, sp);
    CHECK(out.regulator("VR1").tap == 1);
    CHECK(out.regulator("VR2").tap == 0);
  }
  SECTION("out-of-range tap is rejected, not clamped") {
    VvoSetpoints sp;
    sp.taps["VR1"] = m.regulators[0].tap_max + 1;
    CHECK_THROWS_AS(apply_setpoints(m, sp), ValidationError);
  }
  SECTION("unknown device id") {
    VvoSetpoints sp;
    sp.taps["VR9"] = 0;
    CHECK_THROWS_WITH(apply_setpoints(m, sp), Catch::Matchers::ContainsSubstring("VR9"));
  }
  SECTION("idempotent") {
    VvoSetpoints sp;
    sp.taps["VR1"] = 3;
    sp.taps["VR2"] = -2;
    sp.curves[34] = VoltVarCurve{0.92, 0.98, 1.02, 1.08, 0.4};
    FeederModel once = apply_setpoints(m, sp);
    FeederModel twice = apply_setpoints(once, sp);
    CHECK(once == twice);
  }
  SECTION("curve write validates") {
    VvoSetpoints sp;
    sp.curves[34] = VoltVarCurve{1.08, 0.98, 1.02, 0.92, 0.6};
    CHECK_THROWS_AS(apply_setpoints(m, sp), ValidationError);
  }
  SECTION("unknown inverter bus") {
    VvoSetpoints sp;
    sp.curves[7] = VoltVarCurve{};
    CHECK_THROWS_AS(apply_setpoints(m, sp), ValidationError);
  }
  SECTION("tap extremes map to the 0.9-1.1 ratio band") {
    const auto& vr = m.regulators[0];
    CHECK(vr.ratio_at(vr.tap_max) == Catch::Approx(1.1).margin(1e-12));
    CHECK(vr.ratio_at(vr.tap_min) == Catch::Approx(0.9).margin(1e-12));
  }
}

TEST_CASE("feeder JSON round-trip preserves the model") {
  FeederModel m = build_ieee34_modified();
  std::string path = temp_path("vvsim_feeder_roundtrip.json");
  save_feeder(m, path);
  FeederModel back = load_feeder(path);
  CHECK(back == m);
  std::remove(path.c_str());
}

TEST_CASE("feeder file parsing diagnoses errors") {
  SECTION("hand-written 3-bus fixture loads") {
    std::string path = temp_path("vvsim_tiny3.json");
    {
      std::ofstream out(path);
      out << R"({
        "name": "tiny3",
        "base_kv": 4.16,
        "s_base_mva": 1.0,
        "substation_bus": 1,
        "buses": [{"id": 1}, {"id": 2}, {"id": 3}],
        "lines": [{"from": 1, "to": 2, "r": 0.01, "x": 0.02},
                  {"from": 2, "to": 3, "r": 0.015, "x": 0.025}],
        "loads": [{"bus": 3, "p0_kw": 100.0, "q0_kvar": 50.0, "zip": [0.3, 0.4, 0.3]}]
      })";
    }
    FeederModel m = load_feeder(path);
    CHECK(m.buses.size() == 3);
    CHECK(m.loads.size() == 1);
    CHECK(m.meters.size() == 3);  // defaults to every bus
    CHECK(m.buses[0].v_min == 0.95);
    std::remove(path.c_str());
  }
  SECTION("missing field names the array slot") {
    std::string path = temp_path("vvsim_bad_field.json");
    {
      std::ofstream out(path);
      out << R"({"base_kv": 4.16, "substation_bus": 1,
                 "buses": [{"id": 1}, {"id": 2}],
                 "lines": [{"from": 1, "to": 2, "x": 0.02}]})";
    }
    CHECK_THROWS_WITH(load_feeder(path),
                      Catch::Matchers::ContainsSubstring("lines[0]") &&
                          Catch::Matchers::ContainsSubstring("'r'"));
    std::remove(path.c_str());
  }
  SECTION("zip sum violation on load") {
    std::string path = temp_path("vvsim_bad_zip.json");
    {
      std::ofstream out(path);
      out << R"({"base_kv": 4.16, "substation_bus": 1,
                 "buses": [{"id": 1}, {"id": 2}],
                 "lines": [{"from": 1, "to": 2, "r": 0.01, "x": 0.02}],
                 "loads": [{"bus": 2, "p0_kw": 10, "q0_kvar": 5, "zip": [0.5, 0.4, 0.3]}]})";
    }
    CHECK_THROWS_AS(load_feeder(path), ValidationError);
    std::remove(path.c_str());
  }
  SECTION("malformed JSON is a parse error naming the file") {
    std::string path = temp_path("vvsim_bad_json.json");
    {
      std::ofstream out(path);
      out << "{ not json";
    }
    CHECK_THROWS_AS(load_feeder(path), ParseError);
    std::remove(path.c_str());
  }
  SECTION("missing file") {
    CHECK_THROWS_AS(load_feeder("/nonexistent/feeder.json"), ParseError);
  }
}
