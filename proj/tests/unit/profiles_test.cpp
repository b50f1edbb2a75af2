#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "vvsim/profiles.hpp"
#include "vvsim/util.hpp"

using namespace vvsim;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& body) {
  fs::path p = fs::temp_directory_path() / name;
  std::ofstream out(p);
  out << body;
  return p;
}

}  // namespace

TEST_CASE("step profile lookups are piecewise constant") {
  StepProfile p({{0.0, 0.45, "light"}, {25200.0, 0.90, "heavy"}, {79200.0, 0.50, "light"}});
  CHECK(p.value_at(0.0) == 0.45);
  CHECK(p.value_at(25199.9) == 0.45);
  CHECK(p.value_at(25200.0) == 0.90);
  CHECK(p.value_at(50000.0) == 0.90);
  CHECK(p.value_at(79200.0) == 0.50);
  CHECK(p.value_at(1e9) == 0.50);
  CHECK(p.label_at(0.0) == "light");
  CHECK(p.label_at(30000.0) == "heavy");

  // Before the first breakpoint the first step applies.
  CHECK(p.value_at(-5.0) == 0.45);

  // Distinct labels in first-appearance order, duplicates collapsed.
  CHECK(p.labels() == std::vector<std::string>{"light", "heavy"});
}

TEST_CASE("step times must increase strictly") {
  CHECK_THROWS_AS(StepProfile({{0.0, 1.0, "a"}, {0.0, 2.0, "b"}}), ValidationError);
  CHECK_THROWS_AS(StepProfile({{10.0, 1.0, "a"}, {5.0, 2.0, "b"}}), ValidationError);
  CHECK_NOTHROW(StepProfile({{0.0, 1.0, "a"}}));
  CHECK(StepProfile().empty());
}

TEST_CASE("profile files round trip") {
  StepProfile p({{0.0, 0.45, "light"}, {3600.0, 0.90, "heavy"}});
  fs::path path = fs::temp_directory_path() / "roundtrip_profile.csv";
  save_profile(p, path.string());
  StepProfile q = load_profile(path.string());
  REQUIRE(q.steps().size() == 2);
  CHECK(q.steps() == p.steps());
  fs::remove(path);
}

TEST_CASE("profile parser accepts headers and comments") {
  auto path = temp_file("profile_headers.csv",
                        "# daily shape\n"
                        "t_s,value,label\n"
                        "0,0.45,light\n"
                        "\n"
                        "3600, 0.9 , heavy\n");
  StepProfile p = load_profile(path.string());
  REQUIRE(p.steps().size() == 2);
  CHECK(p.steps()[1].t_s == 3600.0);
  CHECK(p.steps()[1].value == 0.9);
  CHECK(p.steps()[1].label == "heavy");
  fs::remove(path);
}

TEST_CASE("profile parser reports the offending line") {
  auto path = temp_file("profile_bad.csv",
                        "t_s,value,label\n"
                        "0,0.45,light\n"
                        "oops,0.9,heavy\n");
  try {
    load_profile(path.string());
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(":3:") != std::string::npos);
  }
  fs::remove(path);

  auto missing = temp_file("profile_short.csv", "0\n");
  CHECK_THROWS_AS(load_profile(missing.string()), ParseError);
  fs::remove(missing);

  CHECK_THROWS_AS(load_profile("/nonexistent/profile.csv"), ParseError);
}
