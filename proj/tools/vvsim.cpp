// Command-line front end: run scenarios, compare runs, replay capture logs
// and validate configuration files.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vvsim/cosim.hpp"
#include "vvsim/report.hpp"

namespace fs = std::filesystem;
using namespace vvsim;

namespace {

ScenarioReport load_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  return report_from_json(j);
}

void emit(const ScenarioReport& report, const std::string& format) {
  if (format == "json")
    std::cout << report_to_json(report).dump(2) << "\n";
  else if (format == "csv")
    std::cout << format_report_csv(report);
  else
    std::cout << format_report_text(report);
}

int cmd_run(const std::string& config, const std::string& out_dir,
            std::optional<uint64_t> seed, const std::string& format,
            const std::string& baseline_path) {
  ScenarioConfig cfg = load_scenario(config);
  if (seed) cfg.seed = *seed;

  Simulation sim(cfg);
  sim.run();
  ScenarioReport report = sim.report();
  if (!baseline_path.empty())
    compare_to_baseline(report, load_report(baseline_path));

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    // Referenced by basename: the files sit next to report.json, and keeping
    // the directory out of the report makes reruns byte-comparable.
    report.voltages_csv = "voltages.csv";
    report.events_csv = "events.csv";
    report.capture_log = "capture.jsonl";
    write_text_file((dir / report.voltages_csv).string(),
                    format_voltages_csv(sim.series()));
    write_text_file((dir / report.events_csv).string(),
                    format_events_csv(sim.series()));
    write_capture(sim.capture(), (dir / report.capture_log).string());
    write_text_file((dir / "report.json").string(),
                    report_to_json(report).dump(2) + "\n");
    write_text_file((dir / "report.txt").string(), format_report_text(report));
  }
  emit(report, format);
  return 0;
}

int cmd_compare(const std::string& run_path, const std::string& baseline_path,
                double lambda, const std::string& format) {
  ScenarioReport run = load_report(run_path);
  ScenarioReport base = load_report(baseline_path);
  compare_to_baseline(run, base);
  AttackScore score = attack_cost(run, base, lambda);
  if (format == "json") {
    nlohmann::ordered_json j;
    j["run"] = run.name;
    j["baseline"] = base.name;
    if (run.pct_energy_saved) j["pct_energy_saved"] = *run.pct_energy_saved;
    if (run.pct_voltage_reduction)
      j["pct_voltage_reduction"] = *run.pct_voltage_reduction;
    if (run.cvr_factor) j["cvr_factor"] = *run.cvr_factor;
    j["damage_usd"] = score.damage_usd;
    j["similarity"] = score.similarity;
    j["score"] = score.score;
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "Run " << run.name << " versus baseline " << base.name << "\n";
    if (run.pct_energy_saved)
      std::cout << "  energy saved        " << fmt_f(*run.pct_energy_saved, 4)
                << " %\n";
    if (run.pct_voltage_reduction)
      std::cout << "  voltage reduction   "
                << fmt_f(*run.pct_voltage_reduction, 4) << " %\n";
    if (run.cvr_factor)
      std::cout << "  CVR factor          " << fmt_f(*run.cvr_factor, 4) << "\n";
    std::cout << "  cost impact         $" << fmt_f(score.damage_usd, 2) << "\n"
              << "  mean perturbation   " << fmt_f(score.similarity, 4) << "\n"
              << "  attack score        " << fmt_f(score.score, 4)
              << "  (lambda " << fmt_g(lambda) << ")\n";
  }
  return 0;
}

int cmd_replay(const std::string& log_path, const std::string& format) {
  auto entries = load_capture(log_path);
  for (const auto& e : entries) {
    if (format == "json") {
      nlohmann::ordered_json j;
      j["t_us"] = e.t_us;
      j["event"] = e.event;
      j["station"] = e.station;
      j["from_master"] = e.from_master;
      j["datagram"] = e.datagram;
      j["summary"] = e.summary;
      if (!e.bytes.empty()) j["decoded"] = cosimdetail::describe_bytes(e.bytes);
      std::cout << j.dump() << "\n";
    } else {
      std::cout << render_capture_entry(e) << "\n";
    }
  }
  return 0;
}

int cmd_validate(const std::string& config) {
  ScenarioConfig cfg = load_scenario(config);
  FeederModel model = load_feeder(cfg.feeder_path);
  StepProfile load = load_profile(cfg.load_profile_path);
  if (!cfg.pv_profile_path.empty()) load_profile(cfg.pv_profile_path);
  std::cout << "ok: scenario " << cfg.name << "\n"
            << "  feeder        " << model.name << " (" << model.buses.size()
            << " buses, " << model.regulators.size() << " regulators, "
            << model.inverters.size() << " inverters)\n"
            << "  horizon       " << fmt_f(cfg.duration_s, 0) << " s, control "
            << fmt_f(cfg.control_period_s, 0) << " s, metering "
            << fmt_f(cfg.metering_period_s, 0) << " s\n"
            << "  load profile  " << load.steps().size() << " steps\n"
            << "  attacks       " << cfg.modp.size() << " modp, "
            << cfg.dos.size() << " dos\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Volt/VAR co-simulation over emulated DNP3"};
  app.require_subcommand(1);

  std::string config, out_dir, baseline, format = "text";
  std::optional<uint64_t> seed;
  double lambda = 1.0;
  std::string report_path, log_path;

  auto* run = app.add_subcommand("run", "execute a scenario and write artifacts");
  run->add_option("--config", config, "scenario JSON")->required();
  run->add_option("--out-dir", out_dir, "directory for reports and traces");
  run->add_option("--seed", seed, "override the scenario seed");
  run->add_option("--format", format, "text, json or csv")
      ->check(CLI::IsMember({"text", "json", "csv"}));
  run->add_option("--baseline", baseline, "baseline report.json to compare with");

  auto* cmp = app.add_subcommand("compare", "compare a run report with a baseline");
  cmp->add_option("report", report_path, "report.json of the run")->required();
  cmp->add_option("--baseline", baseline, "baseline report.json")->required();
  cmp->add_option("--lambda", lambda, "weight of perturbation visibility");
  cmp->add_option("--format", format, "text or json")
      ->check(CLI::IsMember({"text", "json"}));

  auto* rep = app.add_subcommand("replay-log", "re-decode a capture log");
  rep->add_option("log", log_path, "capture.jsonl from a run")->required();
  rep->add_option("--format", format, "text or json")
      ->check(CLI::IsMember({"text", "json"}));

  auto* val = app.add_subcommand("validate", "check a scenario without running it");
  val->add_option("--config", config, "scenario JSON")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config, out_dir, seed, format, baseline);
    if (cmp->parsed()) return cmd_compare(report_path, baseline, lambda, format);
    if (rep->parsed()) return cmd_replay(log_path, format);
    if (val->parsed()) return cmd_validate(config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
