#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "pmaint/pmaint.hpp"

namespace fs = std::filesystem;
using namespace pmaint;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitIntegrity = 3;

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::validation, "cannot write " + path.string());
  out << text;
}

std::vector<EventRecord> load_log(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::validation, "cannot open log " + path.string());
  return read_event_log(in);
}

Scenario scenario_with_seed(const std::string& path, const std::optional<std::uint64_t>& seed) {
  Scenario s = load_scenario(path);
  if (seed) s.seed = *seed;
  return s;
}

int cmd_run(const std::string& scenario_path, std::optional<std::uint64_t> seed, const fs::path& out_dir,
            bool deterministic, bool baseline, bool csv) {
  const Scenario s = scenario_with_seed(scenario_path, seed);
  RunResult r = run(s, {baseline, !deterministic});
  fs::create_directories(out_dir);
  const auto log_path = out_dir / "events.jsonl";
  {
    std::ostringstream log;
    for (const auto& e : r.log) log << record_to_json(e).dump() << '\n';
    write_file(log_path, log.str());
  }
  {
    std::ostringstream raw;
    for (const auto& f : r.raw_store.normal) raw << ojson{{"kind", "normal"}, {"frame", frame_to_json(f)}}.dump() << '\n';
    for (const auto& [id, frames] : r.raw_store.by_report)
      for (const auto& f : frames) raw << ojson{{"kind", "report"}, {"report_id", id}, {"frame", frame_to_json(f)}}.dump() << '\n';
    write_file(out_dir / "raw_store.jsonl", raw.str());
  }
  r.report.event_log_path = log_path.string();
  write_file(out_dir / "report.json", report_to_json(r.report).dump(2) + "\n");
  if (csv) write_file(out_dir / "report.csv", report_to_csv(r.report));
  std::cout << report_to_json(r.report).dump(2) << '\n';
  return 0;
}

int cmd_replay(const fs::path& log_path) {
  const auto log = load_log(log_path);
  auto report = compute_metrics(log);
  report.event_log_path = log_path.string();
  const Views views = EventStore::fold(log);
  std::cout << ojson{{"events", log.size()}, {"views", views.all_views()}, {"report", report_to_json(report)}}.dump(2)
            << '\n';
  return 0;
}

int cmd_report(const fs::path& log_path, const std::string& format) {
  auto report = compute_metrics(load_log(log_path));
  report.event_log_path = log_path.string();
  if (format == "csv") std::cout << report_to_csv(report);
  else std::cout << report_to_json(report).dump(2) << '\n';
  return 0;
}

int cmd_compare(const std::string& scenario_path, std::optional<std::uint64_t> seed) {
  const auto c = compare_baseline(scenario_with_seed(scenario_path, seed));
  ojson out{{"platform", report_to_json(c.platform)}, {"baseline", report_to_json(c.baseline)}};
  out["platform_better"] = c.platform.delayed_service_rate && c.baseline.delayed_service_rate &&
                           *c.platform.delayed_service_rate < *c.baseline.delayed_service_rate;
  std::cout << out.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pmaint: predictive maintenance pipeline simulator"};
  app.require_subcommand(1);

  std::string scenario_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  bool deterministic = false;
  bool baseline = false;
  bool csv = false;
  auto* run_cmd = app.add_subcommand("run", "Run a scenario end to end");
  run_cmd->add_option("--scenario", scenario_path, "Scenario JSON file")->required();
  run_cmd->add_option("--seed", seed, "Override the scenario seed");
  run_cmd->add_option("--out", out_dir, "Output directory")->capture_default_str();
  run_cmd->add_flag("--deterministic", deterministic, "Single-threaded gateway ingestion");
  run_cmd->add_flag("--baseline", baseline, "Inspection-at-arrival mode (no platform)");
  run_cmd->add_flag("--csv", csv, "Also write report.csv");

  std::string log_path;
  auto* replay_cmd = app.add_subcommand("replay", "Rebuild views and metrics from an event log");
  replay_cmd->add_option("--log", log_path, "events.jsonl")->required();

  std::string format = "json";
  auto* report_cmd = app.add_subcommand("report", "Print metrics for an event log");
  report_cmd->add_option("--log", log_path, "events.jsonl")->required();
  report_cmd->add_option("--format", format, "json or csv")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();

  auto* compare_cmd = app.add_subcommand("compare", "Platform vs arrival-inspection baseline");
  compare_cmd->add_option("--scenario", scenario_path, "Scenario JSON file")->required();
  compare_cmd->add_option("--seed", seed, "Override the scenario seed");

  FleetParams fleet;
  std::string fleet_out;
  auto* fleet_cmd = app.add_subcommand("fleet", "Write a synthetic fleet scenario");
  fleet_cmd->add_option("--out", fleet_out, "Scenario file to write")->required();
  fleet_cmd->add_option("--vehicles", fleet.vehicles)->capture_default_str();
  fleet_cmd->add_option("--failures", fleet.failures)->capture_default_str();
  fleet_cmd->add_option("--seed", fleet.seed)->capture_default_str();
  fleet_cmd->add_option("--spike-sigma", fleet.spike_sigma)->capture_default_str();
  fleet_cmd->add_option("--print-minutes", fleet.print_minutes)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*run_cmd) return cmd_run(scenario_path, seed, out_dir, deterministic, baseline, csv);
    if (*replay_cmd) return cmd_replay(log_path);
    if (*report_cmd) return cmd_report(log_path, format);
    if (*compare_cmd) return cmd_compare(scenario_path, seed);
    if (*fleet_cmd) {
      write_file(fleet_out, scenario_to_json(make_fleet_scenario(fleet)).dump(2) + "\n");
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.kind() == ErrorKind::integrity ? kExitIntegrity : kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
