// Command-line front end: run, place, compare and validate scenarios.

#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "nps/core/error.hpp"
#include "nps/harness/scenario.hpp"
#include "nps/harness/simulator.hpp"

namespace {

using namespace nps;

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kRuntime = 2;

void write_out(const std::string& text, const std::string& path) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + path);
  out << text;
}

void print_plan(const std::vector<sim::PlannedInstance>& plan) {
  for (const auto& p : plan) {
    const auto& inst = p.instance;
    std::cout << "instance " << inst.id << " (sub " << inst.sub_id << ", model " << inst.model_id
              << ", domain " << p.domain << ")\n";
    for (const auto& s : inst.pipeline.stages)
      std::cout << "  " << s.id << " -> " << inst.placement.assignment.at(s.id) << "\n";
    std::cout << "  latency_ms " << p.cost.latency_ms.to_double() << "\n"
              << "  bytes_kb " << p.cost.bytes_kb.to_double() << "\n"
              << "  objective " << p.cost.objective_value.to_double() << "\n"
              << "  feasible " << (p.cost.feasible ? "yes" : "no") << "\n";
    for (const auto& v : p.cost.violations)
      std::cout << "  violation " << place::to_string(v.rule) << " " << v.subject << ": " << v.detail << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pipeline placement and pub/sub simulator"};
  app.set_version_flag("--version", std::string("nps ") + NPS_VERSION);
  app.require_subcommand(1);

  std::string scenario_path;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out_path;
  std::string format = "json";
  std::string algorithm = "upstream";

  auto* run_cmd = app.add_subcommand("run", "Simulate a scenario and print its metrics");
  run_cmd->add_option("--scenario", scenario_path, "Scenario file")->required();
  run_cmd->add_option("--seed", seed, "Seed (default: the scenario's)")->each([&](const std::string&) {
    seed_given = true;
  });
  run_cmd->add_option("--out", out_path, "Write the report here instead of stdout");
  run_cmd->add_option("--format", format, "json or csv")->check(CLI::IsMember({"json", "csv"}));

  auto* place_cmd = app.add_subcommand("place", "Print the placement of every inference subscription");
  place_cmd->add_option("--scenario", scenario_path, "Scenario file")->required();
  place_cmd->add_option("--algorithm", algorithm, "oracle, upstream or baseline")
      ->check(CLI::IsMember({"oracle", "upstream", "baseline"}));

  auto* compare_cmd = app.add_subcommand("compare", "Run once per placement policy and print both reports");
  compare_cmd->add_option("--scenario", scenario_path, "Scenario file")->required();
  compare_cmd->add_option("--seed", seed, "Seed (default: the scenario's)")->each([&](const std::string&) {
    seed_given = true;
  });

  auto* validate_cmd = app.add_subcommand("validate", "Check a scenario file");
  validate_cmd->add_option("--scenario", scenario_path, "Scenario file")->required();

  CLI11_PARSE(app, argc, argv);

  sim::Scenario sc;
  try {
    sc = sim::load_scenario_file(scenario_path);
  } catch (const ParseError& e) {
    std::cerr << scenario_path << ": " << e.what() << "\n";
    return kInvalid;
  } catch (const ValidationError& e) {
    std::cerr << scenario_path << ": " << e.what() << "\n";
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return kRuntime;
  }

  try {
    if (*validate_cmd) {
      std::cout << scenario_path << ": ok\n";
    } else if (*run_cmd) {
      const auto report = sim::run(sc, seed_given ? seed : sc.sim.seed);
      write_out(sim::emit(report, sim::parse_format(format)), out_path);
    } else if (*place_cmd) {
      print_plan(sim::plan(sc, sim::parse_policy(algorithm)));
    } else if (*compare_cmd) {
      const auto c = sim::compare(sc, seed_given ? seed : sc.sim.seed);
      std::cout << "{\"upstream\":\n" << sim::to_json(c.upstream) << ",\"baseline\":\n"
                << sim::to_json(c.baseline) << "}\n";
      std::cerr << "link KB: upstream " << static_cast<double>(c.upstream.totals.link_bytes) / 1000.0
                << ", baseline " << static_cast<double>(c.baseline.totals.link_bytes) / 1000.0 << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}
