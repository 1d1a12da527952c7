// Batch runner for the named scenarios and JSON configs.
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "avalanche/scenario.hpp"

namespace {

void report_error(const char* error_class, const std::string& message) {
  avalanche::ordered_json j{{"error", error_class}, {"message", message}};
  std::cerr << j.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rydberg-chain THz detector simulator"};
  app.require_subcommand(1);

  auto* list = app.add_subcommand("list", "List the built-in scenarios");
  auto* run = app.add_subcommand("run", "Run a scenario or a JSON config file");
  std::string target;
  std::vector<std::string> overrides;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool strict = false;
  run->add_option("scenario", target, "Scenario name or path to a config file")->required();
  run->add_option("--override,-o", overrides, "key=value, applied after the scenario/config");
  run->add_option("--out", out_dir, "Output directory");
  run->add_option("--seed", seed, "Master seed (unsigned 64-bit)");
  run->add_option("--threads,-j", threads, "Worker threads for jobs and trajectories")->check(CLI::PositiveNumber);
  run->add_flag("--strict", strict, "Exit with status 3 on physics-quality problems");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : avalanche::kExitConfig;
  }

  if (*list) {
    for (const auto& name : avalanche::preset_names()) std::cout << name << "\n";
    return 0;
  }

  avalanche::RunConfig cfg;
  try {
    if (out_dir) overrides.push_back("output_dir=" + avalanche::ordered_json(*out_dir).dump());
    if (seed) overrides.push_back("seed=" + std::to_string(*seed));
    if (threads) overrides.push_back("threads=" + std::to_string(*threads));
    cfg = avalanche::load_run_config(target, overrides);
  } catch (const avalanche::ConfigError& e) {
    report_error("config", e.what());
    return avalanche::kExitConfig;
  }

  try {
    const auto outcome = avalanche::run_scenario(cfg, strict, cfg.protocol.trajectories.n_threads);
    for (const auto& job : outcome.jobs) {
      std::cout << job.label << ": ";
      if (job.result.summary)
        std::cout << "T_a=" << job.result.summary->t_a << " S_max=" << job.result.summary->s_max
                  << " velocity=" << job.result.summary->velocity;
      else
        std::cout << job.result.summary_error;
      std::cout << " -> " << job.dir.string() << "\n";
      for (const auto& issue : job.quality_issues) std::cerr << "quality: " << issue << "\n";
    }
    if (outcome.exit_code == avalanche::kExitQuality) report_error("quality", "physics-quality check failed");
    return outcome.exit_code;
  } catch (const avalanche::ConfigError& e) {
    report_error("config", e.what());
    return avalanche::kExitConfig;
  } catch (const std::exception& e) {
    report_error("runtime", e.what());
    return avalanche::kExitRuntime;
  }
}
