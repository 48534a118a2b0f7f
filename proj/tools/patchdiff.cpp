#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "patchdiff/harness.hpp"

using namespace patchdiff;

namespace {

std::string experiment_list() {
  std::string s;
  for (const auto& [e, name] : kExperimentNames) s += (s.empty() ? "" : ", ") + std::string(name);
  return s;
}

void report(const RunManifest& man) {
  for (const auto& c : man.checks)
    std::printf("%-24s %s  %s\n", c.name.c_str(), c.passed ? "PASS" : "FAIL", c.detail.c_str());
  if (!man.error.empty()) std::fprintf(stderr, "patchdiff: %s\n", man.error.c_str());
  std::printf("status: %s\n", std::string(status_name(man.status)).c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wright-Fisher metacommunity experiments", "patchdiff"};
  app.set_version_flag("--version", std::string(kVersion));
  std::string experiment, config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> reps;
  std::string out_dir = ".";
  int workers = default_workers();
  app.add_option("experiment", experiment, "One of: " + experiment_list())->required();
  app.add_option("--config", config_path, "JSON configuration file")->required();
  app.add_option("--seed", seed, "Master seed (overrides the configuration)");
  app.add_option("--reps", reps, "Replicate count (overrides params.reps)");
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--workers", workers, std::string("Worker threads (default from ") + kWorkersEnv + ")")
      ->check(CLI::PositiveNumber);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  const auto which = parse_experiment(experiment);
  if (!which) {
    std::fprintf(stderr, "patchdiff: unknown experiment '%s' (expected %s)\n", experiment.c_str(),
                 experiment_list().c_str());
    return 2;
  }

  RunResult result;
  try {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot read configuration " + config_path);
    std::stringstream text;
    text << in.rdbuf();
    const auto cfg = load_config_text(*which, text.str(), {seed, reps, out_dir});
    result = run_experiment(cfg, workers);
  } catch (const ConfigError& e) {
    result.manifest.experiment = std::string(experiment_name(*which));
    result.manifest.master_seed = seed.value_or(0);
    result.manifest.config = {{"config_path", config_path}};
    result.manifest.status = RunStatus::UsageError;
    result.manifest.error = e.what();
  }

  try {
    const auto path = emit_report(result, out_dir);
    std::printf("manifest: %s\n", path.string().c_str());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "patchdiff: %s\n", e.what());
    report(result.manifest);
    return 1;
  }
  report(result.manifest);
  return exit_code(result.manifest.status);
}
