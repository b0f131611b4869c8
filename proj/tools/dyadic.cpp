// Command-line front end: dyadic <subcommand> [--config FILE] [--set key=value]...

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dyadic/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Simulation and verification toolkit for the stochastic dyadic model"};
  app.set_version_flag("--version", std::string(dyadic::kVersion));
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> assignments;
  std::string output;
  std::optional<std::uint64_t> seed;
  unsigned workers = 1;
  std::vector<std::string> formats;

  for (const auto& name : dyadic::cli::subcommands()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("-c,--config", config_path, "config file (key = value text, or JSON / manifest.json)");
    sub->add_option("-s,--set", assignments, "override a config key, e.g. --set run.N=12")->allow_extra_args(false);
    sub->add_option("-o,--output", output, "output directory (beats " + std::string(dyadic::cli::kOutputEnv) + ")");
    sub->add_option("--seed", seed, "64-bit master seed");
    sub->add_option("-j,--workers", workers, "worker threads; never changes results")->check(CLI::PositiveNumber);
    sub->add_option("--formats", formats, "subset of {csv, jsonl}")->delimiter(',');
  }

  CLI11_PARSE(app, argc, argv);
  const std::string name = app.get_subcommands().front()->get_name();

  try {
    if (seed) assignments.push_back("seed=" + std::to_string(*seed));
    if (!formats.empty()) {
      nlohmann::json f = formats;
      assignments.push_back("formats=" + f.dump());
    }
    const auto cfg = dyadic::cli::assemble_config(
        config_path.empty() ? std::nullopt : std::optional<std::filesystem::path>(config_path), assignments,
        output.empty() ? std::nullopt : std::optional<std::string>(output), std::getenv(dyadic::cli::kOutputEnv));
    return dyadic::cli::run(name, cfg, workers, std::cout, std::cerr).exit_code;
  } catch (const dyadic::Error& e) {
    std::cerr << dyadic::cli::error_record(e).dump() << "\n";
    return dyadic::exit_code(e.kind());
  }
}
