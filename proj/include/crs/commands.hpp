#pragma once

#include <optional>
#include <string>
#include <vector>

namespace crs {

/// Parsed command-line options shared by all subcommands.
struct CliOptions {
  std::string config_path;
  std::string out_dir;                 // --out override
  std::optional<uint64_t> seed;        // --seed override
  std::vector<uint64_t> seeds;         // --seeds list (multi-run)
  bool quiet = false;

  std::string checkpoint;              // analyze
  std::string dump;                    // analyze --dump
  bool table = false;                  // cost --table
  std::vector<std::string> table_configs;
  std::string axis;                    // sweep
  int t_steps = 5;                     // toy
  bool paper_scale = false;            // sweep escape hatch
};

int cmd_train(const CliOptions& opts);
int cmd_analyze(const CliOptions& opts);
int cmd_cost(const CliOptions& opts);
int cmd_sweep(const CliOptions& opts);
int cmd_toy(const CliOptions& opts);

/// Full argv-style entry point (excluding the program name).
/// Exit codes: 0 ok, 1 runtime failure, 2 config/usage error.
int run_cli(const std::vector<std::string>& args);

}  // namespace crs
