#pragma once

#include <string>
#include <vector>

#include "ammsm/runconfig.hpp"

// CLI workflows. Each command throws ConfigError/FormatError for rejected
// input (exit code 2) and other ammsm::Error/std exceptions for runtime
// failures (exit code 1); run_command maps exceptions to exit codes.

namespace ammsm {

// Generates the configured synthetic dataset into config.dataset_dir.
void cmd_synth(const RunConfig& config);

// Full LOSO pipeline; writes report.json, confusion.csv, and per-fold
// artifacts under config.output_dir.
void cmd_run(const RunConfig& config);

// FLOP/latency bench over the configured sparsity variants; writes
// bench.json and bench.csv under config.output_dir.
void cmd_bench(const RunConfig& config);

// Evaluates a saved fold checkpoint over the configured dataset; writes
// eval.json under config.output_dir.
void cmd_eval(const RunConfig& config, const std::string& checkpoint_path);

// Parses the config, applies overrides, dispatches, and maps exceptions to
// exit codes (0 ok, 1 runtime failure, 2 configuration/validation failure).
int run_command(const std::string& command, const std::string& config_path,
                const std::vector<std::string>& overrides, const std::string& checkpoint_path = "");

}  // namespace ammsm
