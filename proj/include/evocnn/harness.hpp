#pragma once

// Orchestration behind the CLI: execute a configured evolution run with CSV
// log, checkpoints and final report, or summarize a saved genome checkpoint.

#include <cstddef>
#include <string>

#include "evocnn/run_config.hpp"

namespace evocnn {

// Exit codes shared by the harness entry points and the CLI.
inline constexpr int kExitOk = 0;
inline constexpr int kExitBadConfig = 2;
inline constexpr int kExitMissingData = 3;

// Loads the pooled corpus for cfg.dataset, applies the optional stratified
// subsample, and splits it 75/10/15 with the run seed.
DatasetSplit prepare_data(const RunConfig& cfg);

// Renders result.log as CSV (header + g_max + 1 rows).
std::string run_log_csv(const RunResult& result);

// Full run: config -> data -> run_evolution -> out_dir/{effective_config.txt,
// run_log.csv, gen_*.genome checkpoints, best.genome, report.txt}. Errors are
// printed to stderr; the return value is the process exit code.
int run(const std::string& config_path);

// Loads a genome checkpoint, evaluates it on the validation split in the
// requested numeric mode, and prints accuracy, parameter count, the layer
// summary, and the multiplication-energy reduction vs baseline_params
// (0 = use the genome's own parameter count).
int report(const std::string& checkpoint_path, const std::string& dataset,
           const std::string& data_dir, const NumericMode& mode, std::size_t baseline_params,
           uint64_t seed, long long subsample_n);

} // namespace evocnn
