#pragma once

// Run configuration: a flat key=value text file in which every parameter of
// a run is spelled out. Loading starts from the per-dataset defaults and
// applies overrides; dumping writes the complete effective configuration so
// a run can be audited and reproduced from its own output.

#include <cstdint>
#include <string>

#include "evocnn/evolution.hpp"

namespace evocnn {

struct RunConfig {
    std::string dataset = "mnist";  // mnist | cifar10
    std::string data_dir = "data/mnist";
    std::string out_dir = "out";
    // 0 keeps the full corpus; otherwise a stratified subsample of this many
    // images is drawn from the pooled corpus before the train/test/val split.
    long long subsample_n = 0;
    int checkpoint_every = 5;       // 0 disables periodic checkpoints
    std::string seed_genome_path;   // empty = start from random genomes
    EvolutionConfig evo;            // includes seed and the scoring mode
};

// "fp", "fx16", or "fx(N,F)" with N total and F fractional bits.
NumericMode parse_numeric_mode(const std::string& text);
std::string numeric_mode_string(const NumericMode& mode);

// Defaults for a dataset: mnist or cifar10. Unknown names are a config error.
RunConfig default_run_config(const std::string& dataset);

// Complete key=value rendering of cfg; parse_run_config inverts it exactly.
std::string dump_run_config(const RunConfig& cfg);

// Parses config text. Keys may appear in any order; `dataset` is applied
// first so the remaining keys override that dataset's defaults. Unknown keys
// and malformed values are config errors.
RunConfig parse_run_config(const std::string& text);

RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& cfg, const std::string& path);

} // namespace evocnn
