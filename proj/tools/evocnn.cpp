// Command-line front end: `evolve` runs a configured evolutionary search,
// `report` summarizes a saved genome checkpoint, `energy` prints the
// multiplication-energy reduction estimate for a parameter-count pair.

#include <cstdint>
#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "evocnn/energy.hpp"
#include "evocnn/harness.hpp"

int main(int argc, char** argv) {
    CLI::App app{"evolutionary search over CNN architectures with "
                 "fixed-point-aware inference"};
    app.require_subcommand(1);

    std::string config_path;
    auto* evolve = app.add_subcommand("evolve", "run a configured evolution");
    evolve->add_option("--config", config_path, "run configuration file")->required();

    std::string checkpoint_path;
    std::string dataset = "mnist";
    std::string data_dir;
    std::string mode_text = "fp";
    std::size_t baseline_params = 0;
    uint64_t seed = 1;
    long long subsample_n = 0;
    auto* report = app.add_subcommand("report", "evaluate and describe a genome checkpoint");
    report->add_option("--checkpoint", checkpoint_path, "genome checkpoint file")->required();
    report->add_option("--dataset", dataset, "mnist or cifar10");
    report->add_option("--data-dir", data_dir, "dataset directory (default per dataset)");
    report->add_option("--mode", mode_text, "numeric mode: fp, fx16 or fx(N,F)");
    report->add_option("--baseline-params", baseline_params,
                       "reference parameter count for the energy reduction (0 = own)");
    report->add_option("--seed", seed, "seed that produced the data split");
    report->add_option("--subsample", subsample_n,
                       "stratified subsample size used by the run (0 = full corpus)");

    std::size_t par_orig = 0;
    std::size_t par_red = 0;
    std::string energy_mode_text = "fp";
    auto* energy = app.add_subcommand("energy", "multiplication-energy reduction estimate");
    energy->add_option("--orig", par_orig, "parameter count of the original network")
        ->required();
    energy->add_option("--red", par_red, "parameter count of the reduced network")->required();
    energy->add_option("--mode", energy_mode_text, "numeric mode: fp, fx16 or fx(N,F)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : evocnn::kExitBadConfig;
    }

    try {
        if (evolve->parsed()) {
            return evocnn::run(config_path);
        }
        if (report->parsed()) {
            if (data_dir.empty()) data_dir = "data/" + dataset;
            return evocnn::report(checkpoint_path, dataset, data_dir,
                                  evocnn::parse_numeric_mode(mode_text), baseline_params, seed,
                                  subsample_n);
        }
        const double reduction = evocnn::estimate_emult_reduction(
            par_orig, par_red, evocnn::parse_numeric_mode(energy_mode_text));
        std::printf("emult_reduction = %.4f\n", reduction);
        return evocnn::kExitOk;
    } catch (const evocnn::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return evocnn::kExitBadConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return evocnn::kExitMissingData;
    }
}
