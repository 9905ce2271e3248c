#include "evocnn/harness.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "evocnn/energy.hpp"
#include "evocnn/errors.hpp"

namespace evocnn {

namespace {

LabeledImageSet load_corpus(const std::string& dataset, const std::string& data_dir) {
    if (dataset == "mnist") return load_mnist(data_dir);
    if (dataset == "cifar10") return load_cifar10(data_dir);
    throw ConfigError("dataset must be mnist or cifar10, got '" + dataset + "'");
}

std::vector<int> image_shape(const LabeledImageSet& set) {
    return {set.images.dim(1), set.images.dim(2), set.images.dim(3)};
}

std::string checkpoint_path(const std::string& out_dir, int generation) {
    char name[32];
    std::snprintf(name, sizeof(name), "gen_%04d.genome", generation);
    return (std::filesystem::path(out_dir) / name).string();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << content;
    if (!out) throw DataError("failed writing " + path);
}

const ScoredGenome& population_best(const Population& pop) {
    const ScoredGenome* best = &pop.members[0];
    for (const auto& m : pop.members) {
        const bool better = m.fitness > best->fitness ||
                            (m.fitness == best->fitness && m.accuracy > best->accuracy) ||
                            (m.fitness == best->fitness && m.accuracy == best->accuracy &&
                             m.genome.header.id < best->genome.header.id);
        if (better) best = &m;
    }
    return *best;
}

} // namespace

DatasetSplit prepare_data(const RunConfig& cfg) {
    LabeledImageSet pooled = load_corpus(cfg.dataset, cfg.data_dir);
    if (cfg.subsample_n > 0) {
        pooled = subsample(pooled, static_cast<int>(cfg.subsample_n), cfg.evo.seed);
    }
    return split(pooled, cfg.evo.seed);
}

std::string run_log_csv(const RunResult& result) {
    std::ostringstream out;
    out << "generation,best_fitness,mean_fitness,best_accuracy,best_params,best_depth,"
           "wallclock_s\n";
    char line[256];
    for (const auto& row : result.log) {
        std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g,%zu,%d,%.3f\n", row.generation,
                      row.best_fitness, row.mean_fitness, row.best_accuracy, row.best_params,
                      row.best_depth, row.wallclock_s);
        out << line;
    }
    return out.str();
}

int run(const std::string& config_path) {
    RunConfig cfg;
    try {
        cfg = load_run_config(config_path);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitBadConfig;
    }

    DatasetSplit data;
    std::vector<Genome> seeds;
    try {
        data = prepare_data(cfg);
        if (!cfg.seed_genome_path.empty()) {
            seeds.push_back(load_genome(cfg.seed_genome_path));
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitBadConfig;
    } catch (const std::runtime_error& e) {  // DataError, FormatError
        std::cerr << "data error: " << e.what() << "\n";
        return kExitMissingData;
    }

    try {
        std::filesystem::create_directories(cfg.out_dir);
        save_run_config(cfg, (std::filesystem::path(cfg.out_dir) / "effective_config.txt")
                                 .string());

        const auto out_path = [&cfg](const char* name) {
            return (std::filesystem::path(cfg.out_dir) / name).string();
        };
        GenerationCallback checkpoint = [&](int gen, const Population& pop) {
            const bool periodic = cfg.checkpoint_every > 0 && gen % cfg.checkpoint_every == 0;
            if (!periodic && gen != cfg.evo.g_max) return;
            save_genome(population_best(pop).genome, checkpoint_path(cfg.out_dir, gen));
        };

        const RunResult result = run_evolution(cfg.evo, data, seeds, checkpoint);
        write_text_file(out_path("run_log.csv"), run_log_csv(result));
        save_genome(result.best.genome, out_path("best.genome"));

        std::ostringstream report;
        char line[256];
        std::snprintf(line, sizeof(line), "best_val_accuracy = %.6f\n",
                      result.final_val_accuracy);
        report << line;
        std::snprintf(line, sizeof(line), "best_test_accuracy = %.6f\n", result.best.accuracy);
        report << line;
        report << "best_params = " << result.best.param_count << "\n";
        report << "best_depth = " << result.best.genome.genes.size() << "\n";
        std::snprintf(line, sizeof(line), "best_fitness = %.6f\n", result.best.fitness);
        report << line;
        report << "baseline_params = " << result.baseline_params << "\n";
        std::snprintf(line, sizeof(line), "emult_reduction_vs_baseline = %.4f\n",
                      estimate_emult_reduction(result.baseline_params, result.best.param_count,
                                               cfg.evo.eval_mode));
        report << line;
        write_text_file(out_path("report.txt"), report.str());
        std::cout << report.str();
        return kExitOk;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitBadConfig;
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitMissingData;
    }
}

int report(const std::string& checkpoint_path, const std::string& dataset,
           const std::string& data_dir, const NumericMode& mode, std::size_t baseline_params,
           uint64_t seed, long long subsample_n) {
    try {
        const Genome g = load_genome(checkpoint_path);

        RunConfig cfg = default_run_config(dataset);
        cfg.data_dir = data_dir;
        cfg.evo.seed = seed;
        cfg.subsample_n = subsample_n;
        const DatasetSplit data = prepare_data(cfg);
        const std::vector<int> shape = image_shape(data.val);

        Network net = build_phenotype(g, shape, cfg.evo.num_classes);
        const double accuracy = net.evaluate_accuracy(data.val.images, data.val.labels, mode);
        const std::size_t params = count_params(g, shape, cfg.evo.num_classes);
        if (baseline_params == 0) baseline_params = params;

        std::printf("checkpoint: %s\n", checkpoint_path.c_str());
        std::printf("%s", genome_summary(g, shape, cfg.evo.num_classes).c_str());
        std::printf("val_accuracy (%s) = %.6f\n", numeric_mode_string(mode).c_str(), accuracy);
        std::printf("params = %zu\n", params);
        std::printf("emult_reduction vs %zu params = %.4f\n", baseline_params,
                    estimate_emult_reduction(baseline_params, params, mode));
        return kExitOk;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitBadConfig;
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitMissingData;
    }
}

} // namespace evocnn
