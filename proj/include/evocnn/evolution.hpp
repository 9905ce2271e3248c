#pragma once

// The evolutionary loop: two-member tournament selection, one-point
// crossover, six mutation operators, training-in-the-loop scoring, and
// age-based speciation replacement. Candidate order and all RNG streams are
// derived from the run seed, so parallel and serial evaluation of a
// generation produce identical populations.

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "evocnn/dataset.hpp"
#include "evocnn/genome.hpp"
#include "evocnn/layers.hpp"
#include "evocnn/network.hpp"

namespace evocnn {

struct EvolutionConfig {
    int g_max = 20;
    int pop_size = 8;
    double p_cross = 0.35;
    double p_mut = 0.7;
    int age_max = 4;  // typical setup: pop_size / 2, at least 1
    // Probability of picking each mutation operator MO1..MO6:
    // weight reset, add layer, remove layer, modify layer, modify FC width,
    // modify learning rate.
    std::vector<double> mo_probs = {0.41, 0.07, 0.03, 0.29, 0.10, 0.10};
    double k = 0.5;       // size-pressure weight in the fitness function
    double a_min = 0.80;  // accuracy floor below which fitness is zero
    uint64_t seed = 1;
    GenomeBounds bounds;
    int batch_size = 32;
    int epochs_per_training = 1;
    int num_classes = 10;
    NumericMode eval_mode = NumericMode::fp();  // scoring mode; training is always fp
    bool parallel_candidates = true;
};

struct ScoredGenome {
    Genome genome;
    double fitness = 0.0;
    double accuracy = 0.0;
    std::size_t param_count = 0;
    double s_rel = 0.0;
    bool diverged = false;
};

struct Population {
    std::vector<ScoredGenome> members;
    std::size_t baseline_params = 0;  // params of the best initial network, fixes s_rel
};

struct GenerationStats {
    int generation = 0;  // 0 is the evaluated initial population
    double best_fitness = 0.0;
    double mean_fitness = 0.0;
    double best_accuracy = 0.0;
    std::size_t best_params = 0;
    int best_depth = 0;  // gene count of the best member
    double wallclock_s = 0.0;  // measured, excluded from determinism comparisons
};

struct RunResult {
    ScoredGenome best;  // best of the final population
    std::vector<GenerationStats> log;  // g_max + 1 rows
    std::size_t baseline_params = 0;
    double initial_best_val_accuracy = 0.0;
    double final_val_accuracy = 0.0;
};

// Accuracy-size scalarization: a * (k / ln(s_rel + 1) + 1) when a >= a_min,
// else 0, with s_rel = param_count / baseline_params.
double fitness(double accuracy, std::size_t param_count, std::size_t baseline_params, double k,
               double a_min);

// Two distinct members drawn uniformly; higher fitness wins, ties to the
// lower genome id. A single-member population returns that member.
const ScoredGenome& tournament_select(const Population& pop, Rng& rng);

// One-point crossover: with probability p_cross, cut positions are drawn in
// [0, len] of each parent and tails are swapped (head lr with head parent,
// FC tail with tail parent); otherwise the offspring are plain copies.
// `crossed` reports whether the exchange fired. Offspring are repaired.
std::pair<Genome, Genome> crossover(const Genome& a, const Genome& b, double p_cross, Rng& rng,
                                    const std::vector<int>& input_shape,
                                    const GenomeBounds& bounds, bool& crossed);

// Draws one mutation operator index (0-based MO1..MO6) from mo_probs.
int sample_mutation_op(const std::vector<double>& mo_probs, Rng& rng);

// With probability p_mut applies exactly one mutation operator and repairs
// the result. Returns the operator index applied, or -1 when the gate did
// not fire. MO3 on an empty gene list falls back to MO2.
int mutate(Genome& g, const EvolutionConfig& cfg, const std::vector<int>& input_shape, Rng& rng);

// Age increment after a training pass (capped at age_max), then reset to 0
// if the individual was changed by crossover/mutation and its fitness fell
// below the best parent's.
void update_age(ScoredGenome& sg, bool structurally_changed, double parent_fitness, int age_max);

// New population from parents plus offspring: group by age, keep the top
// floor(pop_size / levels) of each age level by fitness, then fill the
// remaining slots with the globally best unselected individuals.
Population replace_with_speciation(const Population& p, const std::vector<ScoredGenome>& q,
                                   int pop_size);

using GenerationCallback = std::function<void(int generation, const Population&)>;

// Runs the full loop: initial population (random, or seed genomes plus
// single-mutation variants of the first seed), initial scoring on D_test,
// then g_max generations of select → crossover → mutate → train one epoch on
// shuffled D_train → score on D_test → age update → speciation replacement.
// The best member of the final population is evaluated on D_val.
RunResult run_evolution(const EvolutionConfig& cfg, const DatasetSplit& data,
                        const std::vector<Genome>& seed_genomes = {},
                        const GenerationCallback& on_generation = nullptr);

} // namespace evocnn
