#include "evocnn/evolution.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>

#include "evocnn/errors.hpp"

namespace evocnn {

namespace {

// Seed-derivation tags: one stream family per purpose so the same run seed
// never feeds two consumers the same values.
constexpr uint64_t kInitTag = 0x696e6974ull;    // initial population
constexpr uint64_t kBreedTag = 0x6272656466ull;  // per-generation breeding
constexpr uint64_t kTrainTag = 0x747261696eull;  // per-offspring training

// "Better" for picking the population's best member: fitness first, then
// accuracy, then the lower (older) id.
bool better_member(const ScoredGenome& a, const ScoredGenome& b) {
    if (a.fitness != b.fitness) return a.fitness > b.fitness;
    if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
    return a.genome.header.id < b.genome.header.id;
}

} // namespace

double fitness(double accuracy, std::size_t param_count, std::size_t baseline_params, double k,
               double a_min) {
    if (baseline_params == 0 || param_count == 0) {
        throw ConfigError("fitness: parameter counts must be positive");
    }
    if (accuracy < a_min) return 0.0;
    const double s_rel = static_cast<double>(param_count) / static_cast<double>(baseline_params);
    return accuracy * (k / std::log(s_rel + 1.0) + 1.0);
}

const ScoredGenome& tournament_select(const Population& pop, Rng& rng) {
    const int n = static_cast<int>(pop.members.size());
    if (n == 0) throw ConfigError("tournament_select: empty population");
    if (n == 1) return pop.members[0];
    const int i = rng.uniform_int(0, n - 1);
    int j = rng.uniform_int(0, n - 2);
    if (j >= i) ++j;
    const ScoredGenome& a = pop.members[static_cast<std::size_t>(i)];
    const ScoredGenome& b = pop.members[static_cast<std::size_t>(j)];
    if (a.fitness != b.fitness) return a.fitness > b.fitness ? a : b;
    return a.genome.header.id <= b.genome.header.id ? a : b;
}

std::pair<Genome, Genome> crossover(const Genome& a, const Genome& b, double p_cross, Rng& rng,
                                    const std::vector<int>& input_shape,
                                    const GenomeBounds& bounds, bool& crossed) {
    crossed = rng.bernoulli(p_cross);
    if (!crossed) return {a, b};

    const int la = static_cast<int>(a.genes.size());
    const int lb = static_cast<int>(b.genes.size());
    const int cut_a = rng.uniform_int(0, la);
    const int cut_b = rng.uniform_int(0, lb);

    // Child 1 = head of a + tail of b; the learning rate follows the head
    // parent, the FC tail (width, seeds, weights) follows the tail parent.
    Genome c1 = a;
    c1.genes.assign(a.genes.begin(), a.genes.begin() + cut_a);
    c1.genes.insert(c1.genes.end(), b.genes.begin() + cut_b, b.genes.end());
    c1.fc_neurons = b.fc_neurons;
    c1.fc1_seed = b.fc1_seed;
    c1.fc2_seed = b.fc2_seed;
    c1.fc1_weights = b.fc1_weights;
    c1.fc2_weights = b.fc2_weights;

    Genome c2 = b;
    c2.genes.assign(b.genes.begin(), b.genes.begin() + cut_b);
    c2.genes.insert(c2.genes.end(), a.genes.begin() + cut_a, a.genes.end());
    c2.fc_neurons = a.fc_neurons;
    c2.fc1_seed = a.fc1_seed;
    c2.fc2_seed = a.fc2_seed;
    c2.fc1_weights = a.fc1_weights;
    c2.fc2_weights = a.fc2_weights;

    // Offspring join the oldest species of their parents.
    c1.header.age = std::max(a.header.age, b.header.age);
    c2.header.age = c1.header.age;

    return {repair(std::move(c1), input_shape, bounds),
            repair(std::move(c2), input_shape, bounds)};
}

int sample_mutation_op(const std::vector<double>& mo_probs, Rng& rng) {
    return rng.categorical(mo_probs);
}

namespace {

// MO1: regenerate all weights of one uniformly chosen layer. Candidates are
// the conv genes plus the two FC layers of the tail.
void mutate_weight_reset(Genome& g, Rng& rng) {
    std::vector<ConvGene*> convs;
    for (auto& gene : g.genes) {
        if (auto* c = std::get_if<ConvGene>(&gene)) convs.push_back(c);
    }
    const int n = static_cast<int>(convs.size()) + 2;
    const int pick = rng.uniform_int(0, n - 1);
    if (pick < static_cast<int>(convs.size())) {
        convs[static_cast<std::size_t>(pick)]->weights.reset();
        convs[static_cast<std::size_t>(pick)]->init_seed = rng.next_u64();
    } else if (pick == static_cast<int>(convs.size())) {
        g.fc1_weights.reset();
        g.fc1_seed = rng.next_u64();
    } else {
        g.fc2_weights.reset();
        g.fc2_seed = rng.next_u64();
    }
}

// MO2: insert a freshly sampled gene at a uniform position.
void mutate_add_layer(Genome& g, const GenomeBounds& bounds, Rng& rng) {
    const int pos = rng.uniform_int(0, static_cast<int>(g.genes.size()));
    g.genes.insert(g.genes.begin() + pos, random_gene(rng, bounds));
}

// MO4: resample one hyperparameter of one uniformly chosen gene.
void mutate_modify_layer(Genome& g, const GenomeBounds& bounds, Rng& rng) {
    if (g.genes.empty()) return;
    auto& gene = g.genes[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int>(g.genes.size()) - 1))];
    if (auto* conv = std::get_if<ConvGene>(&gene)) {
        switch (rng.uniform_int(0, 3)) {
            case 0:
                conv->kernel = kKernelChoices[static_cast<std::size_t>(rng.uniform_int(0, 3))];
                break;
            case 1:
                conv->filters = rng.uniform_int(1, bounds.max_filters);
                break;
            case 2:
                conv->stride = kStrideChoices[static_cast<std::size_t>(rng.uniform_int(0, 1))];
                break;
            default:
                conv->padding = rng.bernoulli(0.5) ? Padding::same : Padding::valid;
                break;
        }
    } else {
        auto& pool = std::get<PoolGene>(gene);
        switch (rng.uniform_int(0, 2)) {
            case 0:
                pool.pool = rng.uniform_int(1, bounds.max_pool);
                break;
            case 1:
                pool.stride = kStrideChoices[static_cast<std::size_t>(rng.uniform_int(0, 1))];
                break;
            default:
                pool.kind = rng.bernoulli(0.5) ? PoolKind::max : PoolKind::average;
                break;
        }
    }
}

} // namespace

int mutate(Genome& g, const EvolutionConfig& cfg, const std::vector<int>& input_shape, Rng& rng) {
    if (!rng.bernoulli(cfg.p_mut)) return -1;
    int op = sample_mutation_op(cfg.mo_probs, rng);
    if (op == 2 && g.genes.empty()) op = 1;  // nothing to remove: add instead
    switch (op) {
        case 0:
            mutate_weight_reset(g, rng);
            break;
        case 1:
            mutate_add_layer(g, cfg.bounds, rng);
            break;
        case 2:
            g.genes.erase(g.genes.begin() +
                          rng.uniform_int(0, static_cast<int>(g.genes.size()) - 1));
            break;
        case 3:
            mutate_modify_layer(g, cfg.bounds, rng);
            break;
        case 4: {
            const double factor = rng.uniform(0.75, 1.25);
            g.fc_neurons = std::clamp(
                static_cast<int>(std::llround(g.fc_neurons * factor)), cfg.bounds.fc_min,
                cfg.bounds.fc_max);
            break;
        }
        default: {
            const double factor = rng.uniform(0.5, 2.0);
            g.header.learning_rate =
                std::clamp(static_cast<float>(g.header.learning_rate * factor),
                           cfg.bounds.lr_min, cfg.bounds.lr_max);
            break;
        }
    }
    g = repair(std::move(g), input_shape, cfg.bounds);
    return op;
}

void update_age(ScoredGenome& sg, bool structurally_changed, double parent_fitness, int age_max) {
    sg.genome.header.age = std::min(sg.genome.header.age + 1, age_max);
    if (structurally_changed && sg.fitness < parent_fitness) {
        sg.genome.header.age = 0;
    }
}

Population replace_with_speciation(const Population& p, const std::vector<ScoredGenome>& q,
                                   int pop_size) {
    std::vector<ScoredGenome> pool = p.members;
    pool.insert(pool.end(), q.begin(), q.end());
    if (static_cast<int>(pool.size()) < pop_size) {
        throw ConfigError("replace_with_speciation: pool smaller than population size");
    }

    // Occupied age levels, ascending.
    std::vector<int> levels;
    for (const auto& m : pool) {
        if (std::find(levels.begin(), levels.end(), m.genome.header.age) == levels.end()) {
            levels.push_back(m.genome.header.age);
        }
    }
    std::sort(levels.begin(), levels.end());
    const int per_level = pop_size / static_cast<int>(levels.size());

    std::vector<char> taken(pool.size(), 0);
    Population next;
    next.baseline_params = p.baseline_params;

    // Indices of pool sorted best-first (fitness desc, id asc) once; both
    // the per-level picks and the filler walk reuse it.
    std::vector<std::size_t> ranked(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) ranked[i] = i;
    std::sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
        if (pool[a].fitness != pool[b].fitness) return pool[a].fitness > pool[b].fitness;
        return pool[a].genome.header.id < pool[b].genome.header.id;
    });

    for (int level : levels) {
        int kept = 0;
        for (std::size_t idx : ranked) {
            if (kept == per_level) break;
            if (pool[idx].genome.header.age != level) continue;
            taken[idx] = 1;
            next.members.push_back(pool[idx]);
            ++kept;
        }
    }
    // Remaining slots (indivisible pop_size or understaffed levels) go to
    // the globally best unselected individuals.
    for (std::size_t idx : ranked) {
        if (static_cast<int>(next.members.size()) == pop_size) break;
        if (taken[idx]) continue;
        taken[idx] = 1;
        next.members.push_back(pool[idx]);
    }
    return next;
}

namespace {

struct OffspringPlan {
    Genome genome;
    bool changed = false;
    double parent_fitness = 0.0;
};

ScoredGenome score_member(Genome genome, double accuracy, bool diverged,
                          const EvolutionConfig& cfg, std::size_t baseline_params,
                          const std::vector<int>& input_shape) {
    ScoredGenome sg;
    sg.param_count = count_params(genome, input_shape, cfg.num_classes);
    sg.genome = std::move(genome);
    sg.accuracy = accuracy;
    sg.diverged = diverged;
    sg.s_rel = static_cast<double>(sg.param_count) / static_cast<double>(baseline_params);
    sg.fitness = diverged ? 0.0
                          : fitness(accuracy, sg.param_count, baseline_params, cfg.k, cfg.a_min);
    return sg;
}

GenerationStats make_stats(int generation, const Population& pop, double wallclock_s) {
    GenerationStats st;
    st.generation = generation;
    st.wallclock_s = wallclock_s;
    const ScoredGenome* best = &pop.members[0];
    double sum = 0.0;
    for (const auto& m : pop.members) {
        sum += m.fitness;
        if (better_member(m, *best)) best = &m;
    }
    st.best_fitness = best->fitness;
    st.mean_fitness = sum / static_cast<double>(pop.members.size());
    st.best_accuracy = best->accuracy;
    st.best_params = best->param_count;
    st.best_depth = static_cast<int>(best->genome.genes.size());
    return st;
}

const ScoredGenome& best_of(const Population& pop) {
    const ScoredGenome* best = &pop.members[0];
    for (const auto& m : pop.members) {
        if (better_member(m, *best)) best = &m;
    }
    return *best;
}

void validate_config(const EvolutionConfig& cfg, const DatasetSplit& data) {
    if (cfg.pop_size < 1) throw ConfigError("pop_size must be positive");
    if (cfg.g_max < 0) throw ConfigError("g_max must be non-negative");
    if (cfg.age_max < 1) throw ConfigError("age_max must be at least 1");
    if (cfg.mo_probs.size() != 6) throw ConfigError("mo_probs must have 6 entries");
    double sum = 0.0;
    for (double p : cfg.mo_probs) {
        if (p < 0.0 || p > 1.0) throw ConfigError("mo_probs entries must be in [0,1]");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("mo_probs must sum to 1");
    if (cfg.p_cross < 0.0 || cfg.p_cross > 1.0 || cfg.p_mut < 0.0 || cfg.p_mut > 1.0) {
        throw ConfigError("p_cross and p_mut must be probabilities");
    }
    if (data.train.count() == 0 || data.test.count() == 0 || data.val.count() == 0) {
        throw ConfigError("run_evolution: empty dataset split");
    }
}

} // namespace

RunResult run_evolution(const EvolutionConfig& cfg, const DatasetSplit& data,
                        const std::vector<Genome>& seed_genomes,
                        const GenerationCallback& on_generation) {
    validate_config(cfg, data);
    const std::vector<int> input_shape = {data.train.images.dim(1), data.train.images.dim(2),
                                          data.train.images.dim(3)};
    const auto t_start = std::chrono::steady_clock::now();
    auto elapsed = [&t_start] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    };

    uint64_t next_id = 0;

    // Initial population: either fresh random genomes, or the provided seeds
    // padded with single-mutation variants of the first seed.
    std::vector<Genome> initial;
    initial.reserve(static_cast<std::size_t>(cfg.pop_size));
    for (int i = 0; i < cfg.pop_size; ++i) {
        Rng rng(derive_seed(cfg.seed, kInitTag, static_cast<uint64_t>(i)));
        Genome g;
        if (seed_genomes.empty()) {
            g = random_genome(rng, cfg.bounds, input_shape);
        } else if (i < static_cast<int>(seed_genomes.size())) {
            g = repair(seed_genomes[static_cast<std::size_t>(i)], input_shape, cfg.bounds);
        } else {
            g = repair(seed_genomes[0], input_shape, cfg.bounds);
            EvolutionConfig forced = cfg;
            forced.p_mut = 1.0;
            mutate(g, forced, input_shape, rng);
        }
        g.header.age = 0;
        g.header.id = next_id++;
        initial.push_back(std::move(g));
    }

    // Score the initial population on D_test (line 2: evaluated, not trained).
    std::vector<double> init_acc(initial.size(), 0.0);
    std::exception_ptr first_error;
#pragma omp parallel for schedule(dynamic) if (cfg.parallel_candidates)
    for (int i = 0; i < static_cast<int>(initial.size()); ++i) {
        try {
            Network net = build_phenotype(initial[static_cast<std::size_t>(i)], input_shape,
                                          cfg.num_classes);
            init_acc[static_cast<std::size_t>(i)] =
                net.evaluate_accuracy(data.test.images, data.test.labels, cfg.eval_mode);
        } catch (...) {
#pragma omp critical
            if (!first_error) first_error = std::current_exception();
        }
    }
    if (first_error) std::rethrow_exception(first_error);

    // The best initial network fixes the s_rel denominator for the whole
    // run: highest accuracy, ties to fewer parameters, then lower id.
    Population pop;
    std::size_t baseline_params = 0;
    {
        std::size_t best_i = 0;
        std::vector<std::size_t> params(initial.size());
        for (std::size_t i = 0; i < initial.size(); ++i) {
            params[i] = count_params(initial[i], input_shape, cfg.num_classes);
            if (i == 0) continue;
            const bool better =
                init_acc[i] > init_acc[best_i] ||
                (init_acc[i] == init_acc[best_i] && params[i] < params[best_i]);
            if (better) best_i = i;
        }
        baseline_params = params[best_i];
    }
    pop.baseline_params = baseline_params;
    for (std::size_t i = 0; i < initial.size(); ++i) {
        pop.members.push_back(score_member(std::move(initial[i]), init_acc[i], false, cfg,
                                           baseline_params, input_shape));
    }

    RunResult result;
    result.baseline_params = baseline_params;
    result.log.push_back(make_stats(0, pop, elapsed()));
    {
        Network net = build_phenotype(best_of(pop).genome, input_shape, cfg.num_classes);
        result.initial_best_val_accuracy =
            net.evaluate_accuracy(data.val.images, data.val.labels, cfg.eval_mode);
    }
    if (on_generation) on_generation(0, pop);

    for (int gen = 1; gen <= cfg.g_max; ++gen) {
        // Breeding is sequential: selection, crossover and mutation draw
        // from one per-generation stream.
        Rng breed_rng(derive_seed(cfg.seed, kBreedTag, static_cast<uint64_t>(gen)));
        std::vector<OffspringPlan> plans;
        plans.reserve(static_cast<std::size_t>(cfg.pop_size));
        while (static_cast<int>(plans.size()) < cfg.pop_size) {
            const ScoredGenome& pa = tournament_select(pop, breed_rng);
            const ScoredGenome& pb = tournament_select(pop, breed_rng);
            bool crossed = false;
            auto [c1, c2] = crossover(pa.genome, pb.genome, cfg.p_cross, breed_rng, input_shape,
                                      cfg.bounds, crossed);
            const int mo1 = mutate(c1, cfg, input_shape, breed_rng);
            const int mo2 = mutate(c2, cfg, input_shape, breed_rng);
            const double best_parent = std::max(pa.fitness, pb.fitness);

            OffspringPlan p1;
            p1.genome = std::move(c1);
            p1.genome.header.id = next_id++;
            p1.changed = crossed || (mo1 >= 0 && mo1 <= 4);
            p1.parent_fitness = crossed ? best_parent : pa.fitness;
            plans.push_back(std::move(p1));
            if (static_cast<int>(plans.size()) == cfg.pop_size) break;

            OffspringPlan p2;
            p2.genome = std::move(c2);
            p2.genome.header.id = next_id++;
            p2.changed = crossed || (mo2 >= 0 && mo2 <= 4);
            p2.parent_fitness = crossed ? best_parent : pb.fitness;
            plans.push_back(std::move(p2));
        }

        // Train one epoch and score every offspring; candidates are
        // independent, each with its own derived RNG stream.
        std::vector<ScoredGenome> offspring(plans.size());
#pragma omp parallel for schedule(dynamic) if (cfg.parallel_candidates)
        for (int i = 0; i < static_cast<int>(plans.size()); ++i) {
            try {
                OffspringPlan& plan = plans[static_cast<std::size_t>(i)];
                Rng train_rng(derive_seed(cfg.seed,
                                          kTrainTag * 0x100000000ull + static_cast<uint64_t>(gen),
                                          static_cast<uint64_t>(i)));
                Network net = build_phenotype(plan.genome, input_shape, cfg.num_classes);
                SGDConfig sgd;
                sgd.epochs = cfg.epochs_per_training;
                sgd.batch_size = cfg.batch_size;
                sgd.learning_rate = plan.genome.header.learning_rate;
                const TrainStatus status =
                    net.train(data.train.images, data.train.labels, sgd, train_rng);
                double acc = 0.0;
                if (!status.diverged) {
                    extract_weights(plan.genome, net);
                    acc = net.evaluate_accuracy(data.test.images, data.test.labels,
                                                cfg.eval_mode);
                }
                ScoredGenome sg = score_member(std::move(plan.genome), acc, status.diverged, cfg,
                                               baseline_params, input_shape);
                update_age(sg, plan.changed, plan.parent_fitness, cfg.age_max);
                offspring[static_cast<std::size_t>(i)] = std::move(sg);
            } catch (...) {
#pragma omp critical
                if (!first_error) first_error = std::current_exception();
            }
        }
        if (first_error) std::rethrow_exception(first_error);

        const double pool_best = std::max(
            best_of(pop).fitness,
            std::max_element(offspring.begin(), offspring.end(),
                             [](const ScoredGenome& a, const ScoredGenome& b) {
                                 return a.fitness < b.fitness;
                             })
                ->fitness);
        pop = replace_with_speciation(pop, offspring, cfg.pop_size);
        // Elitism: speciation must never lose the best individual.
        if (best_of(pop).fitness < pool_best) {
            throw StructuralError("replacement dropped the best individual");
        }
        result.log.push_back(make_stats(gen, pop, elapsed()));
        if (on_generation) on_generation(gen, pop);
    }

    result.best = best_of(pop);
    {
        Network net = build_phenotype(result.best.genome, input_shape, cfg.num_classes);
        result.final_val_accuracy =
            net.evaluate_accuracy(data.val.images, data.val.labels, cfg.eval_mode);
    }
    return result;
}

} // namespace evocnn
