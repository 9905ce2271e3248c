#pragma once

// The evolvable representation: a header (id, age, learning rate), a
// variable-length list of conv/pool layer genes, and the width of the
// obligatory fully-connected tail. Genes may carry trained weights; a
// phenotype network is built deterministically from the genome alone
// (fresh tensors come from per-gene seeds, inherited tensors are copied
// where shapes overlap).

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "evocnn/network.hpp"
#include "evocnn/rng.hpp"
#include "evocnn/tensor.hpp"

namespace evocnn {

// Trained state of one conv block (the conv layer plus its obligatory
// batch norm). Running statistics ride along so a checkpointed genome
// can be evaluated without retraining.
struct ConvGeneWeights {
    Tensor w, b;
    Tensor gamma, beta, running_mean, running_var;

    bool operator==(const ConvGeneWeights&) const = default;
};

struct ConvGene {
    int kernel = 3;
    int filters = 1;
    int stride = 1;
    Padding padding = Padding::valid;
    uint64_t init_seed = 0;  // source of fresh weights for this gene
    std::optional<ConvGeneWeights> weights;

    bool operator==(const ConvGene&) const = default;
};

struct PoolGene {
    int pool = 2;
    int stride = 2;
    PoolKind kind = PoolKind::max;

    bool operator==(const PoolGene&) const = default;
};

using LayerGene = std::variant<ConvGene, PoolGene>;

struct GenomeHeader {
    uint64_t id = 0;
    int age = 0;
    float learning_rate = 0.1f;

    bool operator==(const GenomeHeader&) const = default;
};

struct DenseWeights {
    Tensor w, b;

    bool operator==(const DenseWeights&) const = default;
};

struct Genome {
    GenomeHeader header;
    std::vector<LayerGene> genes;  // at most GenomeBounds::max_genes after repair
    int fc_neurons = 50;           // width of the hidden FC layer in the tail
    uint64_t fc1_seed = 0;
    uint64_t fc2_seed = 0;
    std::optional<DenseWeights> fc1_weights;
    std::optional<DenseWeights> fc2_weights;

    bool operator==(const Genome&) const = default;
};

// Sampling and clamping ranges for gene hyperparameters. Kernel sizes and
// strides are drawn from the fixed sets below.
struct GenomeBounds {
    int max_filters = 12;
    int max_pool = 4;
    int fc_min = 10;
    int fc_max = 512;
    int fc_init = 50;
    int max_genes = 16;
    int init_genes_min = 1;
    int init_genes_max = 8;
    float lr_init = 0.1f;
    float lr_min = 1e-4f;
    float lr_max = 1.0f;
};

inline constexpr int kKernelChoices[] = {1, 3, 5, 7};
inline constexpr int kStrideChoices[] = {1, 2};

// One random layer gene, uniformly conv or pool, hyperparameters sampled
// inside bounds. Used for initial genomes and the add-layer mutation.
LayerGene random_gene(Rng& rng, const GenomeBounds& bounds);

// Fresh random genome: 1-8 genes, each uniformly conv or pool with
// hyperparameters sampled inside bounds, repaired against input_shape.
// Age 0, learning rate and fc width from the bounds; id left 0 for the
// caller to assign.
Genome random_genome(Rng& rng, const GenomeBounds& bounds, const std::vector<int>& input_shape);

// Walks genes front to back tracking the activation shape; any gene whose
// output would underflow 1x1 gets its kernel/pool clamped to the largest
// value that fits (kernels stay in the allowed set), hyperparameters are
// clamped into bounds, genes beyond max_genes are dropped, and fc_neurons /
// learning_rate are clamped to their ranges.
Genome repair(Genome g, const std::vector<int>& input_shape, const GenomeBounds& bounds);

// True when every gene applies cleanly to input_shape without repair.
bool is_structurally_valid(const Genome& g, const std::vector<int>& input_shape,
                           const GenomeBounds& bounds);

// Instantiates the network: per conv gene a conv→batchnorm→ReLU block, per
// pool gene a pool layer, then flatten → FC(fc_neurons) → FC(num_classes) →
// softmax. Stored weights are copied where shapes overlap (extra filters /
// channels fresh-initialized, shrunken kernels keep the centered window);
// everything else is freshly initialized from the gene seeds. Throws
// StructuralError if the genome was not repaired.
Network build_phenotype(const Genome& g, const std::vector<int>& input_shape, int num_classes);

// Trainable-parameter count of the phenotype (conv w+b, batchnorm
// gamma+beta, FC w+b; pooling and running stats contribute nothing),
// computed by shape walk without instantiating tensors.
std::size_t count_params(const Genome& g, const std::vector<int>& input_shape, int num_classes);

// Copies the trained tensors of a phenotype built from g back into the
// genome, so offspring inherit them. The network must have been produced by
// build_phenotype(g, ...).
void extract_weights(Genome& g, const Network& net);

// Checkpoint format: "EA4C" magic, u16 version, header, genes, FC tail,
// tensors as u8 rank + u32 dims + little-endian f32 data.
std::vector<uint8_t> serialize(const Genome& g);
Genome deserialize(const std::vector<uint8_t>& bytes);
void save_genome(const Genome& g, const std::string& path);
Genome load_genome(const std::string& path);

// Human-readable architecture view, one layer per line with output shapes
// and parameter counts.
std::string genome_summary(const Genome& g, const std::vector<int>& input_shape, int num_classes);

} // namespace evocnn
