#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "evocnn/errors.hpp"
#include "evocnn/genome.hpp"
#include "evocnn/network.hpp"
#include "evocnn/rng.hpp"

using namespace evocnn;

namespace {

const std::vector<int> kMnistShape = {1, 28, 28};

template <typename Op>
const Op& layer_as(const Network& net, std::size_t i) {
    const auto* op = std::get_if<Op>(&net.layers().at(i));
    REQUIRE(op != nullptr);
    return *op;
}

// Overwrites a tensor with values far outside glorot range, so copied
// slots are unmistakable next to freshly initialized ones.
void stamp(Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 1000.0f + static_cast<float>(i);
}

bool is_stamped(float v) { return v >= 1000.0f; }

// A one-conv genome whose stored weights are all stamped.
Genome stamped_conv_genome(int kernel, int filters) {
    Genome g;
    g.genes = {ConvGene{kernel, filters, 1, Padding::valid, 77, std::nullopt}};
    g = repair(std::move(g), kMnistShape, GenomeBounds{});
    Network net = build_phenotype(g, kMnistShape, 10);
    extract_weights(g, net);
    auto& conv = std::get<ConvGene>(g.genes[0]);
    stamp(conv.weights->w);
    stamp(conv.weights->b);
    stamp(conv.weights->gamma);
    stamp(conv.weights->beta);
    stamp(g.fc1_weights->w);
    stamp(g.fc1_weights->b);
    stamp(g.fc2_weights->w);
    stamp(g.fc2_weights->b);
    return g;
}

} // namespace

TEST_CASE("random genomes are valid, buildable, and count their own parameters") {
    Rng rng(31);
    const GenomeBounds bounds;
    for (int trial = 0; trial < 500; ++trial) {
        const Genome g = random_genome(rng, bounds, kMnistShape);
        CHECK(is_structurally_valid(g, kMnistShape, bounds));
        CHECK(g.genes.size() <= static_cast<std::size_t>(bounds.max_genes));
        CHECK(g.fc_neurons >= bounds.fc_min);
        CHECK(g.fc_neurons <= bounds.fc_max);
        CHECK(g.header.learning_rate >= bounds.lr_min);
        CHECK(g.header.learning_rate <= bounds.lr_max);

        Network net = build_phenotype(g, kMnistShape, 10);
        CHECK(net.param_count() == count_params(g, kMnistShape, 10));

        if (trial % 50 == 0) {
            Tensor x({1, 1, 28, 28});
            const Tensor probs = net.infer(x);
            REQUIRE(probs.dim(0) == 1);
            REQUIRE(probs.dim(1) == 10);
            float sum = 0.0f;
            for (std::size_t i = 0; i < probs.size(); ++i) sum += probs[i];
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
        }
    }
}

TEST_CASE("repair is idempotent on arbitrary junk genomes") {
    Rng rng(32);
    const GenomeBounds bounds;
    for (int trial = 0; trial < 200; ++trial) {
        Genome messy;
        const int n = rng.uniform_int(0, 24);
        for (int i = 0; i < n; ++i) {
            if (rng.bernoulli(0.5)) {
                messy.genes.push_back(ConvGene{rng.uniform_int(-3, 12), rng.uniform_int(-5, 40),
                                               rng.uniform_int(-1, 6),
                                               rng.bernoulli(0.5) ? Padding::same : Padding::valid,
                                               rng.next_u64(), std::nullopt});
            } else {
                messy.genes.push_back(PoolGene{rng.uniform_int(-2, 9), rng.uniform_int(-1, 5),
                                               rng.bernoulli(0.5) ? PoolKind::max
                                                                  : PoolKind::average});
            }
        }
        messy.fc_neurons = rng.uniform_int(-100, 2000);
        messy.header.learning_rate = static_cast<float>(rng.uniform(-1.0, 5.0));

        // Alternate between a roomy input and one that forces clamping.
        const std::vector<int> shape = trial % 2 == 0 ? kMnistShape : std::vector<int>{1, 6, 6};
        const Genome fixed = repair(messy, shape, bounds);
        CHECK(is_structurally_valid(fixed, shape, bounds));
        CHECK(repair(fixed, shape, bounds) == fixed);
        CHECK_NOTHROW(build_phenotype(fixed, shape, 10));
    }
}

TEST_CASE("repair clamps every hyperparameter into range") {
    const GenomeBounds bounds;
    Genome g;
    g.genes = {ConvGene{9, 100, 5, Padding::same, 1, std::nullopt},
               PoolGene{10, 0, PoolKind::max}};
    g.fc_neurons = 9999;
    g.header.learning_rate = 42.0f;

    const Genome fixed = repair(g, kMnistShape, bounds);
    const auto& conv = std::get<ConvGene>(fixed.genes[0]);
    CHECK(conv.kernel == 7);    // nearest allowed size
    CHECK(conv.filters == 12);  // max_filters
    CHECK(conv.stride == 2);
    const auto& pool = std::get<PoolGene>(fixed.genes[1]);
    CHECK(pool.pool == 4);  // max_pool
    CHECK(pool.stride == 1);
    CHECK(fixed.fc_neurons == 512);
    CHECK(fixed.header.learning_rate == 1.0f);

    // Out-of-set kernels snap to the nearest choice, ties to the smaller.
    for (const auto& [from, to] : {std::pair{2, 1}, {4, 3}, {6, 5}, {100, 7}, {-3, 1}}) {
        Genome one;
        one.genes = {ConvGene{from, 2, 1, Padding::valid, 1, std::nullopt}};
        const Genome r = repair(one, kMnistShape, bounds);
        CHECK(std::get<ConvGene>(r.genes[0]).kernel == to);
    }
}

TEST_CASE("repair shrinks kernels that do not fit a small map") {
    Genome g;
    g.genes = {ConvGene{7, 2, 1, Padding::valid, 1, std::nullopt}};
    const Genome fixed = repair(g, {1, 6, 6}, GenomeBounds{});
    CHECK(std::get<ConvGene>(fixed.genes[0]).kernel == 5);

    // Cumulative shrinking: repeated pooling drives the map to 1x1 and the
    // pool windows follow it down.
    Genome chain;
    for (int i = 0; i < 4; ++i) chain.genes.push_back(PoolGene{4, 2, PoolKind::max});
    const Genome small = repair(chain, kMnistShape, GenomeBounds{});
    REQUIRE(small.genes.size() == 4);
    CHECK(std::get<PoolGene>(small.genes[3]).pool == 1);  // 28 -> 13 -> 5 -> 1
    // Flat size 1: the FC tail is 1*50+50 plus 50*10+10.
    CHECK(count_params(small, kMnistShape, 10) == 610);
}

TEST_CASE("repair drops genes beyond the length cap") {
    Genome g;
    for (int i = 0; i < 30; ++i) g.genes.push_back(PoolGene{1, 1, PoolKind::max});
    const Genome fixed = repair(g, kMnistShape, GenomeBounds{});
    CHECK(fixed.genes.size() == 16);
}

TEST_CASE("parameter count matches the classic conv-pool example") {
    // conv 5x5x1x6 valid + 2x2 pool on 28x28: feature map 24x24x6 pools to
    // 12x12x6, flattening to 864.
    Genome g;
    g.genes = {ConvGene{5, 6, 1, Padding::valid, 3, std::nullopt},
               PoolGene{2, 2, PoolKind::max}};
    g.fc_neurons = 50;
    const std::size_t conv_block = 5 * 5 * 1 * 6 + 6 + 2 * 6;
    const std::size_t fc1 = 864 * 50 + 50;
    const std::size_t fc2 = 50 * 10 + 10;
    CHECK(count_params(g, kMnistShape, 10) == conv_block + fc1 + fc2);

    Network net = build_phenotype(g, kMnistShape, 10);
    CHECK(net.param_count() == conv_block + fc1 + fc2);

    // The empty genome is just the FC tail on raw pixels.
    CHECK(count_params(Genome{}, kMnistShape, 10) == 784 * 50 + 50 + 50 * 10 + 10);
}

TEST_CASE("build_phenotype rejects a genome that needs repair") {
    Genome g;
    g.genes = {ConvGene{7, 2, 1, Padding::valid, 1, std::nullopt}};
    CHECK_THROWS_AS(build_phenotype(g, {1, 4, 4}, 10), StructuralError);
}

TEST_CASE("stored weights override fresh initialization slot for slot") {
    Genome g = stamped_conv_genome(3, 4);
    Network net = build_phenotype(g, kMnistShape, 10);

    const auto& conv = layer_as<ConvOp>(net, 0);
    const auto& bn = layer_as<BatchNormOp>(net, 1);
    const auto& fc1 = layer_as<FcOp>(net, 4);
    const auto& fc2 = layer_as<FcOp>(net, 5);
    const auto& stored = *std::get<ConvGene>(g.genes[0]).weights;

    CHECK(conv.w == stored.w);
    CHECK(conv.b == stored.b);
    CHECK(bn.gamma == stored.gamma);
    CHECK(bn.beta == stored.beta);
    CHECK(fc1.w == g.fc1_weights->w);
    CHECK(fc2.b == g.fc2_weights->b);
}

TEST_CASE("growing filters keeps the leading slices and refreshes the rest") {
    Genome g = stamped_conv_genome(3, 4);
    std::get<ConvGene>(g.genes[0]).filters = 6;  // weights still describe 4
    g = repair(std::move(g), kMnistShape, GenomeBounds{});
    Network net = build_phenotype(g, kMnistShape, 10);

    const auto& conv = layer_as<ConvOp>(net, 0);
    REQUIRE(conv.w.dim(0) == 6);
    const auto& stored = *std::get<ConvGene>(g.genes[0]).weights;
    for (int f = 0; f < 4; ++f) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                CHECK(conv.w.at(f, 0, ky, kx) == stored.w.at(f, 0, ky, kx));
            }
        }
        CHECK(is_stamped(conv.b[static_cast<std::size_t>(f)]));
    }
    for (int f = 4; f < 6; ++f) {
        CHECK_FALSE(is_stamped(conv.w.at(f, 0, 1, 1)));
        CHECK_FALSE(is_stamped(conv.b[static_cast<std::size_t>(f)]));
    }
}

TEST_CASE("kernel resizing maps the centered window") {
    SUBCASE("shrinking 5 -> 3 keeps the middle of the old kernel") {
        Genome g = stamped_conv_genome(5, 2);
        const Tensor old_w = std::get<ConvGene>(g.genes[0]).weights->w;
        std::get<ConvGene>(g.genes[0]).kernel = 3;
        g = repair(std::move(g), kMnistShape, GenomeBounds{});
        const Network net = build_phenotype(g, kMnistShape, 10);
        const auto& conv = layer_as<ConvOp>(net, 0);
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                CHECK(conv.w.at(1, 0, ky, kx) == old_w.at(1, 0, ky + 1, kx + 1));
            }
        }
    }
    SUBCASE("growing 3 -> 5 plants the old kernel in the center") {
        Genome g = stamped_conv_genome(3, 2);
        const Tensor old_w = std::get<ConvGene>(g.genes[0]).weights->w;
        std::get<ConvGene>(g.genes[0]).kernel = 5;
        g = repair(std::move(g), kMnistShape, GenomeBounds{});
        const Network net = build_phenotype(g, kMnistShape, 10);
        const auto& conv = layer_as<ConvOp>(net, 0);
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                CHECK(conv.w.at(0, 0, ky + 1, kx + 1) == old_w.at(0, 0, ky, kx));
            }
        }
        CHECK_FALSE(is_stamped(conv.w.at(0, 0, 0, 0)));  // border is fresh
    }
}

TEST_CASE("widening the hidden FC layer keeps the trained block") {
    Genome g = stamped_conv_genome(3, 4);
    g.fc_neurons = 60;  // stored weights describe 50
    g = repair(std::move(g), kMnistShape, GenomeBounds{});
    Network net = build_phenotype(g, kMnistShape, 10);

    const auto& fc1 = layer_as<FcOp>(net, 4);
    const auto& fc2 = layer_as<FcOp>(net, 5);
    REQUIRE(fc1.w.dim(0) == 60);
    const int in_f = fc1.w.dim(1);
    for (int o = 0; o < 50; ++o) {
        CHECK(fc1.w.at(o, 0) == g.fc1_weights->w.at(o, 0));
        CHECK(fc1.w.at(o, in_f - 1) == g.fc1_weights->w.at(o, in_f - 1));
        CHECK(is_stamped(fc1.b[static_cast<std::size_t>(o)]));
    }
    CHECK_FALSE(is_stamped(fc1.w.at(55, 0)));
    // fc2's input widened from 50 to 60: the left block survives.
    REQUIRE(fc2.w.dim(1) == 60);
    for (int o = 0; o < 10; ++o) {
        CHECK(fc2.w.at(o, 0) == g.fc2_weights->w.at(o, 0));
        CHECK(fc2.w.at(o, 49) == g.fc2_weights->w.at(o, 49));
        CHECK_FALSE(is_stamped(fc2.w.at(o, 55)));
    }
}

TEST_CASE("serialization round-trips genomes with and without weights") {
    Rng rng(33);
    const GenomeBounds bounds;
    for (int trial = 0; trial < 100; ++trial) {
        Genome g = random_genome(rng, bounds, kMnistShape);
        g.header.id = rng.next_u64();
        g.header.age = rng.uniform_int(0, 9);
        if (trial % 3 == 0) {
            Network net = build_phenotype(g, kMnistShape, 10);
            extract_weights(g, net);
        }
        CHECK(deserialize(serialize(g)) == g);
    }
}

TEST_CASE("genome files survive a save/load cycle") {
    Rng rng(34);
    Genome g = random_genome(rng, GenomeBounds{}, kMnistShape);
    g.header.id = 404;
    Network net = build_phenotype(g, kMnistShape, 10);
    extract_weights(g, net);

    const auto path =
        (std::filesystem::temp_directory_path() / "evocnn_test_genome.bin").string();
    save_genome(g, path);
    CHECK(load_genome(path) == g);

    CHECK_THROWS_AS(load_genome(path + ".missing"), DataError);
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint corruption is reported, never read past") {
    Rng rng(35);
    Genome g = random_genome(rng, GenomeBounds{}, kMnistShape);
    Network net = build_phenotype(g, kMnistShape, 10);
    extract_weights(g, net);
    const auto bytes = serialize(g);

    SUBCASE("bad magic") {
        auto bad = bytes;
        bad[0] ^= 0xff;
        try {
            deserialize(bad);
            FAIL("expected a FormatError");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find("bad magic") != std::string::npos);
        }
    }
    SUBCASE("unsupported version") {
        auto bad = bytes;
        bad[4] = 0xff;
        CHECK_THROWS_AS(deserialize(bad), FormatError);
    }
    SUBCASE("truncation at any depth") {
        for (const std::size_t keep :
             {std::size_t{0}, std::size_t{5}, std::size_t{20}, bytes.size() / 2,
              bytes.size() - 1}) {
            const std::vector<uint8_t> cut(bytes.begin(),
                                           bytes.begin() + static_cast<std::ptrdiff_t>(keep));
            CHECK_THROWS_AS(deserialize(cut), FormatError);
        }
    }
    SUBCASE("trailing garbage") {
        auto bad = bytes;
        bad.push_back(0);
        try {
            deserialize(bad);
            FAIL("expected a FormatError");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find("trailing") != std::string::npos);
        }
    }
}

TEST_CASE("the summary names every layer with its output shape") {
    Genome g;
    g.genes = {ConvGene{5, 6, 1, Padding::valid, 3, std::nullopt},
               PoolGene{2, 2, PoolKind::max}};
    g.header.id = 12;
    const std::string text = genome_summary(g, kMnistShape, 10);

    CHECK(text.find("id=12") != std::string::npos);
    CHECK(text.find("conv k5 f6") != std::string::npos);
    CHECK(text.find("6x24x24") != std::string::npos);
    CHECK(text.find("maxpool p2 s2") != std::string::npos);
    CHECK(text.find("flatten                        864") != std::string::npos);
    CHECK(text.find("fc 864 -> 50") != std::string::npos);
    CHECK(text.find("total params 43928") != std::string::npos);
}
