#include "evocnn/genome.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "evocnn/errors.hpp"

namespace evocnn {

namespace {

constexpr char kMagic[4] = {'E', 'A', '4', 'C'};
constexpr uint16_t kFormatVersion = 1;

// Seed slot tags: one derived stream per freshly initialized tensor.
constexpr uint64_t kConvWeightSlot = 1;

int largest_kernel_choice_leq(int limit) {
    int best = kKernelChoices[0];
    for (int k : kKernelChoices) {
        if (k <= limit) best = k;
    }
    return best;
}

int nearest_kernel_choice(int k) {
    int best = kKernelChoices[0];
    for (int choice : kKernelChoices) {
        if (std::abs(choice - k) < std::abs(best - k)) best = choice;
    }
    return best;
}

} // namespace

LayerGene random_gene(Rng& rng, const GenomeBounds& bounds) {
    if (rng.bernoulli(0.5)) {
        ConvGene c;
        c.kernel = kKernelChoices[static_cast<std::size_t>(rng.uniform_int(0, 3))];
        c.filters = rng.uniform_int(1, bounds.max_filters);
        c.stride = kStrideChoices[static_cast<std::size_t>(rng.uniform_int(0, 1))];
        c.padding = rng.bernoulli(0.5) ? Padding::same : Padding::valid;
        c.init_seed = rng.next_u64();
        return c;
    }
    PoolGene p;
    p.pool = rng.uniform_int(1, bounds.max_pool);
    p.stride = kStrideChoices[static_cast<std::size_t>(rng.uniform_int(0, 1))];
    p.kind = rng.bernoulli(0.5) ? PoolKind::max : PoolKind::average;
    return p;
}

Genome random_genome(Rng& rng, const GenomeBounds& bounds, const std::vector<int>& input_shape) {
    Genome g;
    g.header.age = 0;
    g.header.learning_rate = bounds.lr_init;
    g.fc_neurons = bounds.fc_init;
    g.fc1_seed = rng.next_u64();
    g.fc2_seed = rng.next_u64();

    const int n_genes = rng.uniform_int(bounds.init_genes_min, bounds.init_genes_max);
    for (int i = 0; i < n_genes; ++i) g.genes.push_back(random_gene(rng, bounds));
    return repair(std::move(g), input_shape, bounds);
}

Genome repair(Genome g, const std::vector<int>& input_shape, const GenomeBounds& bounds) {
    if (input_shape.size() != 3) {
        throw StructuralError("repair: input shape must be {channels, height, width}");
    }
    if (static_cast<int>(g.genes.size()) > bounds.max_genes) {
        g.genes.resize(static_cast<std::size_t>(bounds.max_genes));
    }

    int h = input_shape[1], w = input_shape[2];
    std::vector<LayerGene> kept;
    kept.reserve(g.genes.size());
    for (auto& gene : g.genes) {
        if (auto* conv = std::get_if<ConvGene>(&gene)) {
            conv->filters = std::clamp(conv->filters, 1, bounds.max_filters);
            conv->stride = std::clamp(conv->stride, kStrideChoices[0],
                                      kStrideChoices[std::size(kStrideChoices) - 1]);
            conv->kernel = nearest_kernel_choice(conv->kernel);
            if (conv->padding == Padding::valid && conv->kernel > std::min(h, w)) {
                conv->kernel = largest_kernel_choice_leq(std::min(h, w));
            }
            if (conv->padding == Padding::valid && conv->kernel > std::min(h, w)) {
                continue;  // impossible even at minimum size: drop the gene
            }
            const auto geom = kernels::conv_geometry(1, h, w, conv->kernel, conv->filters,
                                                     conv->stride, conv->padding);
            h = geom.out_h;
            w = geom.out_w;
            kept.push_back(gene);
        } else {
            auto& pool = std::get<PoolGene>(gene);
            pool.stride = std::clamp(pool.stride, kStrideChoices[0],
                                     kStrideChoices[std::size(kStrideChoices) - 1]);
            pool.pool = std::clamp(pool.pool, 1, bounds.max_pool);
            if (pool.pool > std::min(h, w)) pool.pool = std::min(h, w);
            if (pool.pool < 1) continue;
            const auto geom = kernels::pool_geometry(1, h, w, pool.pool, pool.stride);
            h = geom.out_h;
            w = geom.out_w;
            kept.push_back(gene);
        }
    }
    g.genes = std::move(kept);
    g.fc_neurons = std::clamp(g.fc_neurons, bounds.fc_min, bounds.fc_max);
    g.header.learning_rate = std::clamp(g.header.learning_rate, bounds.lr_min, bounds.lr_max);
    return g;
}

bool is_structurally_valid(const Genome& g, const std::vector<int>& input_shape,
                           const GenomeBounds& bounds) {
    return repair(g, input_shape, bounds) == g;
}

namespace {

// Fresh conv-block tensors for a gene, then the stored overlap copied on
// top: first-k filters and channels, centered kernel window.
void materialize_conv(const ConvGene& gene, int in_c, Tensor& w, Tensor& b, Tensor& gamma,
                      Tensor& beta, Tensor& running_mean, Tensor& running_var) {
    const int k = gene.kernel, f = gene.filters;
    w = Tensor({f, in_c, k, k});
    b = Tensor({f});
    gamma = Tensor({f});
    gamma.fill(1.0f);
    beta = Tensor({f});
    running_mean = Tensor({f});
    running_var = Tensor({f});
    running_var.fill(1.0f);

    Rng wrng(derive_seed(gene.init_seed, kConvWeightSlot));
    glorot_fill(w, in_c * k * k, f * k * k, wrng);

    if (!gene.weights) return;
    const ConvGeneWeights& s = *gene.weights;
    const int f0 = s.w.dim(0), c0 = s.w.dim(1), k0 = s.w.dim(2);
    const int copy_f = std::min(f, f0);
    const int copy_c = std::min(in_c, c0);
    const int copy_k = std::min(k, k0);
    const int src_off = (k0 - copy_k) / 2;
    const int dst_off = (k - copy_k) / 2;
    for (int fi = 0; fi < copy_f; ++fi) {
        for (int ci = 0; ci < copy_c; ++ci) {
            for (int ky = 0; ky < copy_k; ++ky) {
                for (int kx = 0; kx < copy_k; ++kx) {
                    w.at(fi, ci, ky + dst_off, kx + dst_off) =
                        s.w.at(fi, ci, ky + src_off, kx + src_off);
                }
            }
        }
    }
    for (int fi = 0; fi < copy_f; ++fi) {
        b[static_cast<std::size_t>(fi)] = s.b[static_cast<std::size_t>(fi)];
        gamma[static_cast<std::size_t>(fi)] = s.gamma[static_cast<std::size_t>(fi)];
        beta[static_cast<std::size_t>(fi)] = s.beta[static_cast<std::size_t>(fi)];
        running_mean[static_cast<std::size_t>(fi)] = s.running_mean[static_cast<std::size_t>(fi)];
        running_var[static_cast<std::size_t>(fi)] = s.running_var[static_cast<std::size_t>(fi)];
    }
}

// Fresh FC tensors with the stored top-left overlap copied on top.
void materialize_fc(uint64_t seed, const std::optional<DenseWeights>& stored, int out_f, int in_f,
                    Tensor& w, Tensor& b) {
    w = Tensor({out_f, in_f});
    b = Tensor({out_f});
    Rng wrng(derive_seed(seed, kConvWeightSlot));
    glorot_fill(w, in_f, out_f, wrng);
    if (!stored) return;
    const int o0 = stored->w.dim(0), i0 = stored->w.dim(1);
    const int copy_o = std::min(out_f, o0);
    const int copy_i = std::min(in_f, i0);
    for (int o = 0; o < copy_o; ++o) {
        for (int i = 0; i < copy_i; ++i) w.at(o, i) = stored->w.at(o, i);
        b[static_cast<std::size_t>(o)] = stored->b[static_cast<std::size_t>(o)];
    }
}

} // namespace

Network build_phenotype(const Genome& g, const std::vector<int>& input_shape, int num_classes) {
    Network net(input_shape);
    for (const auto& gene : g.genes) {
        if (const auto* conv = std::get_if<ConvGene>(&gene)) {
            const int in_c = net.output_shape()[0];
            Tensor w, b, gamma, beta, rm, rv;
            materialize_conv(*conv, in_c, w, b, gamma, beta, rm, rv);
            net.add_conv(conv->kernel, conv->filters, conv->stride, conv->padding, std::move(w),
                         std::move(b));
            net.add_batchnorm(std::move(gamma), std::move(beta), std::move(rm), std::move(rv));
            net.add_relu();
        } else {
            const auto& pool = std::get<PoolGene>(gene);
            net.add_pool(pool.kind, pool.pool, pool.stride);
        }
    }
    net.add_flatten();
    const int flat = net.output_shape()[0];
    Tensor w1, b1, w2, b2;
    materialize_fc(g.fc1_seed, g.fc1_weights, g.fc_neurons, flat, w1, b1);
    net.add_fc(std::move(w1), std::move(b1));
    materialize_fc(g.fc2_seed, g.fc2_weights, num_classes, g.fc_neurons, w2, b2);
    net.add_fc(std::move(w2), std::move(b2));
    net.add_softmax();
    return net;
}

std::size_t count_params(const Genome& g, const std::vector<int>& input_shape, int num_classes) {
    if (input_shape.size() != 3) {
        throw StructuralError("count_params: input shape must be {channels, height, width}");
    }
    int c = input_shape[0], h = input_shape[1], w = input_shape[2];
    std::size_t total = 0;
    for (const auto& gene : g.genes) {
        if (const auto* conv = std::get_if<ConvGene>(&gene)) {
            const auto geom = kernels::conv_geometry(c, h, w, conv->kernel, conv->filters,
                                                     conv->stride, conv->padding);
            total += static_cast<std::size_t>(conv->kernel) * conv->kernel * c * conv->filters +
                     static_cast<std::size_t>(conv->filters)       // bias
                     + 2 * static_cast<std::size_t>(conv->filters);  // batch-norm gamma, beta
            c = geom.out_c;
            h = geom.out_h;
            w = geom.out_w;
        } else {
            const auto& pool = std::get<PoolGene>(gene);
            const auto geom = kernels::pool_geometry(c, h, w, pool.pool, pool.stride);
            h = geom.out_h;
            w = geom.out_w;
        }
    }
    const std::size_t flat = static_cast<std::size_t>(c) * h * w;
    total += flat * static_cast<std::size_t>(g.fc_neurons) + static_cast<std::size_t>(g.fc_neurons);
    total += static_cast<std::size_t>(g.fc_neurons) * num_classes +
             static_cast<std::size_t>(num_classes);
    return total;
}

void extract_weights(Genome& g, const Network& net) {
    const auto& ops = net.layers();
    std::size_t i = 0;
    auto expect = [&](const char* what) -> const LayerOp& {
        if (i >= ops.size()) {
            throw StructuralError(std::string("extract_weights: network ends before ") + what);
        }
        return ops[i++];
    };
    for (auto& gene : g.genes) {
        if (auto* conv = std::get_if<ConvGene>(&gene)) {
            const auto* cop = std::get_if<ConvOp>(&expect("conv"));
            const auto* bop = std::get_if<BatchNormOp>(&expect("batchnorm"));
            const auto* rop = std::get_if<ReluOp>(&expect("relu"));
            if (!cop || !bop || !rop) {
                throw StructuralError("extract_weights: network does not match genome layout");
            }
            conv->weights = ConvGeneWeights{cop->w, cop->b, bop->gamma, bop->beta,
                                            bop->running_mean, bop->running_var};
        } else {
            if (!std::get_if<PoolOp>(&expect("pool"))) {
                throw StructuralError("extract_weights: network does not match genome layout");
            }
        }
    }
    if (!std::get_if<FlattenOp>(&expect("flatten"))) {
        throw StructuralError("extract_weights: network does not match genome layout");
    }
    const auto* fc1 = std::get_if<FcOp>(&expect("fc1"));
    const auto* fc2 = std::get_if<FcOp>(&expect("fc2"));
    if (!fc1 || !fc2) {
        throw StructuralError("extract_weights: network does not match genome layout");
    }
    g.fc1_weights = DenseWeights{fc1->w, fc1->b};
    g.fc2_weights = DenseWeights{fc2->w, fc2->b};
}

namespace {

void put_u8(std::vector<uint8_t>& out, uint8_t v) { out.push_back(v); }

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xff));
    out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int s = 0; s < 32; s += 8) out.push_back(static_cast<uint8_t>((v >> s) & 0xff));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int s = 0; s < 64; s += 8) out.push_back(static_cast<uint8_t>((v >> s) & 0xff));
}

void put_f32(std::vector<uint8_t>& out, float v) { put_u32(out, std::bit_cast<uint32_t>(v)); }

void put_tensor(std::vector<uint8_t>& out, const Tensor& t) {
    put_u8(out, static_cast<uint8_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u32(out, static_cast<uint32_t>(t.dim(i)));
    for (std::size_t i = 0; i < t.size(); ++i) put_f32(out, t[i]);
}

struct ByteReader {
    const std::vector<uint8_t>& bytes;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > bytes.size()) throw FormatError("genome checkpoint truncated");
    }
    uint8_t u8() {
        need(1);
        return bytes[pos++];
    }
    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int s = 0; s < 32; s += 8) v |= static_cast<uint32_t>(bytes[pos++]) << s;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int s = 0; s < 64; s += 8) v |= static_cast<uint64_t>(bytes[pos++]) << s;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
};

Tensor get_tensor(ByteReader& r) {
    const int rank = r.u8();
    if (rank == 0) return Tensor();
    if (rank > 4) throw FormatError("genome checkpoint: tensor rank " + std::to_string(rank));
    std::vector<int> shape(static_cast<std::size_t>(rank));
    std::size_t numel = 1;
    for (int i = 0; i < rank; ++i) {
        const uint32_t d = r.u32();
        if (d == 0 || d > (1u << 24)) {
            throw FormatError("genome checkpoint: bad tensor dimension " + std::to_string(d));
        }
        shape[static_cast<std::size_t>(i)] = static_cast<int>(d);
        numel *= d;
    }
    std::vector<float> data(numel);
    for (std::size_t i = 0; i < numel; ++i) data[i] = r.f32();
    return Tensor(std::move(shape), std::move(data));
}

} // namespace

std::vector<uint8_t> serialize(const Genome& g) {
    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u16(out, kFormatVersion);
    put_u64(out, g.header.id);
    put_u32(out, static_cast<uint32_t>(g.header.age));
    put_f32(out, g.header.learning_rate);
    put_u32(out, static_cast<uint32_t>(g.fc_neurons));
    put_u64(out, g.fc1_seed);
    put_u64(out, g.fc2_seed);

    put_u32(out, static_cast<uint32_t>(g.genes.size()));
    for (const auto& gene : g.genes) {
        if (const auto* conv = std::get_if<ConvGene>(&gene)) {
            put_u8(out, 0);
            put_u8(out, static_cast<uint8_t>(conv->kernel));
            put_u16(out, static_cast<uint16_t>(conv->filters));
            put_u8(out, static_cast<uint8_t>(conv->stride));
            put_u8(out, static_cast<uint8_t>(conv->padding));
            put_u64(out, conv->init_seed);
            put_u8(out, conv->weights ? 1 : 0);
            if (conv->weights) {
                put_tensor(out, conv->weights->w);
                put_tensor(out, conv->weights->b);
                put_tensor(out, conv->weights->gamma);
                put_tensor(out, conv->weights->beta);
                put_tensor(out, conv->weights->running_mean);
                put_tensor(out, conv->weights->running_var);
            }
        } else {
            const auto& pool = std::get<PoolGene>(gene);
            put_u8(out, 1);
            put_u8(out, static_cast<uint8_t>(pool.pool));
            put_u8(out, static_cast<uint8_t>(pool.stride));
            put_u8(out, static_cast<uint8_t>(pool.kind));
        }
    }
    for (const auto& fc : {g.fc1_weights, g.fc2_weights}) {
        put_u8(out, fc ? 1 : 0);
        if (fc) {
            put_tensor(out, fc->w);
            put_tensor(out, fc->b);
        }
    }
    return out;
}

Genome deserialize(const std::vector<uint8_t>& bytes) {
    ByteReader r{bytes};
    r.need(6);
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError("not a genome checkpoint (bad magic)");
    }
    r.pos = 4;
    const uint16_t version = r.u16();
    if (version != kFormatVersion) {
        throw FormatError("unsupported genome checkpoint version " + std::to_string(version));
    }
    Genome g;
    g.header.id = r.u64();
    g.header.age = static_cast<int>(r.u32());
    g.header.learning_rate = r.f32();
    g.fc_neurons = static_cast<int>(r.u32());
    g.fc1_seed = r.u64();
    g.fc2_seed = r.u64();

    const uint32_t n_genes = r.u32();
    if (n_genes > 1024) {
        throw FormatError("genome checkpoint: implausible gene count " + std::to_string(n_genes));
    }
    for (uint32_t i = 0; i < n_genes; ++i) {
        const uint8_t type = r.u8();
        if (type == 0) {
            ConvGene conv;
            conv.kernel = r.u8();
            conv.filters = r.u16();
            conv.stride = r.u8();
            const uint8_t pad = r.u8();
            if (pad > 1) throw FormatError("genome checkpoint: bad padding byte");
            conv.padding = static_cast<Padding>(pad);
            conv.init_seed = r.u64();
            if (r.u8()) {
                ConvGeneWeights cw;
                cw.w = get_tensor(r);
                cw.b = get_tensor(r);
                cw.gamma = get_tensor(r);
                cw.beta = get_tensor(r);
                cw.running_mean = get_tensor(r);
                cw.running_var = get_tensor(r);
                conv.weights = std::move(cw);
            }
            g.genes.push_back(std::move(conv));
        } else if (type == 1) {
            PoolGene pool;
            pool.pool = r.u8();
            pool.stride = r.u8();
            const uint8_t kind = r.u8();
            if (kind > 1) throw FormatError("genome checkpoint: bad pool kind byte");
            pool.kind = static_cast<PoolKind>(kind);
            g.genes.push_back(pool);
        } else {
            throw FormatError("genome checkpoint: unknown gene type " + std::to_string(type));
        }
    }
    for (auto* slot : {&g.fc1_weights, &g.fc2_weights}) {
        if (r.u8()) {
            DenseWeights dw;
            dw.w = get_tensor(r);
            dw.b = get_tensor(r);
            *slot = std::move(dw);
        }
    }
    if (r.pos != bytes.size()) {
        throw FormatError("genome checkpoint: trailing bytes after payload");
    }
    return g;
}

void save_genome(const Genome& g, const std::string& path) {
    const auto bytes = serialize(g);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing " + path);
}

Genome load_genome(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

std::string genome_summary(const Genome& g, const std::vector<int>& input_shape, int num_classes) {
    char line[160];
    std::string out;
    std::snprintf(line, sizeof(line), "genome id=%llu age=%d lr=%.4g\n",
                  static_cast<unsigned long long>(g.header.id), g.header.age,
                  static_cast<double>(g.header.learning_rate));
    out += line;
    int c = input_shape[0], h = input_shape[1], w = input_shape[2];
    std::snprintf(line, sizeof(line), "  input                          %dx%dx%d\n", c, h, w);
    out += line;
    for (const auto& gene : g.genes) {
        if (const auto* conv = std::get_if<ConvGene>(&gene)) {
            const auto geom = kernels::conv_geometry(c, h, w, conv->kernel, conv->filters,
                                                     conv->stride, conv->padding);
            const std::size_t params =
                static_cast<std::size_t>(conv->kernel) * conv->kernel * c * conv->filters +
                conv->filters;
            std::snprintf(line, sizeof(line),
                          "  conv k%d f%-3d s%d %-5s          %dx%dx%d   params %zu (+%d bn)\n",
                          conv->kernel, conv->filters, conv->stride,
                          conv->padding == Padding::same ? "same" : "valid", geom.out_c, geom.out_h,
                          geom.out_w, params, 2 * conv->filters);
            out += line;
            c = geom.out_c;
            h = geom.out_h;
            w = geom.out_w;
        } else {
            const auto& pool = std::get<PoolGene>(gene);
            const auto geom = kernels::pool_geometry(c, h, w, pool.pool, pool.stride);
            std::snprintf(line, sizeof(line), "  %spool p%d s%d                  %dx%dx%d\n",
                          pool.kind == PoolKind::max ? "max" : "avg", pool.pool, pool.stride, c,
                          geom.out_h, geom.out_w);
            out += line;
            h = geom.out_h;
            w = geom.out_w;
        }
    }
    const int flat = c * h * w;
    std::snprintf(line, sizeof(line), "  flatten                        %d\n", flat);
    out += line;
    std::snprintf(line, sizeof(line), "  fc %d -> %-5d                 params %zu\n", flat,
                  g.fc_neurons,
                  static_cast<std::size_t>(flat) * g.fc_neurons + g.fc_neurons);
    out += line;
    std::snprintf(line, sizeof(line), "  fc %d -> %-5d                 params %zu\n", g.fc_neurons,
                  num_classes,
                  static_cast<std::size_t>(g.fc_neurons) * num_classes + num_classes);
    out += line;
    std::snprintf(line, sizeof(line), "  softmax                        %d\n  total params %zu\n",
                  num_classes, count_params(g, input_shape, num_classes));
    out += line;
    return out;
}

} // namespace evocnn
