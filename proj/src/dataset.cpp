#include "evocnn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "evocnn/errors.hpp"

namespace evocnn {

namespace {

// Domain tags so the same user seed yields independent streams for the
// corpus split and the subsample draw.
constexpr uint64_t kSplitTag = 0x73706c6974ull;      // "split"
constexpr uint64_t kSubsampleTag = 0x737562ull;      // "sub"

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    in.seekg(0, std::ios::end);
    const auto len = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<uint8_t> bytes(static_cast<std::size_t>(len));
    if (len > 0) in.read(reinterpret_cast<char*>(bytes.data()), len);
    if (!in) throw DataError("failed reading " + path);
    return bytes;
}

uint32_t read_be32(const std::vector<uint8_t>& b, std::size_t off) {
    return (static_cast<uint32_t>(b[off]) << 24) | (static_cast<uint32_t>(b[off + 1]) << 16) |
           (static_cast<uint32_t>(b[off + 2]) << 8) | static_cast<uint32_t>(b[off + 3]);
}

inline float normalize_pixel(uint8_t p) { return static_cast<float>(p) / 127.5f - 1.0f; }

} // namespace

LabeledImageSet load_idx_pair(const std::string& images_path, const std::string& labels_path) {
    const auto img_bytes = read_file(images_path);
    if (img_bytes.size() < 16) throw FormatError(images_path + ": truncated IDX header");
    if (read_be32(img_bytes, 0) != 0x00000803u) {
        throw FormatError(images_path + ": bad IDX image magic");
    }
    const uint32_t n = read_be32(img_bytes, 4);
    const uint32_t h = read_be32(img_bytes, 8);
    const uint32_t w = read_be32(img_bytes, 12);
    const std::size_t want = 16 + static_cast<std::size_t>(n) * h * w;
    if (img_bytes.size() != want) {
        throw FormatError(images_path + ": expected " + std::to_string(want) + " bytes, got " +
                          std::to_string(img_bytes.size()));
    }

    const auto lbl_bytes = read_file(labels_path);
    if (lbl_bytes.size() < 8) throw FormatError(labels_path + ": truncated IDX header");
    if (read_be32(lbl_bytes, 0) != 0x00000801u) {
        throw FormatError(labels_path + ": bad IDX label magic");
    }
    const uint32_t n_labels = read_be32(lbl_bytes, 4);
    if (lbl_bytes.size() != 8 + static_cast<std::size_t>(n_labels)) {
        throw FormatError(labels_path + ": label payload does not match header count");
    }
    if (n_labels != n) {
        throw FormatError(labels_path + ": " + std::to_string(n_labels) + " labels for " +
                          std::to_string(n) + " images in " + images_path);
    }

    LabeledImageSet set;
    set.images = Tensor({static_cast<int>(n), 1, static_cast<int>(h), static_cast<int>(w)});
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * h * w; ++i) {
        set.images[i] = normalize_pixel(img_bytes[16 + i]);
    }
    set.labels.resize(n);
    for (uint32_t i = 0; i < n; ++i) {
        const uint8_t v = lbl_bytes[8 + i];
        if (v > 9) {
            throw FormatError(labels_path + ": label " + std::to_string(v) + " at index " +
                              std::to_string(i) + " out of range 0-9");
        }
        set.labels[i] = v;
    }
    return set;
}

LabeledImageSet load_mnist(const std::string& dir) {
    const auto train = load_idx_pair(dir + "/train-images-idx3-ubyte",
                                     dir + "/train-labels-idx1-ubyte");
    const auto test = load_idx_pair(dir + "/t10k-images-idx3-ubyte",
                                    dir + "/t10k-labels-idx1-ubyte");
    return concat(train, test);
}

LabeledImageSet load_cifar10_batch(const std::string& path) {
    constexpr std::size_t record = 1 + 3 * 32 * 32;
    const auto bytes = read_file(path);
    if (bytes.empty() || bytes.size() % record != 0) {
        throw FormatError(path + ": length " + std::to_string(bytes.size()) +
                          " is not a positive multiple of " + std::to_string(record));
    }
    const int n = static_cast<int>(bytes.size() / record);
    LabeledImageSet set;
    set.images = Tensor({n, 3, 32, 32});
    set.labels.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const uint8_t* rec = bytes.data() + static_cast<std::size_t>(i) * record;
        if (rec[0] > 9) {
            throw FormatError(path + ": label " + std::to_string(rec[0]) + " in record " +
                              std::to_string(i) + " out of range 0-9");
        }
        set.labels[static_cast<std::size_t>(i)] = rec[0];
        // Record pixels are already stored as R-plane, G-plane, B-plane.
        float* dst = set.images.data() + set.images.idx4(i, 0, 0, 0);
        for (std::size_t p = 0; p < 3 * 32 * 32; ++p) dst[p] = normalize_pixel(rec[1 + p]);
    }
    return set;
}

LabeledImageSet load_cifar10(const std::string& dir) {
    LabeledImageSet pooled;
    const char* names[] = {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
                           "data_batch_4.bin", "data_batch_5.bin", "test_batch.bin"};
    for (const char* name : names) {
        const auto batch = load_cifar10_batch(dir + "/" + std::string(name));
        pooled = pooled.count() == 0 ? batch : concat(pooled, batch);
    }
    return pooled;
}

LabeledImageSet concat(const LabeledImageSet& a, const LabeledImageSet& b) {
    if (a.count() == 0) return b;
    if (b.count() == 0) return a;
    if (a.images.rank() != 4 || b.images.rank() != 4 || a.images.dim(1) != b.images.dim(1) ||
        a.images.dim(2) != b.images.dim(2) || a.images.dim(3) != b.images.dim(3)) {
        throw StructuralError("concat: incompatible image shapes " +
                              shape_string(a.images.shape()) + " vs " +
                              shape_string(b.images.shape()));
    }
    LabeledImageSet out;
    out.images = Tensor({a.count() + b.count(), a.images.dim(1), a.images.dim(2),
                         a.images.dim(3)});
    std::copy_n(a.images.data(), a.images.size(), out.images.data());
    std::copy_n(b.images.data(), b.images.size(), out.images.data() + a.images.size());
    out.labels = a.labels;
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    return out;
}

namespace {

LabeledImageSet gather(const LabeledImageSet& set, const std::vector<int>& indices) {
    LabeledImageSet out;
    if (indices.empty()) return out;
    const std::size_t sample = set.images.size() / static_cast<std::size_t>(set.count());
    out.images = Tensor({static_cast<int>(indices.size()), set.images.dim(1), set.images.dim(2),
                         set.images.dim(3)});
    out.labels.resize(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::size_t src = static_cast<std::size_t>(indices[i]);
        std::copy_n(set.images.data() + src * sample, sample, out.images.data() + i * sample);
        out.labels[i] = set.labels[src];
    }
    return out;
}

} // namespace

DatasetSplit split(const LabeledImageSet& pooled, uint64_t seed) {
    const int n = pooled.count();
    if (n < 20) throw DataError("split needs at least 20 samples, got " + std::to_string(n));
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng(derive_seed(seed, kSplitTag));
    rng.shuffle(order);

    const int n_train = static_cast<int>(std::llround(0.75 * n));
    const int n_test = static_cast<int>(std::llround(0.10 * n));
    const int n_val = n - n_train - n_test;

    DatasetSplit out;
    out.train = gather(pooled, {order.begin(), order.begin() + n_train});
    out.test = gather(pooled, {order.begin() + n_train, order.begin() + n_train + n_test});
    out.val = gather(pooled, {order.begin() + n_train + n_test, order.end()});
    (void)n_val;
    return out;
}

LabeledImageSet subsample(const LabeledImageSet& set, int n, uint64_t seed) {
    const int total = set.count();
    if (n < 1 || n > total) {
        throw ConfigError("subsample size " + std::to_string(n) + " out of range 1-" +
                          std::to_string(total));
    }
    if (n == total) return set;

    // Bucket indices by class, keep per-class order deterministic.
    std::vector<std::vector<int>> by_class;
    for (int i = 0; i < total; ++i) {
        const int c = set.labels[static_cast<std::size_t>(i)];
        if (static_cast<std::size_t>(c) >= by_class.size()) by_class.resize(c + 1);
        by_class[static_cast<std::size_t>(c)].push_back(i);
    }

    // Per-class quota proportional to class frequency, fractional seats
    // assigned by largest remainder (ties to the lower class id).
    const std::size_t classes = by_class.size();
    std::vector<int> quota(classes, 0);
    std::vector<std::pair<double, std::size_t>> remainders;
    int assigned = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        const double exact =
            static_cast<double>(n) * static_cast<double>(by_class[c].size()) / total;
        quota[c] = static_cast<int>(exact);
        assigned += quota[c];
        remainders.push_back({exact - quota[c], c});
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (int i = 0; i < n - assigned; ++i) {
        quota[remainders[static_cast<std::size_t>(i) % classes].second] += 1;
    }
    // Rounding can leave a quota above the class size; shift the surplus to
    // the largest classes with headroom.
    for (std::size_t c = 0; c < classes; ++c) {
        int over = quota[c] - static_cast<int>(by_class[c].size());
        if (over <= 0) continue;
        quota[c] -= over;
        for (std::size_t d = 0; d < classes && over > 0; ++d) {
            const int room = static_cast<int>(by_class[d].size()) - quota[d];
            const int take = std::min(room, over);
            quota[d] += take;
            over -= take;
        }
    }

    Rng rng(derive_seed(seed, kSubsampleTag));
    std::vector<int> chosen;
    chosen.reserve(static_cast<std::size_t>(n));
    for (std::size_t c = 0; c < classes; ++c) {
        auto& pool = by_class[c];
        rng.shuffle(pool);
        chosen.insert(chosen.end(), pool.begin(), pool.begin() + quota[c]);
    }
    std::sort(chosen.begin(), chosen.end());
    return gather(set, chosen);
}

std::vector<int> shuffle_epoch(const LabeledImageSet& set, Rng& rng) {
    std::vector<int> order(static_cast<std::size_t>(set.count()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);
    return order;
}

} // namespace evocnn
