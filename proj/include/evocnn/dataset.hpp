#pragma once

// Image corpus ingestion: MNIST IDX files and CIFAR-10 binary batches,
// pixel normalization to [-1, 1], the shuffled 75/10/15 train/test/val
// split, and seeded stratified subsampling for desk-scale runs.

#include <cstdint>
#include <string>
#include <vector>

#include "evocnn/rng.hpp"
#include "evocnn/tensor.hpp"

namespace evocnn {

struct LabeledImageSet {
    Tensor images;            // [N, C, H, W], values in [-1, 1]
    std::vector<int> labels;  // N entries in [0, 9]

    int count() const { return images.empty() ? 0 : images.dim(0); }
};

struct DatasetSplit {
    LabeledImageSet train;  // 75%
    LabeledImageSet test;   // 10%, drives fitness during evolution
    LabeledImageSet val;    // 15%, reported for the final best network
};

// Reads the four standard IDX files (train-images-idx3-ubyte,
// train-labels-idx1-ubyte, t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte)
// from dir and returns the pooled 70000-image corpus. Throws FormatError
// naming the offending file on a bad magic, truncation, out-of-range label,
// or image/label count mismatch; DataError if a file cannot be opened.
LabeledImageSet load_mnist(const std::string& dir);

// Reads one IDX image/label file pair; exposed for fixture-based tests.
LabeledImageSet load_idx_pair(const std::string& images_path, const std::string& labels_path);

// Reads the six CIFAR-10 binary batches (data_batch_1.bin ... data_batch_5.bin,
// test_batch.bin) from dir: records of 1 label byte + 3072 pixel bytes
// (R, G, B planes). Returns the pooled 60000-image corpus.
LabeledImageSet load_cifar10(const std::string& dir);

// Reads one CIFAR-10 binary batch file; exposed for fixture-based tests.
LabeledImageSet load_cifar10_batch(const std::string& path);

// Seeded uniform shuffle of the whole set, then a contiguous
// train 75% / test 10% / val 15% cut (counts rounded to nearest, val takes
// the remainder; sets are disjoint by construction).
DatasetSplit split(const LabeledImageSet& pooled, uint64_t seed);

// Seeded class-stratified sample of n items (per-class quotas by largest
// remainder, drawn uniformly inside each class). n > N is a ConfigError.
LabeledImageSet subsample(const LabeledImageSet& set, int n, uint64_t seed);

// Uniform permutation of sample indices for one training pass.
std::vector<int> shuffle_epoch(const LabeledImageSet& set, Rng& rng);

// Concatenates b onto a (shapes must agree except in N).
LabeledImageSet concat(const LabeledImageSet& a, const LabeledImageSet& b);

} // namespace evocnn
