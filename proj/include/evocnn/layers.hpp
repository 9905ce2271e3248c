#pragma once

// Concrete layer states a network is assembled from. Each op owns its
// parameters; shape bookkeeping lives in Network, which validates every op
// against the running activation shape as it is appended.

#include <cstdint>
#include <variant>

#include "evocnn/kernels.hpp"
#include "evocnn/tensor.hpp"

namespace evocnn {

// Which arithmetic the forward pass uses for conv / fully-connected
// multiplications. Training always runs in real arithmetic; fx16 only
// changes inference.
struct NumericMode {
    enum class Kind : uint8_t { fp = 0, fx16 = 1 };
    Kind kind = Kind::fp;
    FxFormat format{};  // consulted only when kind == fx16

    static NumericMode fp() { return NumericMode{}; }
    static NumericMode fx(FxFormat f) { return NumericMode{Kind::fx16, f}; }
};

struct ConvOp {
    kernels::ConvGeometry geom;
    Padding padding = Padding::valid;
    Tensor w;  // [filters, in_c, k, k]
    Tensor b;  // [filters]
};

struct BatchNormOp {
    Tensor gamma, beta;              // [channels], trained
    Tensor running_mean, running_var;  // [channels], tracked, not trained
    float momentum = 0.99f;
    float epsilon = 1e-5f;
};

struct ReluOp {};

struct PoolOp {
    kernels::PoolGeometry geom;
    PoolKind kind = PoolKind::max;
};

struct FlattenOp {
    int features = 0;  // C*H*W at this point in the stack
};

struct FcOp {
    Tensor w;  // [out, in]
    Tensor b;  // [out]
};

struct SoftmaxOp {};

using LayerOp = std::variant<ConvOp, BatchNormOp, ReluOp, PoolOp, FlattenOp, FcOp, SoftmaxOp>;

} // namespace evocnn
