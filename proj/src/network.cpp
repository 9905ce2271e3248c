#include "evocnn/network.hpp"

#include <cmath>
#include <numeric>

#include "evocnn/errors.hpp"

namespace evocnn {

void glorot_fill(Tensor& w, int fan_in, int fan_out, Rng& rng) {
    const double s = std::sqrt(6.0 / (static_cast<double>(fan_in) + static_cast<double>(fan_out)));
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = static_cast<float>(rng.uniform(-s, s));
    }
}

Network::Network(std::vector<int> input_shape) : input_shape_(std::move(input_shape)) {
    if (input_shape_.size() != 3 || input_shape_[0] < 1 || input_shape_[1] < 1 ||
        input_shape_[2] < 1) {
        throw StructuralError("network input shape must be {channels, height, width}, got " +
                              shape_string(input_shape_));
    }
    shape_ = input_shape_;
}

namespace {

void require_spatial(const std::vector<int>& shape, const char* op) {
    if (shape.size() != 3) {
        throw StructuralError(std::string(op) + " requires a spatial activation, current shape " +
                              shape_string(shape));
    }
}

} // namespace

void Network::add_conv(int kernel, int filters, int stride, Padding padding, Tensor w, Tensor b) {
    require_spatial(shape_, "conv");
    const auto g = kernels::conv_geometry(shape_[0], shape_[1], shape_[2], kernel, filters, stride,
                                          padding);
    const std::vector<int> want_w{filters, shape_[0], kernel, kernel};
    if (w.shape() != want_w || b.shape() != std::vector<int>{filters}) {
        throw StructuralError("conv weights " + shape_string(w.shape()) + " / bias " +
                              shape_string(b.shape()) + " do not match geometry " +
                              shape_string(want_w));
    }
    ops_.push_back(ConvOp{g, padding, std::move(w), std::move(b)});
    shape_ = {g.out_c, g.out_h, g.out_w};
}

void Network::add_batchnorm(Tensor gamma, Tensor beta, Tensor running_mean, Tensor running_var) {
    require_spatial(shape_, "batchnorm");
    const std::vector<int> want{shape_[0]};
    if (gamma.shape() != want || beta.shape() != want || running_mean.shape() != want ||
        running_var.shape() != want) {
        throw StructuralError("batchnorm parameter shapes do not match " + std::to_string(shape_[0]) +
                              " channels");
    }
    ops_.push_back(BatchNormOp{std::move(gamma), std::move(beta), std::move(running_mean),
                               std::move(running_var)});
}

void Network::add_relu() { ops_.push_back(ReluOp{}); }

void Network::add_pool(PoolKind kind, int pool, int stride) {
    require_spatial(shape_, "pool");
    const auto g = kernels::pool_geometry(shape_[0], shape_[1], shape_[2], pool, stride);
    ops_.push_back(PoolOp{g, kind});
    shape_ = {g.channels, g.out_h, g.out_w};
}

void Network::add_flatten() {
    require_spatial(shape_, "flatten");
    const int features = shape_[0] * shape_[1] * shape_[2];
    ops_.push_back(FlattenOp{features});
    shape_ = {features};
}

void Network::add_fc(Tensor w, Tensor b) {
    if (shape_.size() != 1) {
        throw StructuralError("fc requires a flattened activation, current shape " +
                              shape_string(shape_));
    }
    if (w.rank() != 2 || w.dim(1) != shape_[0] || b.shape() != std::vector<int>{w.dim(0)}) {
        throw StructuralError("fc weights " + shape_string(w.shape()) + " do not match " +
                              std::to_string(shape_[0]) + " input features");
    }
    const int out = w.dim(0);
    ops_.push_back(FcOp{std::move(w), std::move(b)});
    shape_ = {out};
}

void Network::add_softmax() {
    if (shape_.size() != 1) {
        throw StructuralError("softmax requires a flattened activation");
    }
    ops_.push_back(SoftmaxOp{});
}

std::size_t Network::param_count() const {
    std::size_t total = 0;
    for (const auto& op : ops_) {
        if (const auto* conv = std::get_if<ConvOp>(&op)) {
            total += conv->w.size() + conv->b.size();
        } else if (const auto* bn = std::get_if<BatchNormOp>(&op)) {
            total += bn->gamma.size() + bn->beta.size();
        } else if (const auto* fc = std::get_if<FcOp>(&op)) {
            total += fc->w.size() + fc->b.size();
        }
    }
    return total;
}

// Per-batch forward state kept for the backward pass: the input to every op
// plus the batch-norm normalization caches.
struct Network::ForwardCache {
    std::vector<Tensor> inputs;  // inputs[i] = activation entering op i
    Tensor output;               // network output (probabilities)
    std::vector<kernels::BatchNormCache<float>> bn;  // parallel to ops holding a BatchNormOp
};

Tensor Network::forward(const Tensor& x, bool training, const NumericMode& mode,
                        ForwardCache* cache) {
    if (x.rank() != 4 || x.dim(1) != input_shape_[0] || x.dim(2) != input_shape_[1] ||
        x.dim(3) != input_shape_[2]) {
        throw StructuralError("forward: batch shape " + shape_string(x.shape()) +
                              " does not match network input " + shape_string(input_shape_));
    }
    const bool fx = mode.kind == NumericMode::Kind::fx16 && !training;
    Tensor cur = x;
    if (cache) {
        cache->inputs.clear();
        cache->bn.clear();
    }
    for (auto& op : ops_) {
        if (cache) cache->inputs.push_back(cur);
        Tensor next;
        if (auto* conv = std::get_if<ConvOp>(&op)) {
            if (fx) {
                kernels::conv_forward_fx(cur, conv->w, conv->b, conv->geom, mode.format, next);
            } else {
                kernels::conv_forward(cur, conv->w, conv->b, conv->geom, next);
            }
        } else if (auto* bn = std::get_if<BatchNormOp>(&op)) {
            kernels::BatchNormCache<float> bc;
            kernels::batchnorm_forward(cur, bn->gamma, bn->beta, bn->running_mean, bn->running_var,
                                       bn->momentum, bn->epsilon, training, next,
                                       cache ? &bc : nullptr);
            if (cache) cache->bn.push_back(std::move(bc));
        } else if (std::get_if<ReluOp>(&op)) {
            kernels::relu_forward(cur, next);
        } else if (auto* pool = std::get_if<PoolOp>(&op)) {
            kernels::pool_forward(cur, pool->geom, pool->kind, next);
        } else if (auto* flat = std::get_if<FlattenOp>(&op)) {
            next = Tensor({cur.dim(0), flat->features}, cur.take_data());
        } else if (auto* fc = std::get_if<FcOp>(&op)) {
            if (fx) {
                kernels::fc_forward_fx(cur, fc->w, fc->b, mode.format, next);
            } else {
                kernels::fc_forward(cur, fc->w, fc->b, next);
            }
        } else {
            kernels::softmax_forward(cur, next);
        }
        cur = std::move(next);
    }
    if (cache) cache->output = cur;
    return cur;
}

Tensor Network::infer(const Tensor& x, const NumericMode& mode) {
    return forward(x, /*training=*/false, mode, nullptr);
}

// Backward through the cached forward pass; updates parameters in place with
// a plain SGD step and returns the batch loss.
double Network::backward_and_step(const ForwardCache& cache, const std::vector<int>& labels,
                                  float learning_rate) {
    const Tensor& probs = cache.output;
    const int n_batch = probs.dim(0);
    const int classes = probs.dim(1);
    const double loss = kernels::cross_entropy(probs, labels);

    // Softmax + cross-entropy gradient wrt the final FC output.
    Tensor grad({n_batch, classes});
    const float inv_n = 1.0f / static_cast<float>(n_batch);
    for (int n = 0; n < n_batch; ++n) {
        for (int c = 0; c < classes; ++c) {
            const float p = probs[static_cast<std::size_t>(n) * classes + c];
            const float target = (labels[static_cast<std::size_t>(n)] == c) ? 1.0f : 0.0f;
            grad[static_cast<std::size_t>(n) * classes + c] = (p - target) * inv_n;
        }
    }

    std::size_t bn_index = cache.bn.size();
    const float lr = learning_rate;
    for (std::size_t i = ops_.size(); i-- > 0;) {
        const Tensor& input = cache.inputs[i];
        Tensor gx;
        if (auto* conv = std::get_if<ConvOp>(&ops_[i])) {
            Tensor gw, gb;
            kernels::conv_backward(input, conv->w, conv->geom, grad, gx, gw, gb, i != 0);
            for (std::size_t k = 0; k < conv->w.size(); ++k) conv->w[k] -= lr * gw[k];
            for (std::size_t k = 0; k < conv->b.size(); ++k) conv->b[k] -= lr * gb[k];
        } else if (auto* bn = std::get_if<BatchNormOp>(&ops_[i])) {
            --bn_index;
            Tensor ggamma, gbeta;
            kernels::batchnorm_backward(grad, cache.bn[bn_index], bn->gamma, gx, ggamma, gbeta);
            for (std::size_t k = 0; k < bn->gamma.size(); ++k) bn->gamma[k] -= lr * ggamma[k];
            for (std::size_t k = 0; k < bn->beta.size(); ++k) bn->beta[k] -= lr * gbeta[k];
        } else if (std::get_if<ReluOp>(&ops_[i])) {
            kernels::relu_backward(input, grad, gx);
        } else if (auto* pool = std::get_if<PoolOp>(&ops_[i])) {
            kernels::pool_backward(input, pool->geom, pool->kind, grad, gx);
        } else if (std::get_if<FlattenOp>(&ops_[i])) {
            gx = Tensor(input.shape(), grad.take_data());
        } else if (auto* fc = std::get_if<FcOp>(&ops_[i])) {
            Tensor gw, gb;
            kernels::fc_backward(input, fc->w, grad, gx, gw, gb);
            for (std::size_t k = 0; k < fc->w.size(); ++k) fc->w[k] -= lr * gw[k];
            for (std::size_t k = 0; k < fc->b.size(); ++k) fc->b[k] -= lr * gb[k];
        } else {
            // Softmax: its gradient is already folded into the loss gradient.
            gx = grad;
        }
        grad = std::move(gx);
    }
    return loss;
}

TrainStatus Network::train(const Tensor& images, const std::vector<int>& labels,
                           const SGDConfig& cfg, Rng& rng) {
    const int n = images.dim(0);
    if (static_cast<std::size_t>(n) != labels.size()) {
        throw StructuralError("train: " + std::to_string(n) + " images vs " +
                              std::to_string(labels.size()) + " labels");
    }
    if (cfg.epochs < 1 || cfg.batch_size < 1) {
        throw ConfigError("train: epochs and batch_size must be positive");
    }
    TrainStatus status;
    const std::size_t sample = images.size() / static_cast<std::size_t>(n);
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (int start = 0; start < n; start += cfg.batch_size) {
            const int bsz = std::min(cfg.batch_size, n - start);
            Tensor batch({bsz, input_shape_[0], input_shape_[1], input_shape_[2]});
            std::vector<int> batch_labels(static_cast<std::size_t>(bsz));
            for (int j = 0; j < bsz; ++j) {
                const int src = order[static_cast<std::size_t>(start + j)];
                std::copy_n(images.data() + static_cast<std::size_t>(src) * sample, sample,
                            batch.data() + static_cast<std::size_t>(j) * sample);
                batch_labels[static_cast<std::size_t>(j)] = labels[static_cast<std::size_t>(src)];
            }
            ForwardCache cache;
            forward(batch, /*training=*/true, NumericMode::fp(), &cache);
            const double loss = backward_and_step(cache, batch_labels, cfg.learning_rate);
            ++status.batches_run;
            status.last_loss = loss;
            if (!std::isfinite(loss)) {
                status.diverged = true;
                return status;
            }
        }
    }
    return status;
}

std::vector<int> Network::predict_labels(const Tensor& probs) {
    const int n = probs.dim(0);
    const int classes = probs.dim(1);
    std::vector<int> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const float* row = probs.data() + static_cast<std::size_t>(i) * classes;
        int best = 0;
        for (int c = 1; c < classes; ++c) {
            if (row[c] > row[best]) best = c;
        }
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

double Network::evaluate_accuracy(const Tensor& images, const std::vector<int>& labels,
                                  const NumericMode& mode, int batch_size) {
    const int n = images.dim(0);
    if (static_cast<std::size_t>(n) != labels.size()) {
        throw StructuralError("evaluate_accuracy: image/label count mismatch");
    }
    if (n == 0) return 0.0;
    const std::size_t sample = images.size() / static_cast<std::size_t>(n);
    long correct = 0;
    for (int start = 0; start < n; start += batch_size) {
        const int bsz = std::min(batch_size, n - start);
        Tensor batch({bsz, input_shape_[0], input_shape_[1], input_shape_[2]});
        std::copy_n(images.data() + static_cast<std::size_t>(start) * sample,
                    sample * static_cast<std::size_t>(bsz), batch.data());
        const Tensor probs = infer(batch, mode);
        const auto pred = predict_labels(probs);
        for (int j = 0; j < bsz; ++j) {
            if (pred[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(start + j)]) {
                ++correct;
            }
        }
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

} // namespace evocnn
