#pragma once

// A sequential CNN: conv/batch-norm/relu/pool blocks, a flatten, two
// fully-connected layers and a softmax. Built incrementally through add_*
// calls that validate against the running activation shape, trained with
// plain minibatch SGD on cross-entropy, and evaluated in either real or
// emulated fixed-point arithmetic.

#include <cstdint>
#include <vector>

#include "evocnn/layers.hpp"
#include "evocnn/rng.hpp"
#include "evocnn/tensor.hpp"

namespace evocnn {

struct SGDConfig {
    int epochs = 1;
    int batch_size = 32;
    float learning_rate = 0.1f;
};

// Outcome of a training call. A non-finite batch loss aborts the remaining
// batches and reports diverged; the caller decides what that means (the
// evolution loop scores such a network zero).
struct TrainStatus {
    bool diverged = false;
    double last_loss = 0.0;
    int batches_run = 0;
};

// Fills a weight tensor uniformly in [-s, s] with s = sqrt(6/(fan_in+fan_out)).
void glorot_fill(Tensor& w, int fan_in, int fan_out, Rng& rng);

class Network {
  public:
    // input_shape is {channels, height, width} of one sample.
    explicit Network(std::vector<int> input_shape);

    // Builders; each validates against the current activation shape and
    // throws StructuralError when the op cannot be applied.
    void add_conv(int kernel, int filters, int stride, Padding padding, Tensor w, Tensor b);
    void add_batchnorm(Tensor gamma, Tensor beta, Tensor running_mean, Tensor running_var);
    void add_relu();
    void add_pool(PoolKind kind, int pool, int stride);
    void add_flatten();
    void add_fc(Tensor w, Tensor b);
    void add_softmax();

    const std::vector<int>& input_shape() const { return input_shape_; }
    // Shape of the activation after the last added layer (no batch axis).
    const std::vector<int>& output_shape() const { return shape_; }

    std::vector<LayerOp>& layers() { return ops_; }
    const std::vector<LayerOp>& layers() const { return ops_; }

    // Number of trainable scalars (conv w+b, batch-norm gamma+beta, fc w+b;
    // running statistics are tracked, not trained, and do not count).
    std::size_t param_count() const;

    // Forward pass in inference mode; x is [N,C,H,W]. Returns class
    // probabilities [N, classes].
    Tensor infer(const Tensor& x, const NumericMode& mode = NumericMode::fp());

    // One SGD run over the data: shuffles the sample order, walks
    // minibatches (last one may be short), updates parameters in place.
    TrainStatus train(const Tensor& images, const std::vector<int>& labels, const SGDConfig& cfg,
                      Rng& rng);

    // Accuracy of inference-mode predictions against the labels.
    double evaluate_accuracy(const Tensor& images, const std::vector<int>& labels,
                             const NumericMode& mode = NumericMode::fp(), int batch_size = 256);

    // argmax with lowest-index tie break, per row of a [N, classes] tensor.
    static std::vector<int> predict_labels(const Tensor& probs);

  private:
    struct ForwardCache;
    Tensor forward(const Tensor& x, bool training, const NumericMode& mode,
                   ForwardCache* cache);
    double backward_and_step(const ForwardCache& cache, const std::vector<int>& labels,
                             float learning_rate);

    std::vector<int> input_shape_;
    std::vector<int> shape_;
    std::vector<LayerOp> ops_;
};

} // namespace evocnn
