#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "evocnn/kernels.hpp"
#include "evocnn/rng.hpp"

using namespace evocnn;
using kernels::conv_geometry;
using kernels::pool_geometry;

namespace {

constexpr double kStep = 1e-4;  // central-difference step

TensorD random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    TensorD t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Values with pairwise gaps of at least ~8e-3: far enough apart that a 1e-4
// perturbation can never flip a max-pool argmax or cross the ReLU kink.
TensorD well_separated_tensor(std::vector<int> shape, Rng& rng) {
    TensorD t(std::move(shape));
    std::vector<int> order(t.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = 0.01 * order[i] - 0.005 * static_cast<double>(t.size()) +
               rng.uniform(-1e-3, 1e-3);
        if (std::abs(t[i]) < 5e-3) t[i] += 0.01;  // keep clear of the ReLU kink
    }
    return t;
}

double weighted_sum(const TensorD& y, const TensorD& r) {
    REQUIRE(y.shape() == r.shape());
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * r[i];
    return acc;
}

// Central finite differences of loss() wrt every element of theta, compared
// against the analytic gradient.
void check_gradient(TensorD& theta, const TensorD& analytic,
                    const std::function<double()>& loss, double tol, const char* what) {
    REQUIRE(theta.shape() == analytic.shape());
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double saved = theta[i];
        theta[i] = saved + kStep;
        const double lp = loss();
        theta[i] = saved - kStep;
        const double lm = loss();
        theta[i] = saved;
        const double numeric = (lp - lm) / (2.0 * kStep);
        const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-2});
        const double rel = std::abs(numeric - analytic[i]) / denom;
        if (rel > tol) {
            FAIL(what, " element ", i, ": analytic ", analytic[i], " vs numeric ", numeric,
                 " (rel err ", rel, ")");
        }
    }
}

} // namespace

TEST_CASE("conv backward on the single multiply-add") {
    // y = b + w*x with x=2, w=3, b=1: dy/dw = x, dy/dx = w, dy/db = 1.
    TensorD x({1, 1, 1, 1}, {2.0});
    TensorD w({1, 1, 1, 1}, {3.0});
    const auto g = conv_geometry(1, 1, 1, 1, 1, 1, Padding::valid);
    const TensorD gy({1, 1, 1, 1}, {1.0});
    TensorD gx, gw, gb;
    kernels::conv_backward(x, w, g, gy, gx, gw, gb);
    CHECK(gw[0] == 2.0);
    CHECK(gx[0] == 3.0);
    CHECK(gb[0] == 1.0);
}

TEST_CASE("zero output gradient produces zero parameter gradients") {
    Rng rng(5);
    const auto g = conv_geometry(2, 5, 5, 3, 3, 1, Padding::valid);
    TensorD x = random_tensor({2, 2, 5, 5}, rng);
    TensorD w = random_tensor({3, 2, 3, 3}, rng);
    TensorD gy({2, 3, g.out_h, g.out_w});
    TensorD gx, gw, gb;
    kernels::conv_backward(x, w, g, gy, gx, gw, gb);
    for (std::size_t i = 0; i < gx.size(); ++i) CHECK(gx[i] == 0.0);
    for (std::size_t i = 0; i < gw.size(); ++i) CHECK(gw[i] == 0.0);
    for (std::size_t i = 0; i < gb.size(); ++i) CHECK(gb[i] == 0.0);
}

TEST_CASE("conv gradients match finite differences") {
    Rng rng(1001);
    for (int trial = 0; trial < 60; ++trial) {
        // Trial 0 pins the documented 2x5x5 / 3 filter shape.
        const int k = trial == 0 ? 3 : (rng.bernoulli(0.5) ? 1 : 3);
        const int c = trial == 0 ? 2 : rng.uniform_int(1, 3);
        const int f = trial == 0 ? 3 : rng.uniform_int(1, 4);
        const int h = trial == 0 ? 5 : rng.uniform_int(k, k + 4);
        const int wd = trial == 0 ? 5 : rng.uniform_int(k, k + 4);
        const int n = trial == 0 ? 1 : rng.uniform_int(1, 3);
        const int stride = trial == 0 ? 1 : rng.uniform_int(1, 2);
        const Padding pad =
            trial == 0 ? Padding::valid : (rng.bernoulli(0.5) ? Padding::valid : Padding::same);
        const auto g = conv_geometry(c, h, wd, k, f, stride, pad);

        TensorD x = random_tensor({n, c, h, wd}, rng);
        TensorD w = random_tensor({f, c, k, k}, rng);
        TensorD b = random_tensor({f}, rng);
        const TensorD r = random_tensor({n, f, g.out_h, g.out_w}, rng);

        const auto loss = [&] {
            TensorD y;
            kernels::conv_forward(x, w, b, g, y);
            return weighted_sum(y, r);
        };
        TensorD gx, gw, gb;
        kernels::conv_backward(x, w, g, r, gx, gw, gb);
        check_gradient(x, gx, loss, 1e-6, "conv d/dx");
        check_gradient(w, gw, loss, 1e-6, "conv d/dw");
        check_gradient(b, gb, loss, 1e-6, "conv d/db");
    }
}

TEST_CASE("fc gradients match finite differences") {
    Rng rng(1002);
    for (int trial = 0; trial < 60; ++trial) {
        // Trial 0 pins the documented 10->20 shape.
        const int in = trial == 0 ? 10 : rng.uniform_int(1, 12);
        const int out = trial == 0 ? 20 : rng.uniform_int(1, 8);
        const int n = rng.uniform_int(1, 3);
        TensorD x = random_tensor({n, in}, rng);
        TensorD w = random_tensor({out, in}, rng);
        TensorD b = random_tensor({out}, rng);
        const TensorD r = random_tensor({n, out}, rng);

        const auto loss = [&] {
            TensorD y;
            kernels::fc_forward(x, w, b, y);
            return weighted_sum(y, r);
        };
        TensorD gx, gw, gb;
        kernels::fc_backward(x, w, r, gx, gw, gb);
        check_gradient(x, gx, loss, 1e-6, "fc d/dx");
        check_gradient(w, gw, loss, 1e-6, "fc d/dw");
        check_gradient(b, gb, loss, 1e-6, "fc d/db");
    }
}

TEST_CASE("batchnorm training-mode gradients match finite differences") {
    Rng rng(1003);
    for (int trial = 0; trial < 60; ++trial) {
        // Trial 0 pins the documented 8x4x5x5 batch.
        const int n = trial == 0 ? 8 : rng.uniform_int(2, 4);
        const int c = trial == 0 ? 4 : rng.uniform_int(1, 3);
        const int h = trial == 0 ? 5 : rng.uniform_int(1, 4);
        const int w = trial == 0 ? 5 : rng.uniform_int(1, 4);
        TensorD x = random_tensor({n, c, h, w}, rng);
        TensorD gamma = random_tensor({c}, rng, 0.5, 1.5);
        TensorD beta = random_tensor({c}, rng);
        const TensorD r = random_tensor({n, c, h, w}, rng);

        const auto loss = [&] {
            TensorD rm({c}), rv({c});
            rv.fill(1.0);
            TensorD y;
            kernels::batchnorm_forward(x, gamma, beta, rm, rv, 0.99, 1e-5, true, y,
                                       static_cast<kernels::BatchNormCache<double>*>(nullptr));
            return weighted_sum(y, r);
        };
        TensorD rm({c}), rv({c});
        rv.fill(1.0);
        TensorD y;
        kernels::BatchNormCache<double> cache;
        kernels::batchnorm_forward(x, gamma, beta, rm, rv, 0.99, 1e-5, true, y, &cache);
        TensorD gx, ggamma, gbeta;
        kernels::batchnorm_backward(r, cache, gamma, gx, ggamma, gbeta);
        check_gradient(x, gx, loss, 1e-5, "batchnorm d/dx");
        check_gradient(gamma, ggamma, loss, 1e-5, "batchnorm d/dgamma");
        check_gradient(beta, gbeta, loss, 1e-5, "batchnorm d/dbeta");
    }
}

TEST_CASE("pooling gradients match finite differences") {
    Rng rng(1004);
    for (int trial = 0; trial < 60; ++trial) {
        const int p = rng.uniform_int(1, 3);
        const int c = rng.uniform_int(1, 3);
        const int h = rng.uniform_int(p, p + 4);
        const int w = rng.uniform_int(p, p + 4);
        const int n = rng.uniform_int(1, 2);
        const int stride = rng.uniform_int(1, 2);
        const auto g = pool_geometry(c, h, w, p, stride);
        const PoolKind kind = trial % 2 == 0 ? PoolKind::max : PoolKind::average;

        TensorD x = well_separated_tensor({n, c, h, w}, rng);
        const TensorD r = random_tensor({n, c, g.out_h, g.out_w}, rng);

        const auto loss = [&] {
            TensorD y;
            kernels::pool_forward(x, g, kind, y);
            return weighted_sum(y, r);
        };
        TensorD gx;
        kernels::pool_backward(x, g, kind, r, gx);
        check_gradient(x, gx, loss, 1e-5, kind == PoolKind::max ? "maxpool d/dx"
                                                                : "avgpool d/dx");
    }
}

TEST_CASE("softmax+cross-entropy gradient is softmax minus one-hot") {
    Rng rng(1005);
    for (int trial = 0; trial < 60; ++trial) {
        const int n = rng.uniform_int(1, 4);
        const int classes = rng.uniform_int(2, 10);
        TensorD z = random_tensor({n, classes}, rng, -2.0, 2.0);
        std::vector<int> labels(static_cast<std::size_t>(n));
        for (auto& l : labels) l = rng.uniform_int(0, classes - 1);

        const auto loss = [&] {
            TensorD p;
            kernels::softmax_forward(z, p);
            return kernels::cross_entropy(p, labels);
        };
        TensorD p;
        kernels::softmax_forward(z, p);
        TensorD analytic = TensorD::zeros_like(z);
        for (int i = 0; i < n; ++i) {
            for (int c = 0; c < classes; ++c) {
                const double onehot = labels[static_cast<std::size_t>(i)] == c ? 1.0 : 0.0;
                analytic.at(i, c) = (p.at(i, c) - onehot) / n;
            }
        }
        check_gradient(z, analytic, loss, 1e-5, "softmax+ce d/dz");
    }
}

TEST_CASE("relu gradient away from the kink") {
    Rng rng(1006);
    for (int trial = 0; trial < 50; ++trial) {
        TensorD x = well_separated_tensor({2, rng.uniform_int(1, 16)}, rng);
        const TensorD r = random_tensor(x.shape(), rng);
        const auto loss = [&] {
            TensorD y;
            kernels::relu_forward(x, y);
            return weighted_sum(y, r);
        };
        TensorD gx;
        kernels::relu_backward(x, r, gx);
        check_gradient(x, gx, loss, 1e-6, "relu d/dx");
    }
}
