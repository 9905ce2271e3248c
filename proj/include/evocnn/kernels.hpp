#pragma once

// Layer compute kernels on [N,C,H,W] batches. Hot loops are written in
// axpy order (unit-stride innermost, fixed accumulation order) so they
// vectorize without reassociation and give bitwise-identical results for
// any OpenMP thread count. A naive serial version of each kernel lives in
// reference_kernels.hpp and is the test oracle and benchmark baseline.

#include <cmath>
#include <cstdint>
#include <vector>

#include "evocnn/errors.hpp"
#include "evocnn/fxq.hpp"
#include "evocnn/tensor.hpp"

namespace evocnn {

enum class Padding : uint8_t { valid = 0, same = 1 };
enum class PoolKind : uint8_t { max = 0, average = 1 };

namespace kernels {

// Resolved convolution geometry, including the same-padding offsets.
struct ConvGeometry {
    int in_c = 0, in_h = 0, in_w = 0;
    int out_c = 0, out_h = 0, out_w = 0;
    int kernel = 0, stride = 1;
    int pad_top = 0, pad_left = 0;
};

inline ConvGeometry conv_geometry(int in_c, int in_h, int in_w, int kernel, int filters,
                                  int stride, Padding padding) {
    if (in_c < 1 || in_h < 1 || in_w < 1 || kernel < 1 || filters < 1 || stride < 1) {
        throw StructuralError("conv geometry: non-positive dimension");
    }
    ConvGeometry g;
    g.in_c = in_c;
    g.in_h = in_h;
    g.in_w = in_w;
    g.out_c = filters;
    g.kernel = kernel;
    g.stride = stride;
    if (padding == Padding::valid) {
        if (kernel > in_h || kernel > in_w) {
            throw StructuralError("conv geometry: kernel larger than input");
        }
        g.out_h = (in_h - kernel) / stride + 1;
        g.out_w = (in_w - kernel) / stride + 1;
    } else {
        g.out_h = (in_h + stride - 1) / stride;
        g.out_w = (in_w + stride - 1) / stride;
        const int pad_h = std::max(0, (g.out_h - 1) * stride + kernel - in_h);
        const int pad_w = std::max(0, (g.out_w - 1) * stride + kernel - in_w);
        g.pad_top = pad_h / 2;
        g.pad_left = pad_w / 2;
    }
    if (g.out_h < 1 || g.out_w < 1) {
        throw StructuralError("conv geometry: output underflows 1x1");
    }
    return g;
}

struct PoolGeometry {
    int channels = 0, in_h = 0, in_w = 0;
    int out_h = 0, out_w = 0;
    int pool = 0, stride = 1;
};

inline PoolGeometry pool_geometry(int channels, int in_h, int in_w, int pool, int stride) {
    if (pool < 1 || stride < 1) throw StructuralError("pool geometry: non-positive parameter");
    if (pool > in_h || pool > in_w) {
        throw StructuralError("pool geometry: window larger than input");
    }
    PoolGeometry g;
    g.channels = channels;
    g.in_h = in_h;
    g.in_w = in_w;
    g.pool = pool;
    g.stride = stride;
    g.out_h = (in_h - pool) / stride + 1;
    g.out_w = (in_w - pool) / stride + 1;
    return g;
}

// im2col, [K, P] layout: row j = (c*kernel + ky)*kernel + kx, column p = oy*out_w + ox.
// Ascending j matches the (c, ky, kx) loop order of the direct convolution.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
    const int K = g.in_c * g.kernel * g.kernel;
    const int P = g.out_h * g.out_w;
    for (int c = 0; c < g.in_c; ++c) {
        const T* plane = x + static_cast<std::size_t>(c) * g.in_h * g.in_w;
        for (int ky = 0; ky < g.kernel; ++ky) {
            for (int kx = 0; kx < g.kernel; ++kx) {
                const int j = (c * g.kernel + ky) * g.kernel + kx;
                T* row = cols + static_cast<std::size_t>(j) * P;
                for (int oy = 0; oy < g.out_h; ++oy) {
                    const int iy = oy * g.stride - g.pad_top + ky;
                    T* dst = row + static_cast<std::size_t>(oy) * g.out_w;
                    if (iy < 0 || iy >= g.in_h) {
                        for (int ox = 0; ox < g.out_w; ++ox) dst[ox] = T{0};
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(iy) * g.in_w;
                    for (int ox = 0; ox < g.out_w; ++ox) {
                        const int ix = ox * g.stride - g.pad_left + kx;
                        dst[ox] = (ix >= 0 && ix < g.in_w) ? src[ix] : T{0};
                    }
                }
            }
        }
    }
    (void)K;
}

// Scatter-add of a [K, P] column matrix back into one input sample.
template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* gx) {
    const int P = g.out_h * g.out_w;
    for (int c = 0; c < g.in_c; ++c) {
        T* plane = gx + static_cast<std::size_t>(c) * g.in_h * g.in_w;
        for (int ky = 0; ky < g.kernel; ++ky) {
            for (int kx = 0; kx < g.kernel; ++kx) {
                const int j = (c * g.kernel + ky) * g.kernel + kx;
                const T* row = cols + static_cast<std::size_t>(j) * P;
                for (int oy = 0; oy < g.out_h; ++oy) {
                    const int iy = oy * g.stride - g.pad_top + ky;
                    if (iy < 0 || iy >= g.in_h) continue;
                    const T* src = row + static_cast<std::size_t>(oy) * g.out_w;
                    T* dst = plane + static_cast<std::size_t>(iy) * g.in_w;
                    for (int ox = 0; ox < g.out_w; ++ox) {
                        const int ix = ox * g.stride - g.pad_left + kx;
                        if (ix >= 0 && ix < g.in_w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

// x [N,Cin,H,W], w [F,Cin,k,k], b [F] -> y [N,F,OH,OW].
// Per output element the terms accumulate in (c,ky,kx) order on top of the
// bias, matching the direct 6-loop convolution term for term.
template <typename T>
void conv_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                  const ConvGeometry& g, TensorT<T>& y) {
    const int n_batch = x.dim(0);
    const int K = g.in_c * g.kernel * g.kernel;
    const int P = g.out_h * g.out_w;
    if (x.dim(1) != g.in_c || x.dim(2) != g.in_h || x.dim(3) != g.in_w) {
        throw StructuralError("conv_forward: input shape " + shape_string(x.shape()) +
                              " does not match layer geometry");
    }
    y = TensorT<T>({n_batch, g.out_c, g.out_h, g.out_w});

#pragma omp parallel for schedule(static)
    for (int n = 0; n < n_batch; ++n) {
        std::vector<T> cols(static_cast<std::size_t>(K) * P);
        im2col(x.data() + x.idx4(n, 0, 0, 0), g, cols.data());
        T* yn = y.data() + y.idx4(n, 0, 0, 0);
        for (int f = 0; f < g.out_c; ++f) {
            T* out_row = yn + static_cast<std::size_t>(f) * P;
            const T bias = b[static_cast<std::size_t>(f)];
            for (int p = 0; p < P; ++p) out_row[p] = bias;
            const T* w_row = w.data() + static_cast<std::size_t>(f) * K;
            for (int j = 0; j < K; ++j) {
                const T wj = w_row[j];
                const T* col_row = cols.data() + static_cast<std::size_t>(j) * P;
                for (int p = 0; p < P; ++p) out_row[p] += wj * col_row[p];
            }
        }
    }
}

// Fixed-point emulation of the forward convolution: every scalar product
// x*w is quantized per quantized_mul; accumulation and bias stay real.
template <typename T>
void conv_forward_fx(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                     const ConvGeometry& g, const FxFormat& fmt, TensorT<T>& y) {
    const int n_batch = x.dim(0);
    const int K = g.in_c * g.kernel * g.kernel;
    const int P = g.out_h * g.out_w;
    if (x.dim(1) != g.in_c || x.dim(2) != g.in_h || x.dim(3) != g.in_w) {
        throw StructuralError("conv_forward_fx: input shape mismatch");
    }
    y = TensorT<T>({n_batch, g.out_c, g.out_h, g.out_w});

    // Weight codes are shared across the batch.
    std::vector<int32_t> wq(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) wq[i] = to_fx(static_cast<double>(w[i]), fmt).raw;
    const double scale = std::ldexp(1.0, -fmt.frac_bits);

#pragma omp parallel for schedule(static)
    for (int n = 0; n < n_batch; ++n) {
        std::vector<T> cols(static_cast<std::size_t>(K) * P);
        std::vector<int32_t> colsq(static_cast<std::size_t>(K) * P);
        im2col(x.data() + x.idx4(n, 0, 0, 0), g, cols.data());
        for (std::size_t i = 0; i < cols.size(); ++i) {
            colsq[i] = to_fx(static_cast<double>(cols[i]), fmt).raw;
        }
        T* yn = y.data() + y.idx4(n, 0, 0, 0);
        for (int f = 0; f < g.out_c; ++f) {
            T* out_row = yn + static_cast<std::size_t>(f) * P;
            const T bias = b[static_cast<std::size_t>(f)];
            for (int p = 0; p < P; ++p) out_row[p] = bias;
            const int32_t* w_row = wq.data() + static_cast<std::size_t>(f) * K;
            for (int j = 0; j < K; ++j) {
                const int64_t wj = w_row[j];
                const int32_t* col_row = colsq.data() + static_cast<std::size_t>(j) * P;
                for (int p = 0; p < P; ++p) {
                    const int64_t raw = fx_rescale_product(wj * col_row[p], fmt);
                    out_row[p] += static_cast<T>(static_cast<double>(raw) * scale);
                }
            }
        }
    }
}

// Gradients of conv_forward. gx gathers per sample; gw/gb accumulate over the
// batch in fixed sample order. Pass need_input_grad=false for the first layer
// of a network, where the input gradient would be discarded.
template <typename T>
void conv_backward(const TensorT<T>& x, const TensorT<T>& w, const ConvGeometry& g,
                   const TensorT<T>& gy, TensorT<T>& gx, TensorT<T>& gw, TensorT<T>& gb,
                   bool need_input_grad = true) {
    const int n_batch = x.dim(0);
    const int K = g.in_c * g.kernel * g.kernel;
    const int P = g.out_h * g.out_w;
    if (gy.dim(0) != n_batch || gy.dim(1) != g.out_c || gy.dim(2) != g.out_h ||
        gy.dim(3) != g.out_w) {
        throw StructuralError("conv_backward: grad shape mismatch");
    }
    gx = TensorT<T>::zeros_like(x);
    gw = TensorT<T>::zeros_like(w);
    gb = TensorT<T>({g.out_c});

    std::vector<T> cols(static_cast<std::size_t>(K) * P);
    std::vector<T> gcols(static_cast<std::size_t>(K) * P);
    for (int n = 0; n < n_batch; ++n) {
        im2col(x.data() + x.idx4(n, 0, 0, 0), g, cols.data());
        const T* gyn = gy.data() + gy.idx4(n, 0, 0, 0);

        // gw[f,j] += sum_p gy[f,p] * cols[j,p]; gb[f] += sum_p gy[f,p]
#pragma omp parallel for schedule(static)
        for (int f = 0; f < g.out_c; ++f) {
            const T* gy_row = gyn + static_cast<std::size_t>(f) * P;
            T* gw_row = gw.data() + static_cast<std::size_t>(f) * K;
            T acc_b = T{0};
            for (int p = 0; p < P; ++p) acc_b += gy_row[p];
            gb[static_cast<std::size_t>(f)] += acc_b;
            for (int j = 0; j < K; ++j) {
                const T* col_row = cols.data() + static_cast<std::size_t>(j) * P;
                T acc = T{0};
                for (int p = 0; p < P; ++p) acc += gy_row[p] * col_row[p];
                gw_row[j] += acc;
            }
        }

        if (!need_input_grad) continue;

        // gcols[j,p] = sum_f w[f,j] * gy[f,p], then scatter back to gx.
#pragma omp parallel for schedule(static)
        for (int j = 0; j < K; ++j) {
            T* gcol_row = gcols.data() + static_cast<std::size_t>(j) * P;
            for (int p = 0; p < P; ++p) gcol_row[p] = T{0};
            for (int f = 0; f < g.out_c; ++f) {
                const T wj = w[static_cast<std::size_t>(f) * K + j];
                const T* gy_row = gyn + static_cast<std::size_t>(f) * P;
                for (int p = 0; p < P; ++p) gcol_row[p] += wj * gy_row[p];
            }
        }
        col2im_add(gcols.data(), g, gx.data() + gx.idx4(n, 0, 0, 0));
    }
}

// x [N,C,H,W] -> y [N,C,OH,OW]. Max pooling remembers nothing; backward
// recomputes the argmax with first-index tie-break.
template <typename T>
void pool_forward(const TensorT<T>& x, const PoolGeometry& g, PoolKind kind, TensorT<T>& y) {
    const int n_batch = x.dim(0);
    y = TensorT<T>({n_batch, g.channels, g.out_h, g.out_w});
    const T area = static_cast<T>(g.pool * g.pool);

#pragma omp parallel for schedule(static)
    for (int n = 0; n < n_batch; ++n) {
        for (int c = 0; c < g.channels; ++c) {
            for (int oy = 0; oy < g.out_h; ++oy) {
                for (int ox = 0; ox < g.out_w; ++ox) {
                    const int iy0 = oy * g.stride;
                    const int ix0 = ox * g.stride;
                    if (kind == PoolKind::max) {
                        T best = x.at(n, c, iy0, ix0);
                        for (int py = 0; py < g.pool; ++py) {
                            for (int px = 0; px < g.pool; ++px) {
                                const T v = x.at(n, c, iy0 + py, ix0 + px);
                                if (v > best) best = v;
                            }
                        }
                        y.at(n, c, oy, ox) = best;
                    } else {
                        T acc = T{0};
                        for (int py = 0; py < g.pool; ++py) {
                            for (int px = 0; px < g.pool; ++px) {
                                acc += x.at(n, c, iy0 + py, ix0 + px);
                            }
                        }
                        y.at(n, c, oy, ox) = acc / area;
                    }
                }
            }
        }
    }
}

template <typename T>
void pool_backward(const TensorT<T>& x, const PoolGeometry& g, PoolKind kind,
                   const TensorT<T>& gy, TensorT<T>& gx) {
    const int n_batch = x.dim(0);
    gx = TensorT<T>::zeros_like(x);
    const T area = static_cast<T>(g.pool * g.pool);

    // (n,c) planes are independent; windows may overlap inside a plane.
#pragma omp parallel for schedule(static) collapse(2)
    for (int n = 0; n < n_batch; ++n) {
        for (int c = 0; c < g.channels; ++c) {
            for (int oy = 0; oy < g.out_h; ++oy) {
                for (int ox = 0; ox < g.out_w; ++ox) {
                    const int iy0 = oy * g.stride;
                    const int ix0 = ox * g.stride;
                    const T grad = gy.at(n, c, oy, ox);
                    if (kind == PoolKind::max) {
                        int by = iy0, bx = ix0;
                        T best = x.at(n, c, iy0, ix0);
                        for (int py = 0; py < g.pool; ++py) {
                            for (int px = 0; px < g.pool; ++px) {
                                const T v = x.at(n, c, iy0 + py, ix0 + px);
                                if (v > best) {
                                    best = v;
                                    by = iy0 + py;
                                    bx = ix0 + px;
                                }
                            }
                        }
                        gx.at(n, c, by, bx) += grad;
                    } else {
                        const T share = grad / area;
                        for (int py = 0; py < g.pool; ++py) {
                            for (int px = 0; px < g.pool; ++px) {
                                gx.at(n, c, iy0 + py, ix0 + px) += share;
                            }
                        }
                    }
                }
            }
        }
    }
}

// Per-channel batch statistics over (N,H,W).
template <typename T>
struct BatchNormCache {
    TensorT<T> x_hat;    // normalized input
    std::vector<T> mean;
    std::vector<T> inv_std;
};

// Training mode normalizes with batch statistics (biased variance) and
// updates the running stats in place; inference uses the running stats.
template <typename T>
void batchnorm_forward(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                       TensorT<T>& running_mean, TensorT<T>& running_var, T momentum, T epsilon,
                       bool training, TensorT<T>& y, BatchNormCache<T>* cache) {
    const int n_batch = x.dim(0);
    const int channels = x.dim(1);
    const int hw = x.dim(2) * x.dim(3);
    const std::size_t plane = static_cast<std::size_t>(hw);
    const std::size_t sample = static_cast<std::size_t>(channels) * plane;
    y = TensorT<T>::zeros_like(x);
    if (cache) {
        cache->x_hat = TensorT<T>::zeros_like(x);
        cache->mean.assign(static_cast<std::size_t>(channels), T{0});
        cache->inv_std.assign(static_cast<std::size_t>(channels), T{0});
    }

#pragma omp parallel for schedule(static)
    for (int c = 0; c < channels; ++c) {
        T mean, inv_std;
        if (training) {
            const T m = static_cast<T>(n_batch) * static_cast<T>(hw);
            T sum = T{0};
            for (int n = 0; n < n_batch; ++n) {
                const T* src = x.data() + static_cast<std::size_t>(n) * sample + c * plane;
                for (int i = 0; i < hw; ++i) sum += src[i];
            }
            mean = sum / m;
            T var_sum = T{0};
            for (int n = 0; n < n_batch; ++n) {
                const T* src = x.data() + static_cast<std::size_t>(n) * sample + c * plane;
                for (int i = 0; i < hw; ++i) {
                    const T d = src[i] - mean;
                    var_sum += d * d;
                }
            }
            const T var = var_sum / m;
            inv_std = T{1} / std::sqrt(var + epsilon);
            running_mean[static_cast<std::size_t>(c)] =
                momentum * running_mean[static_cast<std::size_t>(c)] + (T{1} - momentum) * mean;
            running_var[static_cast<std::size_t>(c)] =
                momentum * running_var[static_cast<std::size_t>(c)] + (T{1} - momentum) * var;
        } else {
            mean = running_mean[static_cast<std::size_t>(c)];
            inv_std = T{1} / std::sqrt(running_var[static_cast<std::size_t>(c)] + epsilon);
        }
        const T gc = gamma[static_cast<std::size_t>(c)];
        const T bc = beta[static_cast<std::size_t>(c)];
        for (int n = 0; n < n_batch; ++n) {
            const T* src = x.data() + static_cast<std::size_t>(n) * sample + c * plane;
            T* dst = y.data() + static_cast<std::size_t>(n) * sample + c * plane;
            T* xh = cache ? cache->x_hat.data() + static_cast<std::size_t>(n) * sample + c * plane
                          : nullptr;
            for (int i = 0; i < hw; ++i) {
                const T normd = (src[i] - mean) * inv_std;
                if (xh) xh[i] = normd;
                dst[i] = gc * normd + bc;
            }
        }
        if (cache) {
            cache->mean[static_cast<std::size_t>(c)] = mean;
            cache->inv_std[static_cast<std::size_t>(c)] = inv_std;
        }
    }
}

// Training-mode gradients through the batch statistics:
//   dx = gamma*inv_std * (dy - mean(dy) - x_hat*mean(dy*x_hat))
template <typename T>
void batchnorm_backward(const TensorT<T>& gy, const BatchNormCache<T>& cache,
                        const TensorT<T>& gamma, TensorT<T>& gx, TensorT<T>& ggamma,
                        TensorT<T>& gbeta) {
    const int n_batch = gy.dim(0);
    const int channels = gy.dim(1);
    const int hw = gy.dim(2) * gy.dim(3);
    const std::size_t plane = static_cast<std::size_t>(hw);
    const std::size_t sample = static_cast<std::size_t>(channels) * plane;
    gx = TensorT<T>::zeros_like(gy);
    ggamma = TensorT<T>({channels});
    gbeta = TensorT<T>({channels});

#pragma omp parallel for schedule(static)
    for (int c = 0; c < channels; ++c) {
        const T m = static_cast<T>(n_batch) * static_cast<T>(hw);
        T sum_gy = T{0}, sum_gy_xhat = T{0};
        for (int n = 0; n < n_batch; ++n) {
            const T* gy_p = gy.data() + static_cast<std::size_t>(n) * sample + c * plane;
            const T* xh_p = cache.x_hat.data() + static_cast<std::size_t>(n) * sample + c * plane;
            for (int i = 0; i < hw; ++i) {
                sum_gy += gy_p[i];
                sum_gy_xhat += gy_p[i] * xh_p[i];
            }
        }
        gbeta[static_cast<std::size_t>(c)] = sum_gy;
        ggamma[static_cast<std::size_t>(c)] = sum_gy_xhat;
        const T gc = gamma[static_cast<std::size_t>(c)];
        const T inv_std = cache.inv_std[static_cast<std::size_t>(c)];
        const T mean_gy = sum_gy / m;
        const T mean_gy_xhat = sum_gy_xhat / m;
        for (int n = 0; n < n_batch; ++n) {
            const T* gy_p = gy.data() + static_cast<std::size_t>(n) * sample + c * plane;
            const T* xh_p = cache.x_hat.data() + static_cast<std::size_t>(n) * sample + c * plane;
            T* gx_p = gx.data() + static_cast<std::size_t>(n) * sample + c * plane;
            for (int i = 0; i < hw; ++i) {
                gx_p[i] = gc * inv_std * (gy_p[i] - mean_gy - xh_p[i] * mean_gy_xhat);
            }
        }
    }
}

// x [N,in] -> y [N,out] with y = W.x + b, W stored [out,in].
template <typename T>
void fc_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, TensorT<T>& y) {
    const int n_batch = x.dim(0);
    const int in_f = x.dim(1);
    const int out_f = w.dim(0);
    if (w.dim(1) != in_f) {
        throw StructuralError("fc_forward: weight shape " + shape_string(w.shape()) +
                              " does not match input features " + std::to_string(in_f));
    }
    y = TensorT<T>({n_batch, out_f});

    // Transposed copy of W lets the inner loop run unit-stride over outputs.
    std::vector<T> wt(static_cast<std::size_t>(in_f) * out_f);
    for (int o = 0; o < out_f; ++o) {
        for (int i = 0; i < in_f; ++i) {
            wt[static_cast<std::size_t>(i) * out_f + o] = w[static_cast<std::size_t>(o) * in_f + i];
        }
    }

#pragma omp parallel for schedule(static)
    for (int n = 0; n < n_batch; ++n) {
        T* y_row = y.data() + static_cast<std::size_t>(n) * out_f;
        for (int o = 0; o < out_f; ++o) y_row[o] = b[static_cast<std::size_t>(o)];
        const T* x_row = x.data() + static_cast<std::size_t>(n) * in_f;
        for (int i = 0; i < in_f; ++i) {
            const T xi = x_row[i];
            const T* wt_row = wt.data() + static_cast<std::size_t>(i) * out_f;
            for (int o = 0; o < out_f; ++o) y_row[o] += xi * wt_row[o];
        }
    }
}

template <typename T>
void fc_forward_fx(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                   const FxFormat& fmt, TensorT<T>& y) {
    const int n_batch = x.dim(0);
    const int in_f = x.dim(1);
    const int out_f = w.dim(0);
    if (w.dim(1) != in_f) throw StructuralError("fc_forward_fx: weight shape mismatch");
    y = TensorT<T>({n_batch, out_f});

    std::vector<int32_t> wq(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) wq[i] = to_fx(static_cast<double>(w[i]), fmt).raw;
    const double scale = std::ldexp(1.0, -fmt.frac_bits);

#pragma omp parallel for schedule(static)
    for (int n = 0; n < n_batch; ++n) {
        const T* x_row = x.data() + static_cast<std::size_t>(n) * in_f;
        std::vector<int32_t> xq(static_cast<std::size_t>(in_f));
        for (int i = 0; i < in_f; ++i) xq[static_cast<std::size_t>(i)] =
            to_fx(static_cast<double>(x_row[i]), fmt).raw;
        T* y_row = y.data() + static_cast<std::size_t>(n) * out_f;
        for (int o = 0; o < out_f; ++o) {
            T acc = b[static_cast<std::size_t>(o)];
            const int32_t* w_row = wq.data() + static_cast<std::size_t>(o) * in_f;
            for (int i = 0; i < in_f; ++i) {
                const int64_t raw = fx_rescale_product(static_cast<int64_t>(w_row[i]) * xq[i], fmt);
                acc += static_cast<T>(static_cast<double>(raw) * scale);
            }
            y_row[o] = acc;
        }
    }
}

template <typename T>
void fc_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& gy, TensorT<T>& gx,
                 TensorT<T>& gw, TensorT<T>& gb) {
    const int n_batch = x.dim(0);
    const int in_f = x.dim(1);
    const int out_f = w.dim(0);
    gx = TensorT<T>::zeros_like(x);
    gw = TensorT<T>::zeros_like(w);
    gb = TensorT<T>({out_f});

    for (int n = 0; n < n_batch; ++n) {
        const T* gy_row = gy.data() + static_cast<std::size_t>(n) * out_f;
        const T* x_row = x.data() + static_cast<std::size_t>(n) * in_f;
        T* gx_row = gx.data() + static_cast<std::size_t>(n) * in_f;
        for (int o = 0; o < out_f; ++o) {
            const T g = gy_row[o];
            gb[static_cast<std::size_t>(o)] += g;
            const T* w_row = w.data() + static_cast<std::size_t>(o) * in_f;
            T* gw_row = gw.data() + static_cast<std::size_t>(o) * in_f;
            for (int i = 0; i < in_f; ++i) {
                gx_row[i] += g * w_row[i];
                gw_row[i] += g * x_row[i];
            }
        }
    }
}

template <typename T>
void relu_forward(const TensorT<T>& x, TensorT<T>& y) {
    y = TensorT<T>::zeros_like(x);
    const std::size_t n = x.size();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        y[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)] > T{0}
                                             ? x[static_cast<std::size_t>(i)]
                                             : T{0};
    }
}

template <typename T>
void relu_backward(const TensorT<T>& x, const TensorT<T>& gy, TensorT<T>& gx) {
    gx = TensorT<T>::zeros_like(x);
    const std::size_t n = x.size();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        gx[static_cast<std::size_t>(i)] =
            x[static_cast<std::size_t>(i)] > T{0} ? gy[static_cast<std::size_t>(i)] : T{0};
    }
}

// Row-wise softmax with max subtraction. x [N,classes] -> y [N,classes].
template <typename T>
void softmax_forward(const TensorT<T>& x, TensorT<T>& y) {
    const int n_batch = x.dim(0);
    const int classes = x.dim(1);
    y = TensorT<T>::zeros_like(x);
#pragma omp parallel for schedule(static)
    for (int n = 0; n < n_batch; ++n) {
        const T* x_row = x.data() + static_cast<std::size_t>(n) * classes;
        T* y_row = y.data() + static_cast<std::size_t>(n) * classes;
        T mx = x_row[0];
        for (int c = 1; c < classes; ++c) mx = std::max(mx, x_row[c]);
        T sum = T{0};
        for (int c = 0; c < classes; ++c) {
            y_row[c] = std::exp(x_row[c] - mx);
            sum += y_row[c];
        }
        const T inv = T{1} / sum;
        for (int c = 0; c < classes; ++c) y_row[c] *= inv;
    }
}

// Mean cross-entropy over the batch, with a log(p + 1e-12) guard.
template <typename T>
double cross_entropy(const TensorT<T>& probs, const std::vector<int>& labels) {
    const int n_batch = probs.dim(0);
    const int classes = probs.dim(1);
    double total = 0.0;
    for (int n = 0; n < n_batch; ++n) {
        const T p = probs[static_cast<std::size_t>(n) * classes +
                          static_cast<std::size_t>(labels[static_cast<std::size_t>(n)])];
        total += -std::log(static_cast<double>(p) + 1e-12);
    }
    return total / n_batch;
}

} // namespace kernels
} // namespace evocnn
