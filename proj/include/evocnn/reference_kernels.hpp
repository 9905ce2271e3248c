#pragma once

// Naive single-threaded versions of every compute kernel, written as the
// textbook loop nests with no layout tricks. They are the correctness oracle
// for the OpenMP kernels (tests compare both paths on random inputs) and the
// baseline for the kernel benchmark. Accumulation order per output element
// is (c, ky, kx) / ascending input index, the same order the production
// kernels use, so float results must match bit for bit.

#include <cmath>
#include <vector>

#include "evocnn/fxq.hpp"
#include "evocnn/kernels.hpp"
#include "evocnn/tensor.hpp"

namespace evocnn {
namespace reference {

template <typename T>
void conv_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                  const kernels::ConvGeometry& g, TensorT<T>& y) {
    const int n_batch = x.dim(0);
    y = TensorT<T>({n_batch, g.out_c, g.out_h, g.out_w});
    for (int n = 0; n < n_batch; ++n) {
        for (int f = 0; f < g.out_c; ++f) {
            for (int oy = 0; oy < g.out_h; ++oy) {
                for (int ox = 0; ox < g.out_w; ++ox) {
                    T acc = b[static_cast<std::size_t>(f)];
                    for (int c = 0; c < g.in_c; ++c) {
                        for (int ky = 0; ky < g.kernel; ++ky) {
                            for (int kx = 0; kx < g.kernel; ++kx) {
                                const int iy = oy * g.stride - g.pad_top + ky;
                                const int ix = ox * g.stride - g.pad_left + kx;
                                const T xv = (iy >= 0 && iy < g.in_h && ix >= 0 && ix < g.in_w)
                                                 ? x.at(n, c, iy, ix)
                                                 : T{0};
                                acc += w.at(f, c, ky, kx) * xv;
                            }
                        }
                    }
                    y.at(n, f, oy, ox) = acc;
                }
            }
        }
    }
}

template <typename T>
void conv_forward_fx(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                     const kernels::ConvGeometry& g, const FxFormat& fmt, TensorT<T>& y) {
    const int n_batch = x.dim(0);
    y = TensorT<T>({n_batch, g.out_c, g.out_h, g.out_w});
    for (int n = 0; n < n_batch; ++n) {
        for (int f = 0; f < g.out_c; ++f) {
            for (int oy = 0; oy < g.out_h; ++oy) {
                for (int ox = 0; ox < g.out_w; ++ox) {
                    T acc = b[static_cast<std::size_t>(f)];
                    for (int c = 0; c < g.in_c; ++c) {
                        for (int ky = 0; ky < g.kernel; ++ky) {
                            for (int kx = 0; kx < g.kernel; ++kx) {
                                const int iy = oy * g.stride - g.pad_top + ky;
                                const int ix = ox * g.stride - g.pad_left + kx;
                                const T xv = (iy >= 0 && iy < g.in_h && ix >= 0 && ix < g.in_w)
                                                 ? x.at(n, c, iy, ix)
                                                 : T{0};
                                acc += static_cast<T>(quantized_mul(
                                    static_cast<double>(xv), static_cast<double>(w.at(f, c, ky, kx)),
                                    fmt));
                            }
                        }
                    }
                    y.at(n, f, oy, ox) = acc;
                }
            }
        }
    }
}

// Scatter form of the convolution gradients: walk every output element once
// and distribute its contribution to gx, gw, gb.
template <typename T>
void conv_backward(const TensorT<T>& x, const TensorT<T>& w, const kernels::ConvGeometry& g,
                   const TensorT<T>& gy, TensorT<T>& gx, TensorT<T>& gw, TensorT<T>& gb) {
    const int n_batch = x.dim(0);
    gx = TensorT<T>::zeros_like(x);
    gw = TensorT<T>::zeros_like(w);
    gb = TensorT<T>({g.out_c});
    for (int n = 0; n < n_batch; ++n) {
        for (int f = 0; f < g.out_c; ++f) {
            for (int oy = 0; oy < g.out_h; ++oy) {
                for (int ox = 0; ox < g.out_w; ++ox) {
                    const T grad = gy.at(n, f, oy, ox);
                    gb[static_cast<std::size_t>(f)] += grad;
                    for (int c = 0; c < g.in_c; ++c) {
                        for (int ky = 0; ky < g.kernel; ++ky) {
                            for (int kx = 0; kx < g.kernel; ++kx) {
                                const int iy = oy * g.stride - g.pad_top + ky;
                                const int ix = ox * g.stride - g.pad_left + kx;
                                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                                gw.at(f, c, ky, kx) += grad * x.at(n, c, iy, ix);
                                gx.at(n, c, iy, ix) += grad * w.at(f, c, ky, kx);
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void pool_forward(const TensorT<T>& x, const kernels::PoolGeometry& g, PoolKind kind,
                  TensorT<T>& y) {
    const int n_batch = x.dim(0);
    y = TensorT<T>({n_batch, g.channels, g.out_h, g.out_w});
    for (int n = 0; n < n_batch; ++n) {
        for (int c = 0; c < g.channels; ++c) {
            for (int oy = 0; oy < g.out_h; ++oy) {
                for (int ox = 0; ox < g.out_w; ++ox) {
                    if (kind == PoolKind::max) {
                        T best = x.at(n, c, oy * g.stride, ox * g.stride);
                        for (int py = 0; py < g.pool; ++py) {
                            for (int px = 0; px < g.pool; ++px) {
                                best = std::max(best,
                                                x.at(n, c, oy * g.stride + py, ox * g.stride + px));
                            }
                        }
                        y.at(n, c, oy, ox) = best;
                    } else {
                        T acc = T{0};
                        for (int py = 0; py < g.pool; ++py) {
                            for (int px = 0; px < g.pool; ++px) {
                                acc += x.at(n, c, oy * g.stride + py, ox * g.stride + px);
                            }
                        }
                        y.at(n, c, oy, ox) = acc / static_cast<T>(g.pool * g.pool);
                    }
                }
            }
        }
    }
}

template <typename T>
void fc_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, TensorT<T>& y) {
    const int n_batch = x.dim(0);
    const int in_f = x.dim(1);
    const int out_f = w.dim(0);
    y = TensorT<T>({n_batch, out_f});
    for (int n = 0; n < n_batch; ++n) {
        for (int o = 0; o < out_f; ++o) {
            T acc = b[static_cast<std::size_t>(o)];
            for (int i = 0; i < in_f; ++i) {
                acc += w[static_cast<std::size_t>(o) * in_f + i] *
                       x[static_cast<std::size_t>(n) * in_f + i];
            }
            y[static_cast<std::size_t>(n) * out_f + o] = acc;
        }
    }
}

template <typename T>
void batchnorm_inference(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                         const TensorT<T>& running_mean, const TensorT<T>& running_var, T epsilon,
                         TensorT<T>& y) {
    const int n_batch = x.dim(0);
    const int channels = x.dim(1);
    const int h = x.dim(2), w = x.dim(3);
    y = TensorT<T>::zeros_like(x);
    for (int n = 0; n < n_batch; ++n) {
        for (int c = 0; c < channels; ++c) {
            const T inv_std = T{1} / std::sqrt(running_var[static_cast<std::size_t>(c)] + epsilon);
            for (int i = 0; i < h; ++i) {
                for (int j = 0; j < w; ++j) {
                    const T normd =
                        (x.at(n, c, i, j) - running_mean[static_cast<std::size_t>(c)]) * inv_std;
                    y.at(n, c, i, j) =
                        gamma[static_cast<std::size_t>(c)] * normd + beta[static_cast<std::size_t>(c)];
                }
            }
        }
    }
}

} // namespace reference
} // namespace evocnn
