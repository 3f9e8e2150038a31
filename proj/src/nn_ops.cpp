#include "raunet/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace raunet {

namespace {

template <class T>
void require_4d(const TensorPtr<T>& x, const char* op) {
    if (x->rank() != 4) {
        throw ShapeError(std::string(op) + ": expected a 4-d [N,C,H,W] tensor, got " +
                         shape_str(x->shape));
    }
}

// Valid output range for one kernel offset: all o with 0 <= o*s + off < extent.
struct OutRange {
    std::int64_t lo, hi;  // inclusive; empty when lo > hi
};

OutRange valid_range(std::int64_t extent_in, std::int64_t extent_out, std::int64_t stride,
                     std::int64_t off) {
    std::int64_t lo = off < 0 ? (-off + stride - 1) / stride : 0;
    std::int64_t hi = extent_in - 1 - off < 0 ? -1 : (extent_in - 1 - off) / stride;
    return {std::max<std::int64_t>(lo, 0), std::min(hi, extent_out - 1)};
}

}  // namespace

// ---- params ----------------------------------------------------------------

template <class T>
Conv2dParams<T> Conv2dParams<T>::make(std::size_t cin, std::size_t cout, std::size_t k,
                                      std::size_t stride, std::size_t padding, bool with_bias,
                                      Rng& rng) {
    Conv2dParams<T> p;
    p.weight = Tensor<T>::create({cout, cin, k, k}, true);
    const double bound = std::sqrt(6.0 / static_cast<double>(cin * k * k));
    for (T& w : p.weight->data) w = static_cast<T>(rng.uniform(-bound, bound));
    if (with_bias) p.bias = Tensor<T>::create({cout}, true);
    p.stride = stride;
    p.padding = padding;
    return p;
}

template <class T>
BatchNorm2dParams<T> BatchNorm2dParams<T>::make(std::size_t channels) {
    BatchNorm2dParams<T> p;
    p.gamma = Tensor<T>::full({channels}, T(1), true);
    p.beta = Tensor<T>::create({channels}, true);
    p.running_mean = Tensor<T>::create({channels});
    p.running_var = Tensor<T>::full({channels}, T(1));
    return p;
}

// ---- conv2d ----------------------------------------------------------------

template <class T>
TensorPtr<T> conv2d(Tape<T>* tape, const TensorPtr<T>& x, const Conv2dParams<T>& p) {
    require_4d(x, "conv2d");
    const std::size_t N = x->shape[0], Cin = x->shape[1], H = x->shape[2], W = x->shape[3];
    const std::size_t Cout = p.weight->shape[0], kH = p.weight->shape[2], kW = p.weight->shape[3];
    if (p.weight->shape[1] != Cin) {
        throw ShapeError("conv2d: input has " + std::to_string(Cin) + " channels, weight expects " +
                         std::to_string(p.weight->shape[1]));
    }
    const std::int64_t s = static_cast<std::int64_t>(p.stride);
    const std::int64_t pad = static_cast<std::int64_t>(p.padding);
    const std::int64_t OH = (static_cast<std::int64_t>(H) + 2 * pad - static_cast<std::int64_t>(kH)) / s + 1;
    const std::int64_t OW = (static_cast<std::int64_t>(W) + 2 * pad - static_cast<std::int64_t>(kW)) / s + 1;
    if (OH < 1 || OW < 1) {
        throw ShapeError("conv2d: non-positive output extent for input " + shape_str(x->shape));
    }

    auto out = Tensor<T>::create({N, Cout, static_cast<std::size_t>(OH), static_cast<std::size_t>(OW)});
    const std::size_t oplane = static_cast<std::size_t>(OH * OW);
    const std::size_t iplane = H * W;

    if (p.bias) {
        for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t co = 0; co < Cout; ++co) {
                T* orow = out->data.data() + (n * Cout + co) * oplane;
                const T b = p.bias->data[co];
                for (std::size_t i = 0; i < oplane; ++i) orow[i] = b;
            }
        }
    }

    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t co = 0; co < Cout; ++co) {
            T* obase = out->data.data() + (n * Cout + co) * oplane;
            for (std::size_t ci = 0; ci < Cin; ++ci) {
                const T* xbase = x->data.data() + (n * Cin + ci) * iplane;
                const T* wbase = p.weight->data.data() + ((co * Cin + ci) * kH) * kW;
                for (std::size_t kh = 0; kh < kH; ++kh) {
                    const std::int64_t off_h = static_cast<std::int64_t>(kh) - pad;
                    const auto rh = valid_range(static_cast<std::int64_t>(H), OH, s, off_h);
                    for (std::size_t kw = 0; kw < kW; ++kw) {
                        const T w = wbase[kh * kW + kw];
                        if (w == T(0)) continue;
                        const std::int64_t off_w = static_cast<std::int64_t>(kw) - pad;
                        const auto rw = valid_range(static_cast<std::int64_t>(W), OW, s, off_w);
                        for (std::int64_t oh = rh.lo; oh <= rh.hi; ++oh) {
                            const T* xrow = xbase + (oh * s + off_h) * static_cast<std::int64_t>(W);
                            T* orow = obase + oh * OW;
                            for (std::int64_t ow = rw.lo; ow <= rw.hi; ++ow) {
                                orow[ow] += w * xrow[ow * s + off_w];
                            }
                        }
                    }
                }
            }
        }
    }

    const bool needs_grad =
        x->requires_grad || p.weight->requires_grad || (p.bias && p.bias->requires_grad);
    if (tape && needs_grad) {
        out->requires_grad = true;
        auto weight = p.weight;
        auto bias = p.bias;
        tape->record("conv2d", bias ? std::initializer_list<TensorPtr<T>>{x, weight, bias}
                                    : std::initializer_list<TensorPtr<T>>{x, weight},
                     out, [x, weight, bias, out, s, pad, N, Cin, Cout, H, W, kH, kW, OH, OW,
                           oplane, iplane] {
                         if (out->grad.empty()) return;
                         if (bias && bias->requires_grad) {
                             bias->ensure_grad();
                             for (std::size_t n = 0; n < N; ++n) {
                                 for (std::size_t co = 0; co < Cout; ++co) {
                                     const T* grow = out->grad.data() + (n * Cout + co) * oplane;
                                     T acc = T(0);
                                     for (std::size_t i = 0; i < oplane; ++i) acc += grow[i];
                                     bias->grad[co] += acc;
                                 }
                             }
                         }
                         const bool dx = x->requires_grad;
                         const bool dw = weight->requires_grad;
                         if (!dx && !dw) return;
                         if (dx) x->ensure_grad();
                         if (dw) weight->ensure_grad();
                         for (std::size_t n = 0; n < N; ++n) {
                             for (std::size_t co = 0; co < Cout; ++co) {
                                 const T* gbase = out->grad.data() + (n * Cout + co) * oplane;
                                 for (std::size_t ci = 0; ci < Cin; ++ci) {
                                     const T* xbase = x->data.data() + (n * Cin + ci) * iplane;
                                     T* dxbase = dx ? x->grad.data() + (n * Cin + ci) * iplane : nullptr;
                                     for (std::size_t kh = 0; kh < kH; ++kh) {
                                         const std::int64_t off_h = static_cast<std::int64_t>(kh) - pad;
                                         const auto rh = valid_range(static_cast<std::int64_t>(H), OH, s, off_h);
                                         for (std::size_t kw = 0; kw < kW; ++kw) {
                                             const std::int64_t off_w = static_cast<std::int64_t>(kw) - pad;
                                             const auto rw = valid_range(static_cast<std::int64_t>(W), OW, s, off_w);
                                             const std::size_t widx = ((co * Cin + ci) * kH + kh) * kW + kw;
                                             const T w = weight->data[widx];
                                             T dw_acc = T(0);
                                             for (std::int64_t oh = rh.lo; oh <= rh.hi; ++oh) {
                                                 const std::int64_t ih = oh * s + off_h;
                                                 const T* grow = gbase + oh * OW;
                                                 const T* xrow = xbase + ih * static_cast<std::int64_t>(W);
                                                 T* dxrow = dx ? dxbase + ih * static_cast<std::int64_t>(W) : nullptr;
                                                 for (std::int64_t ow = rw.lo; ow <= rw.hi; ++ow) {
                                                     const T g = grow[ow];
                                                     dw_acc += g * xrow[ow * s + off_w];
                                                     if (dx) dxrow[ow * s + off_w] += g * w;
                                                 }
                                             }
                                             if (dw) weight->grad[widx] += dw_acc;
                                         }
                                     }
                                 }
                             }
                         }
                     });
    }
    return out;
}

// ---- transposed_conv2d -----------------------------------------------------

template <class T>
TensorPtr<T> transposed_conv2d(Tape<T>* tape, const TensorPtr<T>& x, const Conv2dParams<T>& p) {
    require_4d(x, "transposed_conv2d");
    const std::size_t N = x->shape[0], Cin = x->shape[1], H = x->shape[2], W = x->shape[3];
    const std::size_t Cout = p.weight->shape[0], kH = p.weight->shape[2], kW = p.weight->shape[3];
    if (p.weight->shape[1] != Cin) {
        throw ShapeError("transposed_conv2d: input has " + std::to_string(Cin) +
                         " channels, weight expects " + std::to_string(p.weight->shape[1]));
    }
    if (kH != p.stride || kW != p.stride || p.padding != 0) {
        throw ShapeError("transposed_conv2d: configuration must satisfy kernel == stride, "
                         "padding == 0 for exact upsampling");
    }
    const std::size_t s = p.stride;
    const std::size_t OH = s * H, OW = s * W;
    auto out = Tensor<T>::create({N, Cout, OH, OW});
    const std::size_t oplane = OH * OW, iplane = H * W;

    // kernel == stride means each output pixel has exactly one source pixel:
    // out[oh,ow] <- x[oh/s, ow/s] with kernel tap (oh%s, ow%s).
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t co = 0; co < Cout; ++co) {
            T* obase = out->data.data() + (n * Cout + co) * oplane;
            const T b = p.bias ? p.bias->data[co] : T(0);
            if (p.bias) {
                for (std::size_t i = 0; i < oplane; ++i) obase[i] = b;
            }
            for (std::size_t ci = 0; ci < Cin; ++ci) {
                const T* xbase = x->data.data() + (n * Cin + ci) * iplane;
                const T* wbase = p.weight->data.data() + ((co * Cin + ci) * kH) * kW;
                for (std::size_t i = 0; i < H; ++i) {
                    for (std::size_t u = 0; u < s; ++u) {
                        T* orow = obase + (i * s + u) * OW;
                        const T* xrow = xbase + i * W;
                        const T* wrow = wbase + u * kW;
                        for (std::size_t j = 0; j < W; ++j) {
                            const T xv = xrow[j];
                            for (std::size_t v = 0; v < s; ++v) {
                                orow[j * s + v] += xv * wrow[v];
                            }
                        }
                    }
                }
            }
        }
    }

    const bool needs_grad =
        x->requires_grad || p.weight->requires_grad || (p.bias && p.bias->requires_grad);
    if (tape && needs_grad) {
        out->requires_grad = true;
        auto weight = p.weight;
        auto bias = p.bias;
        tape->record("transposed_conv2d",
                     bias ? std::initializer_list<TensorPtr<T>>{x, weight, bias}
                          : std::initializer_list<TensorPtr<T>>{x, weight},
                     out, [x, weight, bias, out, N, Cin, Cout, H, W, s, kW, OW, oplane, iplane] {
                         if (out->grad.empty()) return;
                         if (bias && bias->requires_grad) {
                             bias->ensure_grad();
                             for (std::size_t n = 0; n < N; ++n) {
                                 for (std::size_t co = 0; co < Cout; ++co) {
                                     const T* grow = out->grad.data() + (n * Cout + co) * oplane;
                                     T acc = T(0);
                                     for (std::size_t i = 0; i < oplane; ++i) acc += grow[i];
                                     bias->grad[co] += acc;
                                 }
                             }
                         }
                         const bool dx = x->requires_grad;
                         const bool dw = weight->requires_grad;
                         if (!dx && !dw) return;
                         if (dx) x->ensure_grad();
                         if (dw) weight->ensure_grad();
                         for (std::size_t n = 0; n < N; ++n) {
                             for (std::size_t co = 0; co < Cout; ++co) {
                                 const T* gbase = out->grad.data() + (n * Cout + co) * oplane;
                                 for (std::size_t ci = 0; ci < Cin; ++ci) {
                                     const T* xbase = x->data.data() + (n * Cin + ci) * iplane;
                                     T* dxbase = dx ? x->grad.data() + (n * Cin + ci) * iplane : nullptr;
                                     const T* wbase = weight->data.data() + ((co * Cin + ci) * s) * kW;
                                     T* dwbase = dw ? weight->grad.data() + ((co * Cin + ci) * s) * kW : nullptr;
                                     for (std::size_t i = 0; i < H; ++i) {
                                         for (std::size_t u = 0; u < s; ++u) {
                                             const T* grow = gbase + (i * s + u) * OW;
                                             const T* xrow = xbase + i * W;
                                             T* dxrow = dx ? dxbase + i * W : nullptr;
                                             for (std::size_t j = 0; j < W; ++j) {
                                                 for (std::size_t v = 0; v < s; ++v) {
                                                     const T g = grow[j * s + v];
                                                     if (dx) dxrow[j] += g * wbase[u * kW + v];
                                                     if (dw) dwbase[u * kW + v] += g * xrow[j];
                                                 }
                                             }
                                         }
                                     }
                                 }
                             }
                         }
                     });
    }
    return out;
}

// ---- batchnorm2d -----------------------------------------------------------

template <class T>
TensorPtr<T> batchnorm2d(Tape<T>* tape, const TensorPtr<T>& x, BatchNorm2dParams<T>& p, Mode mode) {
    require_4d(x, "batchnorm2d");
    const std::size_t N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
    if (C != p.channels()) {
        throw ShapeError("batchnorm2d: input has " + std::to_string(C) + " channels, params have " +
                         std::to_string(p.channels()));
    }
    const std::size_t plane = H * W;
    const std::size_t count = N * plane;
    if (mode == Mode::train && count == 1) {
        throw ShapeError("batchnorm2d: train mode needs more than one value per channel");
    }

    std::vector<T> mean(C), inv_std(C);
    if (mode == Mode::train) {
        for (std::size_t c = 0; c < C; ++c) {
            T sum = T(0);
            for (std::size_t n = 0; n < N; ++n) {
                const T* row = x->data.data() + (n * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) sum += row[i];
            }
            mean[c] = sum / static_cast<T>(count);
            T sq = T(0);
            for (std::size_t n = 0; n < N; ++n) {
                const T* row = x->data.data() + (n * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const T d = row[i] - mean[c];
                    sq += d * d;
                }
            }
            const T var = sq / static_cast<T>(count);
            inv_std[c] = T(1) / std::sqrt(var + p.epsilon);
            p.running_mean->data[c] = (T(1) - p.momentum) * p.running_mean->data[c] + p.momentum * mean[c];
            p.running_var->data[c] = (T(1) - p.momentum) * p.running_var->data[c] + p.momentum * var;
        }
    } else {
        for (std::size_t c = 0; c < C; ++c) {
            mean[c] = p.running_mean->data[c];
            inv_std[c] = T(1) / std::sqrt(p.running_var->data[c] + p.epsilon);
        }
    }

    auto out = Tensor<T>::create(x->shape);
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t c = 0; c < C; ++c) {
            const T* row = x->data.data() + (n * C + c) * plane;
            T* orow = out->data.data() + (n * C + c) * plane;
            const T g = p.gamma->data[c], b = p.beta->data[c], m = mean[c], is = inv_std[c];
            for (std::size_t i = 0; i < plane; ++i) orow[i] = (row[i] - m) * is * g + b;
        }
    }

    const bool needs_grad = x->requires_grad || p.gamma->requires_grad || p.beta->requires_grad;
    if (tape && needs_grad) {
        out->requires_grad = true;
        auto gamma = p.gamma;
        auto beta = p.beta;
        tape->record("batchnorm2d", {x, gamma, beta}, out,
                     [x, gamma, beta, out, mean, inv_std, mode, N, C, plane, count] {
                         if (out->grad.empty()) return;
                         for (std::size_t c = 0; c < C; ++c) {
                             const T m = mean[c], is = inv_std[c], gm = gamma->data[c];
                             T sum_g = T(0), sum_gx = T(0);
                             for (std::size_t n = 0; n < N; ++n) {
                                 const std::size_t base = (n * C + c) * plane;
                                 for (std::size_t i = 0; i < plane; ++i) {
                                     const T go = out->grad[base + i];
                                     sum_g += go;
                                     sum_gx += go * (x->data[base + i] - m) * is;
                                 }
                             }
                             if (gamma->requires_grad) {
                                 gamma->ensure_grad();
                                 gamma->grad[c] += sum_gx;
                             }
                             if (beta->requires_grad) {
                                 beta->ensure_grad();
                                 beta->grad[c] += sum_g;
                             }
                             if (x->requires_grad) {
                                 x->ensure_grad();
                                 if (mode == Mode::train) {
                                     // dx = gamma*is/n * (n*g - sum(g) - xhat*sum(g*xhat))
                                     const T k = gm * is / static_cast<T>(count);
                                     for (std::size_t n = 0; n < N; ++n) {
                                         const std::size_t base = (n * C + c) * plane;
                                         for (std::size_t i = 0; i < plane; ++i) {
                                             const T go = out->grad[base + i];
                                             const T xhat = (x->data[base + i] - m) * is;
                                             x->grad[base + i] +=
                                                 k * (static_cast<T>(count) * go - sum_g - xhat * sum_gx);
                                         }
                                     }
                                 } else {
                                     const T k = gm * is;
                                     for (std::size_t n = 0; n < N; ++n) {
                                         const std::size_t base = (n * C + c) * plane;
                                         for (std::size_t i = 0; i < plane; ++i) {
                                             x->grad[base + i] += k * out->grad[base + i];
                                         }
                                     }
                                 }
                             }
                         }
                     });
    }
    return out;
}

// ---- relu / softmax / pooling ------------------------------------------------

template <class T>
TensorPtr<T> relu(Tape<T>* tape, const TensorPtr<T>& x) {
    auto out = Tensor<T>::create(x->shape);
    for (std::size_t i = 0; i < x->numel(); ++i) {
        out->data[i] = x->data[i] > T(0) ? x->data[i] : T(0);
    }
    if (tape && x->requires_grad) {
        out->requires_grad = true;
        tape->record("relu", {x}, out, [x, out] {
            if (out->grad.empty()) return;
            x->ensure_grad();
            for (std::size_t i = 0; i < x->numel(); ++i) {
                if (x->data[i] > T(0)) x->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

template <class T>
TensorPtr<T> softmax_channels(Tape<T>* tape, const TensorPtr<T>& x) {
    if (x->rank() < 2) {
        throw ShapeError("softmax_channels: need an [N,C,...] tensor, got " + shape_str(x->shape));
    }
    const std::size_t N = x->shape[0], C = x->shape[1];
    std::size_t S = 1;
    for (std::size_t i = 2; i < x->rank(); ++i) S *= x->shape[i];

    auto out = Tensor<T>::create(x->shape);
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t s = 0; s < S; ++s) {
            const std::size_t base = n * C * S + s;
            T mx = x->data[base];
            for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, x->data[base + c * S]);
            T sum = T(0);
            for (std::size_t c = 0; c < C; ++c) {
                const T e = std::exp(x->data[base + c * S] - mx);
                out->data[base + c * S] = e;
                sum += e;
            }
            const T inv = T(1) / sum;
            for (std::size_t c = 0; c < C; ++c) out->data[base + c * S] *= inv;
        }
    }

    if (tape && x->requires_grad) {
        out->requires_grad = true;
        tape->record("softmax_channels", {x}, out, [x, out, N, C, S] {
            if (out->grad.empty()) return;
            x->ensure_grad();
            for (std::size_t n = 0; n < N; ++n) {
                for (std::size_t s = 0; s < S; ++s) {
                    const std::size_t base = n * C * S + s;
                    T dot = T(0);
                    for (std::size_t c = 0; c < C; ++c) {
                        dot += out->data[base + c * S] * out->grad[base + c * S];
                    }
                    for (std::size_t c = 0; c < C; ++c) {
                        const std::size_t i = base + c * S;
                        x->grad[i] += out->data[i] * (out->grad[i] - dot);
                    }
                }
            }
        });
    }
    return out;
}

template <class T>
TensorPtr<T> maxpool2d(Tape<T>* tape, const TensorPtr<T>& x, std::size_t k, std::size_t stride,
                       std::size_t padding) {
    require_4d(x, "maxpool2d");
    const std::size_t N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
    const std::int64_t OH =
        (static_cast<std::int64_t>(H) + 2 * static_cast<std::int64_t>(padding) - static_cast<std::int64_t>(k)) /
            static_cast<std::int64_t>(stride) + 1;
    const std::int64_t OW =
        (static_cast<std::int64_t>(W) + 2 * static_cast<std::int64_t>(padding) - static_cast<std::int64_t>(k)) /
            static_cast<std::int64_t>(stride) + 1;
    if (OH < 1 || OW < 1 || k < 1) {
        throw ShapeError("maxpool2d: invalid pooling geometry for input " + shape_str(x->shape));
    }

    auto out = Tensor<T>::create({N, C, static_cast<std::size_t>(OH), static_cast<std::size_t>(OW)});
    // argmax per output element, as an index into the input plane
    auto argmax = std::make_shared<std::vector<std::size_t>>(out->numel());
    const std::size_t iplane = H * W;

    std::size_t oi = 0;
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t c = 0; c < C; ++c) {
            const T* xbase = x->data.data() + (n * C + c) * iplane;
            for (std::int64_t oh = 0; oh < OH; ++oh) {
                for (std::int64_t ow = 0; ow < OW; ++ow, ++oi) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::size_t best_idx = 0;
                    bool found = false;
                    for (std::size_t u = 0; u < k; ++u) {
                        const std::int64_t ih = oh * static_cast<std::int64_t>(stride) +
                                                static_cast<std::int64_t>(u) - static_cast<std::int64_t>(padding);
                        if (ih < 0 || ih >= static_cast<std::int64_t>(H)) continue;
                        for (std::size_t v = 0; v < k; ++v) {
                            const std::int64_t iw = ow * static_cast<std::int64_t>(stride) +
                                                    static_cast<std::int64_t>(v) - static_cast<std::int64_t>(padding);
                            if (iw < 0 || iw >= static_cast<std::int64_t>(W)) continue;
                            const T val = xbase[ih * static_cast<std::int64_t>(W) + iw];
                            if (!found || val > best) {
                                best = val;
                                best_idx = static_cast<std::size_t>(ih * static_cast<std::int64_t>(W) + iw);
                                found = true;
                            }
                        }
                    }
                    if (!found) {
                        throw ShapeError("maxpool2d: window contains no input pixels");
                    }
                    out->data[oi] = best;
                    (*argmax)[oi] = best_idx;
                }
            }
        }
    }

    if (tape && x->requires_grad) {
        out->requires_grad = true;
        const std::size_t oplane = static_cast<std::size_t>(OH * OW);
        tape->record("maxpool2d", {x}, out, [x, out, argmax, N, C, iplane, oplane] {
            if (out->grad.empty()) return;
            x->ensure_grad();
            std::size_t oi = 0;
            for (std::size_t n = 0; n < N; ++n) {
                for (std::size_t c = 0; c < C; ++c) {
                    T* dxbase = x->grad.data() + (n * C + c) * iplane;
                    for (std::size_t i = 0; i < oplane; ++i, ++oi) {
                        dxbase[(*argmax)[oi]] += out->grad[oi];
                    }
                }
            }
        });
    }
    return out;
}

template <class T>
TensorPtr<T> global_avg_pool(Tape<T>* tape, const TensorPtr<T>& x) {
    require_4d(x, "global_avg_pool");
    const std::size_t N = x->shape[0], C = x->shape[1], plane = x->shape[2] * x->shape[3];
    auto out = Tensor<T>::create({N, C});
    const T inv = T(1) / static_cast<T>(plane);
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const T* row = x->data.data() + nc * plane;
        T sum = T(0);
        for (std::size_t i = 0; i < plane; ++i) sum += row[i];
        out->data[nc] = sum * inv;
    }
    if (tape && x->requires_grad) {
        out->requires_grad = true;
        tape->record("global_avg_pool", {x}, out, [x, out, N, C, plane, inv] {
            if (out->grad.empty()) return;
            x->ensure_grad();
            for (std::size_t nc = 0; nc < N * C; ++nc) {
                T* drow = x->grad.data() + nc * plane;
                const T g = out->grad[nc] * inv;
                for (std::size_t i = 0; i < plane; ++i) drow[i] += g;
            }
        });
    }
    return out;
}

// ---- instantiations --------------------------------------------------------

#define RAUNET_INSTANTIATE(T)                                                                   \
    template struct Conv2dParams<T>;                                                           \
    template struct BatchNorm2dParams<T>;                                                      \
    template TensorPtr<T> conv2d<T>(Tape<T>*, const TensorPtr<T>&, const Conv2dParams<T>&);    \
    template TensorPtr<T> transposed_conv2d<T>(Tape<T>*, const TensorPtr<T>&,                  \
                                               const Conv2dParams<T>&);                         \
    template TensorPtr<T> batchnorm2d<T>(Tape<T>*, const TensorPtr<T>&, BatchNorm2dParams<T>&, \
                                         Mode);                                                 \
    template TensorPtr<T> relu<T>(Tape<T>*, const TensorPtr<T>&);                              \
    template TensorPtr<T> softmax_channels<T>(Tape<T>*, const TensorPtr<T>&);                  \
    template TensorPtr<T> maxpool2d<T>(Tape<T>*, const TensorPtr<T>&, std::size_t, std::size_t, \
                                       std::size_t);                                            \
    template TensorPtr<T> global_avg_pool<T>(Tape<T>*, const TensorPtr<T>&);

RAUNET_INSTANTIATE(float)
RAUNET_INSTANTIATE(double)
#undef RAUNET_INSTANTIATE

}  // namespace raunet
