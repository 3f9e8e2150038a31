#pragma once

#include "raunet/tensor.hpp"

namespace raunet {

enum class Mode { train, eval };

template <class T>
struct Conv2dParams {
    TensorPtr<T> weight;  // [Cout, Cin, kH, kW]
    TensorPtr<T> bias;    // [Cout], nullptr when the layer has no bias
    std::size_t stride = 1;
    std::size_t padding = 0;

    // He-uniform weight init, zero bias.
    static Conv2dParams make(std::size_t cin, std::size_t cout, std::size_t k,
                             std::size_t stride, std::size_t padding, bool with_bias, Rng& rng);

    std::size_t out_channels() const { return weight->shape[0]; }
    std::size_t in_channels() const { return weight->shape[1]; }
};

template <class T>
struct BatchNorm2dParams {
    TensorPtr<T> gamma;         // [C], trainable
    TensorPtr<T> beta;          // [C], trainable
    TensorPtr<T> running_mean;  // [C], buffer
    TensorPtr<T> running_var;   // [C], buffer
    T momentum = T(0.1);
    T epsilon = T(1e-5);

    static BatchNorm2dParams make(std::size_t channels);

    std::size_t channels() const { return gamma->shape[0]; }
};

// Cross-correlation with zero padding. Differentiable wrt x, weight, bias.
template <class T>
TensorPtr<T> conv2d(Tape<T>* tape, const TensorPtr<T>& x, const Conv2dParams<T>& p);

// Adjoint of a strided conv, restricted to the exact-upsampling configuration
// kernel == stride, padding == 0, so output extents are exactly (sH, sW).
// weight layout is [Cout, Cin, k, k] with x carrying Cin channels.
template <class T>
TensorPtr<T> transposed_conv2d(Tape<T>* tape, const TensorPtr<T>& x, const Conv2dParams<T>& p);

// Per-channel batch normalization. Train mode normalizes by batch statistics
// over (N,H,W) and updates the running buffers; eval mode uses the running
// statistics. Train mode requires N*H*W >= 2.
template <class T>
TensorPtr<T> batchnorm2d(Tape<T>* tape, const TensorPtr<T>& x, BatchNorm2dParams<T>& p, Mode mode);

template <class T>
TensorPtr<T> relu(Tape<T>* tape, const TensorPtr<T>& x);

// Softmax over the channel axis (axis 1) of an [N,C,...] tensor, computed
// with per-position max subtraction.
template <class T>
TensorPtr<T> softmax_channels(Tape<T>* tape, const TensorPtr<T>& x);

// Window max; backward routes the gradient to the first (row-major) maximal
// index. Padding is ignored for the max (never selected).
template <class T>
TensorPtr<T> maxpool2d(Tape<T>* tape, const TensorPtr<T>& x, std::size_t k, std::size_t stride,
                       std::size_t padding = 0);

// [N,C,H,W] -> [N,C] spatial mean.
template <class T>
TensorPtr<T> global_avg_pool(Tape<T>* tape, const TensorPtr<T>& x);

}  // namespace raunet
