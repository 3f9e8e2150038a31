#include "raunet/aam.hpp"

namespace raunet {

template <class T>
AamParams<T> AamParams<T>::make(std::size_t c_high, std::size_t c_low, std::size_t c_attn,
                                Rng& rng) {
    AamParams<T> p;
    p.w_alpha = Conv2dParams<T>::make(c_high, c_attn, 1, 1, 0, true, rng);
    p.w_beta = Conv2dParams<T>::make(c_low, c_attn, 1, 1, 0, true, rng);
    p.w_phi = Conv2dParams<T>::make(c_attn, c_low, 1, 1, 0, true, rng);
    p.bn_phi = BatchNorm2dParams<T>::make(c_low);
    return p;
}

template <class T>
TensorPtr<T> aam_vector(Tape<T>* tape, const TensorPtr<T>& x_high, const TensorPtr<T>& y_low,
                        AamParams<T>& p, Mode mode) {
    if (x_high->rank() != 4 || y_low->rank() != 4) {
        throw ShapeError("aam_vector: inputs must be 4-d");
    }
    if (x_high->shape[0] != y_low->shape[0]) {
        throw ShapeError("aam_vector: batch sizes differ");
    }
    if (x_high->shape[2] != y_low->shape[2] || x_high->shape[3] != y_low->shape[3]) {
        throw ShapeError("aam_vector: spatial extents differ (high " + shape_str(x_high->shape) +
                         " vs low " + shape_str(y_low->shape) + ")");
    }
    if (x_high->shape[1] != p.high_channels() || y_low->shape[1] != p.w_beta.in_channels()) {
        throw ShapeError("aam_vector: channel counts do not match the parameters");
    }

    const std::size_t n = x_high->shape[0];

    auto gx = global_avg_pool(tape, x_high);
    auto gy = global_avg_pool(tape, y_low);
    auto gx4 = reshape(tape, gx, {n, x_high->shape[1], 1, 1});
    auto gy4 = reshape(tape, gy, {n, y_low->shape[1], 1, 1});

    auto branch_high = relu(tape, conv2d(tape, gx4, p.w_alpha));
    auto branch_low = relu(tape, conv2d(tape, gy4, p.w_beta));
    auto fused = add(tape, branch_high, branch_low);

    auto vec = conv2d(tape, fused, p.w_phi);
    vec = batchnorm2d(tape, vec, p.bn_phi, mode);
    vec = softmax_channels(tape, vec);
    return reshape(tape, vec, {n, p.low_channels()});
}

template <class T>
TensorPtr<T> aam_fuse(Tape<T>* tape, const TensorPtr<T>& x_high, const TensorPtr<T>& y_low,
                      const TensorPtr<T>& attn) {
    if (x_high->shape != y_low->shape) {
        throw ShapeError("aam_fuse: feature maps must share a shape, got " +
                         shape_str(x_high->shape) + " vs " + shape_str(y_low->shape));
    }
    if (attn->rank() != 2 || attn->shape[0] != y_low->shape[0] || attn->shape[1] != y_low->shape[1]) {
        throw ShapeError("aam_fuse: attentive vector " + shape_str(attn->shape) +
                         " does not match maps " + shape_str(y_low->shape));
    }
    auto a4 = reshape(tape, attn, {attn->shape[0], attn->shape[1], 1, 1});
    return add(tape, mul(tape, y_low, a4), x_high);
}

#define RAUNET_INSTANTIATE(T)                                                                \
    template struct AamParams<T>;                                                            \
    template TensorPtr<T> aam_vector<T>(Tape<T>*, const TensorPtr<T>&, const TensorPtr<T>&, \
                                        AamParams<T>&, Mode);                                \
    template TensorPtr<T> aam_fuse<T>(Tape<T>*, const TensorPtr<T>&, const TensorPtr<T>&,   \
                                      const TensorPtr<T>&);

RAUNET_INSTANTIATE(float)
RAUNET_INSTANTIATE(double)
#undef RAUNET_INSTANTIATE

}  // namespace raunet
