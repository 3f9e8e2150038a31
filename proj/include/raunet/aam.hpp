#pragma once

#include "raunet/nn_ops.hpp"

namespace raunet {

// Attention block fusing an upsampled decoder map (high-level) with an
// encoder skip (low-level): global pooling of both, two 1x1 projections with
// ReLU, a third 1x1 projection with batch normalization, softmax over
// channels, then channel-wise multiply of the skip and additive calibration.
template <class T>
struct AamParams {
    Conv2dParams<T> w_alpha;        // 1x1, C_h -> C_a
    Conv2dParams<T> w_beta;         // 1x1, C_l -> C_a
    Conv2dParams<T> w_phi;          // 1x1, C_a -> C_l
    BatchNorm2dParams<T> bn_phi;    // over C_l

    static AamParams make(std::size_t c_high, std::size_t c_low, std::size_t c_attn, Rng& rng);

    std::size_t high_channels() const { return w_alpha.in_channels(); }
    std::size_t low_channels() const { return w_phi.out_channels(); }
};

// Attentive vector [N, C_l]: softmax-normalized per-channel weights. Entries
// are in (0,1) and sum to 1 over channels for every batch item.
template <class T>
TensorPtr<T> aam_vector(Tape<T>* tape, const TensorPtr<T>& x_high, const TensorPtr<T>& y_low,
                        AamParams<T>& p, Mode mode);

// out = y_low * broadcast(attn) + x_high. x_high must already carry C_l
// channels (the decoder's transposed conv projects onto the skip width).
template <class T>
TensorPtr<T> aam_fuse(Tape<T>* tape, const TensorPtr<T>& x_high, const TensorPtr<T>& y_low,
                      const TensorPtr<T>& attn);

}  // namespace raunet
