#pragma once

#include <array>
#include <optional>
#include <string>

#include "raunet/aam.hpp"
#include "raunet/image.hpp"

namespace raunet {

struct ModelConfig {
    std::size_t num_classes = 11;  // background + instrument classes
    double width_mult = 1.0;       // 1 = full scale
    std::array<std::size_t, 4> block_counts = {3, 4, 6, 3};
    bool use_aam = true;
    std::size_t input_h = 64;  // divisible by 32
    std::size_t input_w = 64;

    void validate() const;
    // Channels at {stem, stage1..stage4} = round(width_mult * {64,64,128,256,512}).
    std::array<std::size_t, 5> stage_channels() const;
};

template <class T>
struct ConvBn {
    Conv2dParams<T> conv;
    BatchNorm2dParams<T> bn;
};

template <class T>
struct BasicBlock {
    ConvBn<T> c1;
    ConvBn<T> c2;
    std::optional<ConvBn<T>> proj;  // 1x1 shortcut when shape changes
};

template <class T>
struct DecoderStage {
    Conv2dParams<T> up;  // transposed conv, exact x2, projects onto skip width
    BatchNorm2dParams<T> up_bn;
    std::optional<AamParams<T>> aam;  // absent on the plain-addition baseline
};

struct ParamCounts {
    std::size_t encoder = 0;
    std::size_t decoder = 0;
    std::size_t aam = 0;
    std::size_t head = 0;
    std::size_t total = 0;
};

// Residual encoder (ResNet34-shaped), attention decoder, then a final
// learnable x2 upsampling of the features and a 1x1 classifier at full
// resolution.
template <class T>
struct RaunetModel {
    ModelConfig config;
    ConvBn<T> stem;  // 7x7/s2 conv + BN (+ relu, then 3x3/s2 maxpool)
    std::array<std::vector<BasicBlock<T>>, 4> stages;
    std::array<DecoderStage<T>, 4> decoder;  // deep -> shallow
    ConvBn<T> head_up;                       // transposed x2, stem width -> stem width
    Conv2dParams<T> classifier;              // 1x1 -> num_classes

    // All parameters allocated and He-uniform initialized. Every tensor gets
    // its own seed stream derived from (seed, tensor name), so models that
    // share layers (baseline vs AAM) share their initialization.
    static RaunetModel build(const ModelConfig& cfg, std::uint64_t seed);

    // images [N,3,H,W] -> logits [N,num_classes,H,W]. Eval mode uses BN
    // running statistics and must not record a tape.
    TensorPtr<T> forward(Tape<T>* tape, const TensorPtr<T>& images, Mode mode);

    struct NamedTensor {
        std::string name;
        TensorPtr<T> tensor;
        bool trainable;
    };
    std::vector<NamedTensor> named_tensors();
    std::vector<TensorPtr<T>> parameters();  // trainable only
    ParamCounts count_params() const;
    void zero_grad();
};

// argmax over the class axis of eval-mode logits, one mask per batch item
template <class T>
std::vector<Mask> argmax_masks(const TensorPtr<T>& logits);

}  // namespace raunet
