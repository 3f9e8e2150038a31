#include "raunet/model.hpp"

#include <cmath>

namespace raunet {

void ModelConfig::validate() const {
    if (num_classes < 2) throw ShapeError("ModelConfig: num_classes must be >= 2");
    if (!(width_mult > 0.0)) throw ShapeError("ModelConfig: width_mult must be positive");
    for (std::size_t b : block_counts) {
        if (b < 1) throw ShapeError("ModelConfig: block counts must be >= 1");
    }
    if (input_h % 32 != 0 || input_w % 32 != 0) {
        throw ShapeError("ModelConfig: input size must be divisible by 32");
    }
    for (std::size_t c : stage_channels()) {
        if (c < 1) throw ShapeError("ModelConfig: width_mult rounds a stage to zero channels");
    }
}

std::array<std::size_t, 5> ModelConfig::stage_channels() const {
    const std::array<std::size_t, 5> base = {64, 64, 128, 256, 512};
    std::array<std::size_t, 5> out{};
    for (std::size_t i = 0; i < 5; ++i) {
        out[i] = static_cast<std::size_t>(std::lround(width_mult * static_cast<double>(base[i])));
    }
    return out;
}

namespace {

template <class T>
Conv2dParams<T> seeded_conv(std::uint64_t seed, const std::string& name, std::size_t cin,
                            std::size_t cout, std::size_t k, std::size_t stride,
                            std::size_t padding, bool bias) {
    Rng rng(Rng::mix(seed, Rng::hash_str(name)));
    return Conv2dParams<T>::make(cin, cout, k, stride, padding, bias, rng);
}

template <class T>
AamParams<T> seeded_aam(std::uint64_t seed, const std::string& prefix, std::size_t c_high,
                        std::size_t c_low) {
    // attention width C_a = C_l
    AamParams<T> p;
    p.w_alpha = seeded_conv<T>(seed, prefix + ".alpha.weight", c_high, c_low, 1, 1, 0, true);
    p.w_beta = seeded_conv<T>(seed, prefix + ".beta.weight", c_low, c_low, 1, 1, 0, true);
    p.w_phi = seeded_conv<T>(seed, prefix + ".phi.weight", c_low, c_low, 1, 1, 0, true);
    p.bn_phi = BatchNorm2dParams<T>::make(c_low);
    return p;
}

std::size_t tensor_count(const Shape& s) { return shape_numel(s); }

}  // namespace

template <class T>
RaunetModel<T> RaunetModel<T>::build(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const auto ch = cfg.stage_channels();

    RaunetModel<T> m;
    m.config = cfg;
    m.stem.conv = seeded_conv<T>(seed, "stem.conv.weight", 3, ch[0], 7, 2, 3, false);
    m.stem.bn = BatchNorm2dParams<T>::make(ch[0]);

    std::size_t cin = ch[0];
    for (std::size_t s = 0; s < 4; ++s) {
        const std::size_t cout = ch[s + 1];
        // stage1 keeps stride 1 (the maxpool already divided by 2)
        const std::size_t first_stride = s == 0 ? 1 : 2;
        for (std::size_t b = 0; b < cfg.block_counts[s]; ++b) {
            const std::string prefix =
                "enc" + std::to_string(s + 1) + ".b" + std::to_string(b);
            const std::size_t bin = b == 0 ? cin : cout;
            const std::size_t stride = b == 0 ? first_stride : 1;
            BasicBlock<T> blk;
            blk.c1.conv = seeded_conv<T>(seed, prefix + ".conv1.weight", bin, cout, 3, stride, 1, false);
            blk.c1.bn = BatchNorm2dParams<T>::make(cout);
            blk.c2.conv = seeded_conv<T>(seed, prefix + ".conv2.weight", cout, cout, 3, 1, 1, false);
            blk.c2.bn = BatchNorm2dParams<T>::make(cout);
            if (bin != cout || stride != 1) {
                ConvBn<T> proj;
                proj.conv = seeded_conv<T>(seed, prefix + ".proj.weight", bin, cout, 1, stride, 0, false);
                proj.bn = BatchNorm2dParams<T>::make(cout);
                blk.proj = std::move(proj);
            }
            m.stages[s].push_back(std::move(blk));
        }
        cin = cout;
    }

    // decoder runs deep -> shallow against skips at channels {ch3, ch2, ch1, ch0}
    const std::array<std::size_t, 4> skip_ch = {ch[3], ch[2], ch[1], ch[0]};
    std::size_t dec_in = ch[4];
    for (std::size_t d = 0; d < 4; ++d) {
        const std::string prefix = "dec" + std::to_string(d + 1);
        DecoderStage<T>& stage = m.decoder[d];
        stage.up = seeded_conv<T>(seed, prefix + ".up.weight", dec_in, skip_ch[d], 2, 2, 0, false);
        stage.up_bn = BatchNorm2dParams<T>::make(skip_ch[d]);
        if (cfg.use_aam) {
            stage.aam = seeded_aam<T>(seed, prefix + ".aam", skip_ch[d], skip_ch[d]);
        }
        dec_in = skip_ch[d];
    }

    m.head_up.conv = seeded_conv<T>(seed, "head.up.weight", ch[0], ch[0], 2, 2, 0, false);
    m.head_up.bn = BatchNorm2dParams<T>::make(ch[0]);
    m.classifier = seeded_conv<T>(seed, "head.classifier.weight", ch[0], cfg.num_classes, 1, 1, 0, true);
    return m;
}

namespace {

template <class T>
TensorPtr<T> conv_bn_relu(Tape<T>* tape, const TensorPtr<T>& x, ConvBn<T>& cb, Mode mode) {
    return relu(tape, batchnorm2d(tape, conv2d(tape, x, cb.conv), cb.bn, mode));
}

template <class T>
TensorPtr<T> basic_block_forward(Tape<T>* tape, const TensorPtr<T>& x, BasicBlock<T>& blk,
                                 Mode mode) {
    auto t = conv_bn_relu(tape, x, blk.c1, mode);
    t = batchnorm2d(tape, conv2d(tape, t, blk.c2.conv), blk.c2.bn, mode);
    auto shortcut = blk.proj ? batchnorm2d(tape, conv2d(tape, x, blk.proj->conv), blk.proj->bn, mode)
                             : x;
    return relu(tape, add(tape, t, shortcut));
}

}  // namespace

template <class T>
TensorPtr<T> RaunetModel<T>::forward(Tape<T>* tape, const TensorPtr<T>& images, Mode mode) {
    if (images->rank() != 4 || images->shape[1] != 3 || images->shape[2] != config.input_h ||
        images->shape[3] != config.input_w) {
        throw ShapeError("forward: expected [N,3," + std::to_string(config.input_h) + "," +
                         std::to_string(config.input_w) + "] images, got " +
                         shape_str(images->shape));
    }
    if (mode == Mode::eval && tape != nullptr) {
        throw ShapeError("forward: eval mode records no tape");
    }

    auto t = conv_bn_relu(tape, images, stem, mode);
    std::array<TensorPtr<T>, 4> skips;
    skips[3] = t;  // H/2, ch0
    t = maxpool2d(tape, t, 3, 2, 1);
    for (std::size_t s = 0; s < 4; ++s) {
        for (auto& blk : stages[s]) t = basic_block_forward(tape, t, blk, mode);
        if (s < 3) skips[2 - s] = t;  // H/4, H/8, H/16
    }

    for (std::size_t d = 0; d < 4; ++d) {
        auto up = relu(tape, batchnorm2d(tape, transposed_conv2d(tape, t, decoder[d].up),
                                         decoder[d].up_bn, mode));
        const auto& skip = skips[d];
        if (decoder[d].aam) {
            auto attn = aam_vector(tape, up, skip, *decoder[d].aam, mode);
            t = aam_fuse(tape, up, skip, attn);
        } else {
            t = add(tape, up, skip);
        }
    }

    t = relu(tape, batchnorm2d(tape, transposed_conv2d(tape, t, head_up.conv), head_up.bn, mode));
    return conv2d(tape, t, classifier);
}

template <class T>
std::vector<typename RaunetModel<T>::NamedTensor> RaunetModel<T>::named_tensors() {
    std::vector<NamedTensor> out;
    auto add_conv = [&](const std::string& name, Conv2dParams<T>& c) {
        out.push_back({name + ".weight", c.weight, true});
        if (c.bias) out.push_back({name + ".bias", c.bias, true});
    };
    auto add_bn = [&](const std::string& name, BatchNorm2dParams<T>& bn) {
        out.push_back({name + ".gamma", bn.gamma, true});
        out.push_back({name + ".beta", bn.beta, true});
        out.push_back({name + ".running_mean", bn.running_mean, false});
        out.push_back({name + ".running_var", bn.running_var, false});
    };

    add_conv("stem.conv", stem.conv);
    add_bn("stem.bn", stem.bn);
    for (std::size_t s = 0; s < 4; ++s) {
        for (std::size_t b = 0; b < stages[s].size(); ++b) {
            const std::string prefix = "enc" + std::to_string(s + 1) + ".b" + std::to_string(b);
            BasicBlock<T>& blk = stages[s][b];
            add_conv(prefix + ".conv1", blk.c1.conv);
            add_bn(prefix + ".bn1", blk.c1.bn);
            add_conv(prefix + ".conv2", blk.c2.conv);
            add_bn(prefix + ".bn2", blk.c2.bn);
            if (blk.proj) {
                add_conv(prefix + ".proj", blk.proj->conv);
                add_bn(prefix + ".proj_bn", blk.proj->bn);
            }
        }
    }
    for (std::size_t d = 0; d < 4; ++d) {
        const std::string prefix = "dec" + std::to_string(d + 1);
        add_conv(prefix + ".up", decoder[d].up);
        add_bn(prefix + ".up_bn", decoder[d].up_bn);
        if (decoder[d].aam) {
            add_conv(prefix + ".aam.alpha", decoder[d].aam->w_alpha);
            add_conv(prefix + ".aam.beta", decoder[d].aam->w_beta);
            add_conv(prefix + ".aam.phi", decoder[d].aam->w_phi);
            add_bn(prefix + ".aam.bn", decoder[d].aam->bn_phi);
        }
    }
    add_conv("head.up", head_up.conv);
    add_bn("head.up_bn", head_up.bn);
    add_conv("head.classifier", classifier);
    return out;
}

template <class T>
std::vector<TensorPtr<T>> RaunetModel<T>::parameters() {
    std::vector<TensorPtr<T>> ps;
    for (auto& nt : named_tensors()) {
        if (nt.trainable) ps.push_back(nt.tensor);
    }
    return ps;
}

template <class T>
ParamCounts RaunetModel<T>::count_params() const {
    ParamCounts pc;
    auto conv_size = [](const Conv2dParams<T>& c) {
        return tensor_count(c.weight->shape) + (c.bias ? tensor_count(c.bias->shape) : 0);
    };
    auto bn_size = [](const BatchNorm2dParams<T>& bn) {
        return tensor_count(bn.gamma->shape) + tensor_count(bn.beta->shape);
    };

    pc.encoder = conv_size(stem.conv) + bn_size(stem.bn);
    for (const auto& stage : stages) {
        for (const auto& blk : stage) {
            pc.encoder += conv_size(blk.c1.conv) + bn_size(blk.c1.bn);
            pc.encoder += conv_size(blk.c2.conv) + bn_size(blk.c2.bn);
            if (blk.proj) pc.encoder += conv_size(blk.proj->conv) + bn_size(blk.proj->bn);
        }
    }
    for (const auto& stage : decoder) {
        pc.decoder += conv_size(stage.up) + bn_size(stage.up_bn);
        if (stage.aam) {
            pc.aam += conv_size(stage.aam->w_alpha) + conv_size(stage.aam->w_beta) +
                      conv_size(stage.aam->w_phi) + bn_size(stage.aam->bn_phi);
        }
    }
    pc.head = conv_size(head_up.conv) + bn_size(head_up.bn) + conv_size(classifier);
    pc.total = pc.encoder + pc.decoder + pc.aam + pc.head;
    return pc;
}

template <class T>
void RaunetModel<T>::zero_grad() {
    for (auto& p : parameters()) p->zero_grad();
}

template <class T>
std::vector<Mask> argmax_masks(const TensorPtr<T>& logits) {
    if (logits->rank() != 4) throw ShapeError("argmax_masks: expected [N,K,H,W] logits");
    const std::size_t N = logits->shape[0], K = logits->shape[1];
    const std::size_t H = logits->shape[2], W = logits->shape[3];
    const std::size_t S = H * W;
    std::vector<Mask> masks(N);
    for (std::size_t n = 0; n < N; ++n) {
        Mask& m = masks[n];
        m.height = H;
        m.width = W;
        m.ids.resize(S);
        for (std::size_t s = 0; s < S; ++s) {
            std::size_t best = 0;
            T bv = logits->data[n * K * S + s];
            for (std::size_t c = 1; c < K; ++c) {
                const T v = logits->data[n * K * S + c * S + s];
                if (v > bv) {
                    bv = v;
                    best = c;
                }
            }
            m.ids[s] = static_cast<std::uint8_t>(best);
        }
    }
    return masks;
}

#define RAUNET_INSTANTIATE(T)                \
    template struct RaunetModel<T>;          \
    template std::vector<Mask> argmax_masks<T>(const TensorPtr<T>&);

RAUNET_INSTANTIATE(float)
RAUNET_INSTANTIATE(double)
#undef RAUNET_INSTANTIATE

}  // namespace raunet
