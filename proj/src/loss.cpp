#include "raunet/loss.hpp"

#include <algorithm>
#include <cmath>

#include "raunet/nn_ops.hpp"

namespace raunet {

LossKind loss_kind_from_string(const std::string& s) {
    if (s == "ce") return LossKind::ce;
    if (s == "dice") return LossKind::dice;
    if (s == "celdice") return LossKind::celdice;
    throw ShapeError("unknown loss kind '" + s + "' (expected ce|dice|celdice)");
}

const char* to_string(LossKind kind) {
    switch (kind) {
        case LossKind::ce: return "ce";
        case LossKind::dice: return "dice";
        default: return "celdice";
    }
}

void LossConfig::validate() const {
    if (alpha < 0.0 || alpha > 1.0) throw ShapeError("loss alpha must be in [0,1]");
    if (!(smooth_eps > 0.0)) throw ShapeError("loss smooth_eps must be positive");
}

namespace {

template <class T>
void check_target(const TensorPtr<T>& scores, const MaskBatch& target, const char* op) {
    if (scores->rank() != 4) {
        throw ShapeError(std::string(op) + ": expected [N,K,H,W] scores, got " +
                         shape_str(scores->shape));
    }
    if (scores->shape[0] != target.n || scores->shape[2] != target.height ||
        scores->shape[3] != target.width) {
        throw ShapeError(std::string(op) + ": scores " + shape_str(scores->shape) +
                         " do not match target [" + std::to_string(target.n) + "," +
                         std::to_string(target.height) + "," + std::to_string(target.width) + "]");
    }
    const std::size_t k = scores->shape[1];
    for (std::uint8_t id : target.ids) {
        if (id >= k) {
            throw ShapeError(std::string(op) + ": target id " + std::to_string(id) +
                             " >= num classes " + std::to_string(k));
        }
    }
}

}  // namespace

// ---- cross entropy -----------------------------------------------------------

template <class T>
TensorPtr<T> cross_entropy(Tape<T>* tape, const TensorPtr<T>& logits, const MaskBatch& target) {
    check_target(logits, target, "cross_entropy");
    const std::size_t N = logits->shape[0], K = logits->shape[1];
    const std::size_t S = logits->shape[2] * logits->shape[3];
    const std::size_t pixels = N * S;

    // probs saved for the backward pass
    auto probs = std::make_shared<std::vector<T>>(logits->numel());
    double acc = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t s = 0; s < S; ++s) {
            const std::size_t base = n * K * S + s;
            T mx = logits->data[base];
            for (std::size_t c = 1; c < K; ++c) mx = std::max(mx, logits->data[base + c * S]);
            T sum = T(0);
            for (std::size_t c = 0; c < K; ++c) {
                const T e = std::exp(logits->data[base + c * S] - mx);
                (*probs)[base + c * S] = e;
                sum += e;
            }
            const T inv = T(1) / sum;
            for (std::size_t c = 0; c < K; ++c) (*probs)[base + c * S] *= inv;
            const std::size_t t = target.ids[n * S + s];
            // -log softmax(target) = log(sum) + mx - logit_t
            acc += static_cast<double>(std::log(sum)) + static_cast<double>(mx) -
                   static_cast<double>(logits->data[base + t * S]);
        }
    }
    auto out = Tensor<T>::from({1}, {static_cast<T>(acc / static_cast<double>(pixels))});

    if (tape && logits->requires_grad) {
        out->requires_grad = true;
        auto ids = std::make_shared<std::vector<std::uint8_t>>(target.ids);
        tape->record("cross_entropy", {logits}, out, [logits, out, probs, ids, N, K, S, pixels] {
            if (out->grad.empty()) return;
            logits->ensure_grad();
            const T g = out->grad[0] / static_cast<T>(pixels);
            for (std::size_t n = 0; n < N; ++n) {
                for (std::size_t s = 0; s < S; ++s) {
                    const std::size_t base = n * K * S + s;
                    const std::size_t t = (*ids)[n * S + s];
                    for (std::size_t c = 0; c < K; ++c) {
                        const T p = (*probs)[base + c * S];
                        logits->grad[base + c * S] += g * (p - (c == t ? T(1) : T(0)));
                    }
                }
            }
        });
    }
    return out;
}

// ---- soft dice ----------------------------------------------------------------

template <class T>
TensorPtr<T> soft_dice(Tape<T>* tape, const TensorPtr<T>& probs, const MaskBatch& target,
                       const LossConfig& cfg) {
    cfg.validate();
    check_target(probs, target, "soft_dice");
    const std::size_t N = probs->shape[0], K = probs->shape[1];
    const std::size_t S = probs->shape[2] * probs->shape[3];
    if (K < 2) throw ShapeError("soft_dice: need at least background + one foreground class");
    const T eps = static_cast<T>(cfg.smooth_eps);

    // Batch-aggregated sums per foreground class (or the collapsed region).
    const std::size_t terms = cfg.binary_dice ? 1 : K - 1;
    std::vector<T> num(terms), den(terms);
    if (cfg.binary_dice) {
        T inter = T(0), psum = T(0), gsum = T(0);
        for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t s = 0; s < S; ++s) {
                const std::size_t base = n * K * S + s;
                T pfg = T(0);
                for (std::size_t c = 1; c < K; ++c) pfg += probs->data[base + c * S];
                const bool fg = target.ids[n * S + s] != 0;
                psum += pfg;
                if (fg) {
                    inter += pfg;
                    gsum += T(1);
                }
            }
        }
        num[0] = T(2) * inter + eps;
        den[0] = psum + gsum + eps;
    } else {
        for (std::size_t c = 1; c < K; ++c) {
            T inter = T(0), psum = T(0), gsum = T(0);
            for (std::size_t n = 0; n < N; ++n) {
                const std::size_t base = n * K * S + c * S;
                const std::uint8_t* trow = target.ids.data() + n * S;
                for (std::size_t s = 0; s < S; ++s) {
                    const T p = probs->data[base + s];
                    psum += p;
                    if (trow[s] == c) {
                        inter += p;
                        gsum += T(1);
                    }
                }
            }
            num[c - 1] = T(2) * inter + eps;
            den[c - 1] = psum + gsum + eps;
        }
    }

    T dice = T(0);
    for (std::size_t i = 0; i < terms; ++i) dice += num[i] / den[i];
    dice /= static_cast<T>(terms);
    auto out = Tensor<T>::from({1}, {dice});

    if (tape && probs->requires_grad) {
        out->requires_grad = true;
        auto ids = std::make_shared<std::vector<std::uint8_t>>(target.ids);
        const bool binary = cfg.binary_dice;
        tape->record("soft_dice", {probs}, out, [probs, out, ids, num, den, binary, N, K, S, terms] {
            if (out->grad.empty()) return;
            probs->ensure_grad();
            const T g = out->grad[0] / static_cast<T>(terms);
            if (binary) {
                const T n0 = num[0], d0 = den[0];
                for (std::size_t n = 0; n < N; ++n) {
                    for (std::size_t s = 0; s < S; ++s) {
                        const bool fg = (*ids)[n * S + s] != 0;
                        // d(num/den)/dp = (2*g_pix*den - num)/den^2, identical
                        // for every foreground channel of the pixel
                        const T d = ((fg ? T(2) : T(0)) * d0 - n0) / (d0 * d0);
                        const std::size_t base = n * K * S + s;
                        for (std::size_t c = 1; c < K; ++c) {
                            probs->grad[base + c * S] += g * d;
                        }
                    }
                }
            } else {
                for (std::size_t c = 1; c < K; ++c) {
                    const T nc = num[c - 1], dc = den[c - 1];
                    const T inv_d2 = T(1) / (dc * dc);
                    for (std::size_t n = 0; n < N; ++n) {
                        const std::size_t base = n * K * S + c * S;
                        const std::uint8_t* trow = (*ids).data() + n * S;
                        for (std::size_t s = 0; s < S; ++s) {
                            const T gpix = trow[s] == c ? T(2) : T(0);
                            probs->grad[base + s] += g * (gpix * dc - nc) * inv_d2;
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---- hybrids -------------------------------------------------------------------

template <class T>
TensorPtr<T> cel_dice(Tape<T>* tape, const TensorPtr<T>& logits, const MaskBatch& target,
                      const LossConfig& cfg) {
    cfg.validate();
    const T alpha = static_cast<T>(cfg.alpha);
    auto h = cross_entropy(tape, logits, target);
    auto probs = softmax_channels(tape, logits);
    auto d = soft_dice(tape, probs, target, cfg);
    // L = (1-alpha)*H - alpha*log(D)
    return add(tape, scale(tape, h, T(1) - alpha), scale(tape, log_elem(tape, d), -alpha));
}

template <class T>
TensorPtr<T> dice_loss(Tape<T>* tape, const TensorPtr<T>& logits, const MaskBatch& target,
                       const LossConfig& cfg) {
    auto probs = softmax_channels(tape, logits);
    auto d = soft_dice(tape, probs, target, cfg);
    auto one = Tensor<T>::full({1}, T(1));
    return sub(tape, one, d);
}

template <class T>
TensorPtr<T> segmentation_loss(Tape<T>* tape, LossKind kind, const TensorPtr<T>& logits,
                               const MaskBatch& target, const LossConfig& cfg) {
    switch (kind) {
        case LossKind::ce: return cross_entropy(tape, logits, target);
        case LossKind::dice: return dice_loss(tape, logits, target, cfg);
        default: return cel_dice(tape, logits, target, cfg);
    }
}

#define RAUNET_INSTANTIATE(T)                                                                     \
    template TensorPtr<T> cross_entropy<T>(Tape<T>*, const TensorPtr<T>&, const MaskBatch&);     \
    template TensorPtr<T> soft_dice<T>(Tape<T>*, const TensorPtr<T>&, const MaskBatch&,          \
                                       const LossConfig&);                                        \
    template TensorPtr<T> cel_dice<T>(Tape<T>*, const TensorPtr<T>&, const MaskBatch&,           \
                                      const LossConfig&);                                         \
    template TensorPtr<T> dice_loss<T>(Tape<T>*, const TensorPtr<T>&, const MaskBatch&,          \
                                       const LossConfig&);                                        \
    template TensorPtr<T> segmentation_loss<T>(Tape<T>*, LossKind, const TensorPtr<T>&,          \
                                               const MaskBatch&, const LossConfig&);

RAUNET_INSTANTIATE(float)
RAUNET_INSTANTIATE(double)
#undef RAUNET_INSTANTIATE

}  // namespace raunet
