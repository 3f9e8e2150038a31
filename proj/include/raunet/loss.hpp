#pragma once

#include "raunet/image.hpp"
#include "raunet/tensor.hpp"

namespace raunet {

enum class LossKind { ce, dice, celdice };

LossKind loss_kind_from_string(const std::string& s);
const char* to_string(LossKind kind);

struct LossConfig {
    double alpha = 0.2;        // hybrid weight: L = (1-alpha)*H - alpha*log(D)
    double smooth_eps = 1e-6;  // added to Dice numerator and denominator
    // Collapse all foreground classes into one region for the Dice term
    // instead of averaging per-class Dice.
    bool binary_dice = false;

    void validate() const;
};

// Mean pixel cross entropy with softmax inside the log (stable
// log-sum-exp form): H = -(1/(N*h*w)) sum log softmax(logits)[target].
template <class T>
TensorPtr<T> cross_entropy(Tape<T>* tape, const TensorPtr<T>& logits, const MaskBatch& target);

// Soft Dice coefficient D in (0,1] over softmax outputs. Per foreground
// class: D_c = (2*sum(p*g)+eps)/(sum(p)+sum(g)+eps) with sums over the whole
// batch; D is the mean over the K-1 foreground classes (or the collapsed
// foreground region when cfg.binary_dice).
template <class T>
TensorPtr<T> soft_dice(Tape<T>* tape, const TensorPtr<T>& probs, const MaskBatch& target,
                       const LossConfig& cfg);

// Hybrid objective L = (1-alpha)*H - alpha*log(D), L >= 0.
template <class T>
TensorPtr<T> cel_dice(Tape<T>* tape, const TensorPtr<T>& logits, const MaskBatch& target,
                      const LossConfig& cfg);

// Plain Dice loss 1 - D(softmax(logits)), one of the ablation objectives.
template <class T>
TensorPtr<T> dice_loss(Tape<T>* tape, const TensorPtr<T>& logits, const MaskBatch& target,
                       const LossConfig& cfg);

// Dispatch on the configured objective.
template <class T>
TensorPtr<T> segmentation_loss(Tape<T>* tape, LossKind kind, const TensorPtr<T>& logits,
                               const MaskBatch& target, const LossConfig& cfg);

}  // namespace raunet
