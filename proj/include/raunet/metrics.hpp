#pragma once

#include <iosfwd>
#include <vector>

#include "raunet/image.hpp"

namespace raunet {

// rows = ground-truth class, cols = predicted class
struct ConfusionMatrix {
    std::size_t k = 0;
    std::vector<std::uint64_t> counts;  // k*k

    explicit ConfusionMatrix(std::size_t k = 0) : k(k), counts(k * k, 0) {}
    std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts[truth * k + pred]; }
    std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * k + pred]; }
    std::uint64_t row_sum(std::size_t truth) const;
    std::uint64_t total() const;
    void add(const ConfusionMatrix& other);
};

struct EvalResult {
    std::size_t k = 0;
    // Per-class hard Dice/IOU; -1 marks classes excluded from the means
    // (absent from both truth and prediction). Background (class 0) is
    // always excluded from the means.
    std::vector<double> dice;
    std::vector<double> iou;
    std::vector<double> pixel_acc;  // diag/row_sum, 0 when the row is empty
    double mean_dice = 1.0;
    double mean_iou = 1.0;
    ConfusionMatrix confusion;
};

// Hard-mask evaluation of one prediction against ground truth with k classes.
EvalResult evaluate(const Mask& pred, const Mask& truth, std::size_t k);

// Dataset-level report: mean over images of the per-image mean Dice/IOU,
// confusion matrices summed. Per-class dice/iou are recomputed from the
// pooled confusion matrix.
struct AggregateResult {
    std::size_t images = 0;
    double mean_dice = 0.0;  // mean over images of per-image mean_dice
    double mean_iou = 0.0;
    std::vector<double> class_dice;  // pooled, -1 when class absent everywhere
    std::vector<double> class_iou;
    std::vector<double> pixel_acc;
    ConfusionMatrix confusion;
};

AggregateResult aggregate(const std::vector<EvalResult>& results);

// CSV: one row per class plus a summary row
// (columns: class, dice, iou, pixel_acc, support).
void write_metrics_csv(std::ostream& os, const AggregateResult& agg);

}  // namespace raunet
