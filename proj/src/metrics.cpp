#include "raunet/metrics.hpp"

#include <ostream>

#include "raunet/tensor.hpp"

namespace raunet {

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const {
    std::uint64_t s = 0;
    for (std::size_t j = 0; j < k; ++j) s += at(truth, j);
    return s;
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t s = 0;
    for (std::uint64_t c : counts) s += c;
    return s;
}

void ConfusionMatrix::add(const ConfusionMatrix& other) {
    if (k != other.k) throw ShapeError("ConfusionMatrix::add: class counts differ");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

namespace {

// Per-class dice/iou from set counts; -1 marks excluded classes.
void scores_from_confusion(const ConfusionMatrix& cm, std::vector<double>& dice,
                           std::vector<double>& iou, std::vector<double>& pixel_acc) {
    const std::size_t k = cm.k;
    std::vector<std::uint64_t> col(k, 0);
    for (std::size_t t = 0; t < k; ++t) {
        for (std::size_t p = 0; p < k; ++p) col[p] += cm.at(t, p);
    }
    dice.assign(k, -1.0);
    iou.assign(k, -1.0);
    pixel_acc.assign(k, 0.0);
    for (std::size_t c = 0; c < k; ++c) {
        const std::uint64_t tp = cm.at(c, c);
        const std::uint64_t g = cm.row_sum(c);
        const std::uint64_t p = col[c];
        if (g == 0 && p == 0) continue;  // absent everywhere: excluded
        dice[c] = 2.0 * static_cast<double>(tp) / static_cast<double>(p + g);
        iou[c] = static_cast<double>(tp) / static_cast<double>(p + g - tp);
        if (g > 0) pixel_acc[c] = static_cast<double>(tp) / static_cast<double>(g);
    }
}

// Mean over foreground classes that are present; 1.0 when none are.
void foreground_means(const std::vector<double>& dice, const std::vector<double>& iou,
                      double& mean_dice, double& mean_iou) {
    double sd = 0.0, si = 0.0;
    std::size_t n = 0;
    for (std::size_t c = 1; c < dice.size(); ++c) {
        if (dice[c] < 0.0) continue;
        sd += dice[c];
        si += iou[c];
        ++n;
    }
    mean_dice = n ? sd / static_cast<double>(n) : 1.0;
    mean_iou = n ? si / static_cast<double>(n) : 1.0;
}

}  // namespace

EvalResult evaluate(const Mask& pred, const Mask& truth, std::size_t k) {
    if (pred.height != truth.height || pred.width != truth.width) {
        throw ShapeError("evaluate: mask sizes differ");
    }
    EvalResult r;
    r.k = k;
    r.confusion = ConfusionMatrix(k);
    for (std::size_t i = 0; i < truth.ids.size(); ++i) {
        const std::uint8_t t = truth.ids[i], p = pred.ids[i];
        if (t >= k || p >= k) {
            throw ShapeError("evaluate: class id out of range");
        }
        ++r.confusion.at(t, p);
    }
    scores_from_confusion(r.confusion, r.dice, r.iou, r.pixel_acc);
    foreground_means(r.dice, r.iou, r.mean_dice, r.mean_iou);
    return r;
}

AggregateResult aggregate(const std::vector<EvalResult>& results) {
    if (results.empty()) throw ShapeError("aggregate: empty result list");
    AggregateResult agg;
    agg.images = results.size();
    agg.confusion = ConfusionMatrix(results[0].k);
    double sd = 0.0, si = 0.0;
    for (const EvalResult& r : results) {
        sd += r.mean_dice;
        si += r.mean_iou;
        agg.confusion.add(r.confusion);
    }
    agg.mean_dice = sd / static_cast<double>(results.size());
    agg.mean_iou = si / static_cast<double>(results.size());
    scores_from_confusion(agg.confusion, agg.class_dice, agg.class_iou, agg.pixel_acc);
    return agg;
}

void write_metrics_csv(std::ostream& os, const AggregateResult& agg) {
    os << "class,dice,iou,pixel_acc,support\n";
    const std::size_t k = agg.confusion.k;
    for (std::size_t c = 0; c < k; ++c) {
        os << c << ',';
        if (agg.class_dice[c] >= 0.0) os << agg.class_dice[c];
        os << ',';
        if (agg.class_iou[c] >= 0.0) os << agg.class_iou[c];
        os << ',' << agg.pixel_acc[c] << ',' << agg.confusion.row_sum(c) << '\n';
    }
    std::uint64_t diag = 0;
    for (std::size_t c = 0; c < k; ++c) diag += agg.confusion.at(c, c);
    const std::uint64_t total = agg.confusion.total();
    os << "mean," << agg.mean_dice << ',' << agg.mean_iou << ','
       << (total ? static_cast<double>(diag) / static_cast<double>(total) : 0.0) << ',' << total
       << '\n';
}

}  // namespace raunet
