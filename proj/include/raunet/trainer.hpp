#pragma once

#include <filesystem>
#include <optional>

#include "raunet/loss.hpp"
#include "raunet/metrics.hpp"
#include "raunet/model.hpp"
#include "raunet/synth_data.hpp"

namespace raunet {

enum class ScheduleUnit { epochs, steps };

ScheduleUnit schedule_unit_from_string(const std::string& s);
const char* to_string(ScheduleUnit unit);

struct TrainConfig {
    std::size_t batch_size = 8;
    double lr0 = 4e-5;
    double lr_decay = 0.8;
    std::size_t lr_decay_every = 30;
    ScheduleUnit lr_decay_unit = ScheduleUnit::epochs;
    std::size_t epochs = 60;
    std::uint64_t seed = 1;
    std::size_t eval_every = 5;  // epochs between evaluations
    LossKind loss = LossKind::celdice;
    std::filesystem::path checkpoint_dir = ".";
    // Adam
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
};

// lr0 * decay^floor(elapsed / every)
double scheduled_lr(const TrainConfig& cfg, std::size_t elapsed_units);

struct TrainSample {
    ImageU8 image;
    Mask mask;
};

struct Dataset {
    std::vector<TrainSample> train;
    std::vector<TrainSample> test;
};

// Loads every manifest entry's image/mask pair (paths relative to the
// manifest file).
Dataset load_dataset(const std::filesystem::path& manifest_path);

template <class T>
struct AdamState {
    std::size_t t = 0;                 // completed steps (bias correction)
    std::vector<std::vector<T>> m, v;  // parallel to the parameter list

    void init(const std::vector<TensorPtr<T>>& params);
    void step(const std::vector<TensorPtr<T>>& params, double lr, const TrainConfig& cfg);
};

template <class T>
struct TrainState {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double lr = 0.0;
    double best_dice = -1.0;
    std::uint64_t seed = 0;  // shuffle streams derive from (seed, epoch)
    AdamState<T> adam;
};

struct EvalSummary {
    double mean_dice = 0.0;
    double mean_iou = 0.0;
    AggregateResult report;
};

// Eval-mode forward over a sample list; per-image metrics aggregated.
template <class T>
EvalSummary evaluate_split(RaunetModel<T>& model, const std::vector<TrainSample>& samples,
                           std::size_t batch_size);

// [B,3,H,W] tensor in [0,1] from 8-bit samples (index range [lo,hi) of order)
template <class T>
TensorPtr<T> batch_images(const std::vector<TrainSample>& samples,
                          const std::vector<std::size_t>& order, std::size_t lo, std::size_t hi);
MaskBatch batch_masks(const std::vector<TrainSample>& samples,
                      const std::vector<std::size_t>& order, std::size_t lo, std::size_t hi);

// Runs shuffled mini-batch epochs of forward / loss / backward / Adam with
// the step-decay schedule; evaluates every eval_every epochs (on the test
// split, or the train split when no test data exists), appends one CSV row
// per evaluation to <checkpoint_dir>/train_log.csv, and writes
// best-by-mean-dice and last checkpoints. A non-finite loss aborts with a
// state dump. Pass a loaded state to resume; epochs already run are skipped.
template <class T>
TrainState<T> train(RaunetModel<T>& model, const Dataset& data, const TrainConfig& cfg,
                    const LossConfig& loss_cfg,
                    std::optional<TrainState<T>> resume = std::nullopt);

// Checkpoint: "RAUN" magic, u16 version, u32 tensor count, then per tensor
// u16 name length + name, u8 rank, u32 dims, u8 dtype (0=F32,1=F64) and the
// raw little-endian payload; optimizer/trainer state follows in the same
// framing.
template <class T>
void save_checkpoint(RaunetModel<T>& model, const TrainState<T>& state,
                     const std::filesystem::path& path);

template <class T>
struct Checkpoint {
    RaunetModel<T> model;
    TrainState<T> state;
};

template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace raunet
