#include "raunet/trainer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "raunet/netpbm.hpp"

namespace raunet {

namespace fs = std::filesystem;

ScheduleUnit schedule_unit_from_string(const std::string& s) {
    if (s == "epochs") return ScheduleUnit::epochs;
    if (s == "steps") return ScheduleUnit::steps;
    throw ShapeError("unknown schedule unit '" + s + "' (expected epochs|steps)");
}

const char* to_string(ScheduleUnit unit) {
    return unit == ScheduleUnit::epochs ? "epochs" : "steps";
}

void TrainConfig::validate() const {
    if (!(lr0 > 0.0)) throw ShapeError("TrainConfig: lr0 must be positive");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ShapeError("TrainConfig: lr_decay in (0,1]");
    if (lr_decay_every < 1) throw ShapeError("TrainConfig: lr_decay_every must be >= 1");
    if (batch_size < 2) throw ShapeError("TrainConfig: batch_size must be >= 2 (batchnorm)");
    if (eval_every < 1) throw ShapeError("TrainConfig: eval_every must be >= 1");
}

double scheduled_lr(const TrainConfig& cfg, std::size_t elapsed_units) {
    return cfg.lr0 * std::pow(cfg.lr_decay, static_cast<double>(elapsed_units / cfg.lr_decay_every));
}

Dataset load_dataset(const fs::path& manifest_path) {
    const fs::path base = manifest_path.parent_path();
    Dataset data;
    for (const ManifestEntry& e : read_manifest(manifest_path)) {
        TrainSample s;
        s.image = read_ppm(base / e.image_path);
        s.mask = read_pgm(base / e.mask_path);
        if (s.mask.height != s.image.height || s.mask.width != s.image.width) {
            throw IoError("load_dataset: image/mask size mismatch for " + e.image_path);
        }
        (e.split == "test" ? data.test : data.train).push_back(std::move(s));
    }
    return data;
}

// ---- batching -----------------------------------------------------------------

template <class T>
TensorPtr<T> batch_images(const std::vector<TrainSample>& samples,
                          const std::vector<std::size_t>& order, std::size_t lo, std::size_t hi) {
    const std::size_t B = hi - lo;
    const std::size_t H = samples[order[lo]].image.height;
    const std::size_t W = samples[order[lo]].image.width;
    auto out = Tensor<T>::create({B, 3, H, W});
    const T inv = T(1) / T(255);
    for (std::size_t b = 0; b < B; ++b) {
        const ImageU8& img = samples[order[lo + b]].image;
        if (img.height != H || img.width != W) {
            throw ShapeError("batch_images: mixed image sizes in one batch");
        }
        for (std::size_t c = 0; c < 3; ++c) {
            T* dst = out->data.data() + out->offset4(b, c, 0, 0);
            for (std::size_t i = 0; i < H * W; ++i) {
                dst[i] = static_cast<T>(img.rgb[3 * i + c]) * inv;
            }
        }
    }
    return out;
}

MaskBatch batch_masks(const std::vector<TrainSample>& samples,
                      const std::vector<std::size_t>& order, std::size_t lo, std::size_t hi) {
    std::vector<const Mask*> ptrs;
    for (std::size_t i = lo; i < hi; ++i) ptrs.push_back(&samples[order[i]].mask);
    return MaskBatch::stack(ptrs);
}

// ---- Adam -----------------------------------------------------------------------

template <class T>
void AdamState<T>::init(const std::vector<TensorPtr<T>>& params) {
    t = 0;
    m.clear();
    v.clear();
    for (const auto& p : params) {
        m.emplace_back(p->numel(), T(0));
        v.emplace_back(p->numel(), T(0));
    }
}

template <class T>
void AdamState<T>::step(const std::vector<TensorPtr<T>>& params, double lr,
                        const TrainConfig& cfg) {
    if (m.size() != params.size()) throw ShapeError("AdamState: not initialized for these params");
    ++t;
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    const T eps = static_cast<T>(cfg.adam_eps);
    const T bc1 = T(1) - static_cast<T>(std::pow(cfg.beta1, static_cast<double>(t)));
    const T bc2 = T(1) - static_cast<T>(std::pow(cfg.beta2, static_cast<double>(t)));
    const T step_size = static_cast<T>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& p = *params[i];
        if (m[i].size() != p.numel()) throw ShapeError("AdamState: parameter size changed");
        const bool has_grad = !p.grad.empty();
        for (std::size_t j = 0; j < p.numel(); ++j) {
            const T g = has_grad ? p.grad[j] : T(0);
            m[i][j] = b1 * m[i][j] + (T(1) - b1) * g;
            v[i][j] = b2 * v[i][j] + (T(1) - b2) * g * g;
            const T mhat = m[i][j] / bc1;
            const T vhat = v[i][j] / bc2;
            p.data[j] -= step_size * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

// ---- evaluation -------------------------------------------------------------------

template <class T>
EvalSummary evaluate_split(RaunetModel<T>& model, const std::vector<TrainSample>& samples,
                           std::size_t batch_size) {
    if (samples.empty()) throw ShapeError("evaluate_split: no samples");
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<EvalResult> results;
    for (std::size_t lo = 0; lo < samples.size(); lo += batch_size) {
        const std::size_t hi = std::min(samples.size(), lo + batch_size);
        auto images = batch_images<T>(samples, order, lo, hi);
        auto logits = model.forward(nullptr, images, Mode::eval);
        auto masks = argmax_masks(logits);
        for (std::size_t b = 0; b < masks.size(); ++b) {
            results.push_back(evaluate(masks[b], samples[order[lo + b]].mask, model.config.num_classes));
        }
    }
    EvalSummary summary;
    summary.report = aggregate(results);
    summary.mean_dice = summary.report.mean_dice;
    summary.mean_iou = summary.report.mean_iou;
    return summary;
}

// ---- training loop ------------------------------------------------------------------

template <class T>
TrainState<T> train(RaunetModel<T>& model, const Dataset& data, const TrainConfig& cfg,
                    const LossConfig& loss_cfg, std::optional<TrainState<T>> resume) {
    cfg.validate();
    loss_cfg.validate();
    if (data.train.empty()) throw ShapeError("train: empty training split");
    const std::size_t batch = std::min(cfg.batch_size, data.train.size());
    if (batch < 2) throw ShapeError("train: need at least 2 training samples (batchnorm)");

    std::error_code ec;
    fs::create_directories(cfg.checkpoint_dir, ec);

    auto params = model.parameters();
    TrainState<T> state;
    const bool resuming = resume.has_value();
    if (resuming) {
        state = std::move(*resume);
    } else {
        state.seed = cfg.seed;
        state.adam.init(params);
    }

    const fs::path csv_path = cfg.checkpoint_dir / "train_log.csv";
    std::ofstream csv(csv_path, resuming ? std::ios::app : std::ios::trunc);
    if (!csv) throw IoError("cannot write " + csv_path.string());
    if (!resuming) csv << "epoch,step,lr,train_loss,mean_dice,mean_iou\n";
    csv << std::setprecision(12);

    // With no test split (tiny overfit jobs) evaluation falls back to train.
    const std::vector<TrainSample>& eval_set = data.test.empty() ? data.train : data.test;

    std::vector<std::size_t> order(data.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(Rng::mix(Rng::mix(state.seed, Rng::hash_str("shuffle")), epoch));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t lo = 0; lo + batch <= order.size(); lo += batch) {
            const std::size_t elapsed = cfg.lr_decay_unit == ScheduleUnit::epochs ? epoch : state.step;
            state.lr = scheduled_lr(cfg, elapsed);

            auto images = batch_images<T>(data.train, order, lo, lo + batch);
            MaskBatch targets = batch_masks(data.train, order, lo, lo + batch);

            Tape<T> tape;
            auto logits = model.forward(&tape, images, Mode::train);
            auto loss = segmentation_loss(&tape, cfg.loss, logits, targets, loss_cfg);
            const double loss_value = static_cast<double>(loss->data[0]);
            if (!std::isfinite(loss_value)) {
                std::ofstream dump(cfg.checkpoint_dir / "diverged.txt");
                dump << "epoch=" << epoch << " step=" << state.step << " lr=" << state.lr
                     << " loss=" << loss_value << "\n";
                throw NumericError("training diverged: non-finite loss at step " +
                                   std::to_string(state.step));
            }

            model.zero_grad();
            tape.backward(loss);
            state.adam.step(params, state.lr, cfg);
            ++state.step;
            loss_sum += loss_value;
            ++batches;
        }
        state.epoch = epoch + 1;

        if (state.epoch % cfg.eval_every == 0 || state.epoch == cfg.epochs) {
            EvalSummary ev = evaluate_split(model, eval_set, cfg.batch_size);
            csv << epoch << ',' << state.step << ',' << state.lr << ','
                << (batches ? loss_sum / static_cast<double>(batches) : 0.0) << ','
                << ev.mean_dice << ',' << ev.mean_iou << '\n';
            csv.flush();
            if (ev.mean_dice > state.best_dice) {
                state.best_dice = ev.mean_dice;
                save_checkpoint(model, state, cfg.checkpoint_dir / "best.ckpt");
            }
        }
    }

    save_checkpoint(model, state, cfg.checkpoint_dir / "last.ckpt");
    return state;
}

// ---- checkpoints ---------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'R', 'A', 'U', 'N'};
constexpr std::uint16_t kVersion = 1;

template <class T>
constexpr std::uint8_t dtype_tag() {
    return std::is_same_v<T, float> ? 0 : 1;
}

void put_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <class U>
void put_scalar(std::ostream& os, U v) {
    put_bytes(os, &v, sizeof v);
}

template <class T>
void put_record(std::ostream& os, const std::string& name, const Shape& shape, const T* data) {
    put_scalar<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    put_bytes(os, name.data(), name.size());
    put_scalar<std::uint8_t>(os, static_cast<std::uint8_t>(shape.size()));
    for (std::size_t d : shape) put_scalar<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    put_scalar<std::uint8_t>(os, dtype_tag<T>());
    put_bytes(os, data, shape_numel(shape) * sizeof(T));
}

void put_scalar_record(std::ostream& os, const std::string& name, double v) {
    put_record<double>(os, name, {1}, &v);
}

struct RawRecord {
    Shape shape;
    std::uint8_t dtype = 0;
    std::vector<std::uint8_t> bytes;

    double as_scalar(const std::string& name) const {
        if (dtype != 1 || bytes.size() != sizeof(double)) {
            throw IoError("checkpoint: record '" + name + "' is not a scalar");
        }
        double v;
        std::memcpy(&v, bytes.data(), sizeof v);
        return v;
    }
};

void get_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) {
        throw IoError(std::string("checkpoint truncated while reading ") + what);
    }
}

template <class U>
U get_scalar(std::istream& is, const char* what) {
    U v;
    get_bytes(is, &v, sizeof v, what);
    return v;
}

std::map<std::string, RawRecord> read_section(std::istream& is) {
    std::map<std::string, RawRecord> records;
    const std::uint32_t count = get_scalar<std::uint32_t>(is, "tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t name_len = get_scalar<std::uint16_t>(is, "name length");
        std::string name(name_len, '\0');
        get_bytes(is, name.data(), name_len, "name");
        RawRecord rec;
        const std::uint8_t rank = get_scalar<std::uint8_t>(is, "rank");
        for (std::uint8_t r = 0; r < rank; ++r) {
            rec.shape.push_back(get_scalar<std::uint32_t>(is, "dim"));
        }
        rec.dtype = get_scalar<std::uint8_t>(is, "dtype");
        if (rec.dtype > 1) throw IoError("checkpoint: unknown dtype tag");
        const std::size_t elem = rec.dtype == 0 ? 4 : 8;
        rec.bytes.resize(shape_numel(rec.shape) * elem);
        get_bytes(is, rec.bytes.data(), rec.bytes.size(), name.c_str());
        records.emplace(std::move(name), std::move(rec));
    }
    return records;
}

template <class T>
void fill_from_record(const std::map<std::string, RawRecord>& records, const std::string& name,
                      Tensor<T>& dst) {
    auto it = records.find(name);
    if (it == records.end()) throw IoError("checkpoint: missing tensor '" + name + "'");
    const RawRecord& rec = it->second;
    if (rec.dtype != dtype_tag<T>()) {
        throw IoError("checkpoint: dtype mismatch for '" + name + "'");
    }
    if (rec.shape != dst.shape) {
        throw ShapeError("checkpoint: shape mismatch for '" + name + "': file " +
                         shape_str(rec.shape) + " vs model " + shape_str(dst.shape));
    }
    std::memcpy(dst.data.data(), rec.bytes.data(), rec.bytes.size());
}

}  // namespace

template <class T>
void save_checkpoint(RaunetModel<T>& model, const TrainState<T>& state, const fs::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    put_bytes(os, kMagic, 4);
    put_scalar<std::uint16_t>(os, kVersion);

    auto named = model.named_tensors();
    put_scalar<std::uint32_t>(os, static_cast<std::uint32_t>(named.size()));
    for (auto& nt : named) put_record(os, nt.name, nt.tensor->shape, nt.tensor->data.data());

    // optimizer + trainer state in the same framing
    std::vector<std::string> param_names;
    for (auto& nt : named) {
        if (nt.trainable) param_names.push_back(nt.name);
    }
    const bool has_adam = state.adam.m.size() == param_names.size();
    const std::uint32_t state_count =
        static_cast<std::uint32_t>((has_adam ? 2 * param_names.size() : 0) + 7 + 6);
    put_scalar<std::uint32_t>(os, state_count);
    if (has_adam) {
        std::size_t i = 0;
        for (auto& nt : named) {
            if (!nt.trainable) continue;
            put_record(os, "adam.m." + nt.name, nt.tensor->shape, state.adam.m[i].data());
            put_record(os, "adam.v." + nt.name, nt.tensor->shape, state.adam.v[i].data());
            ++i;
        }
    }
    put_scalar_record(os, "state.step", static_cast<double>(state.step));
    put_scalar_record(os, "state.epoch", static_cast<double>(state.epoch));
    put_scalar_record(os, "state.lr", state.lr);
    put_scalar_record(os, "state.best_dice", state.best_dice);
    put_scalar_record(os, "state.adam_t", static_cast<double>(state.adam.t));
    // u64 split into exact-in-double halves
    put_scalar_record(os, "state.seed_lo", static_cast<double>(state.seed & 0xFFFFFFFFULL));
    put_scalar_record(os, "state.seed_hi", static_cast<double>(state.seed >> 32));

    const ModelConfig& mc = model.config;
    put_scalar_record(os, "config.num_classes", static_cast<double>(mc.num_classes));
    put_scalar_record(os, "config.width_mult", mc.width_mult);
    {
        double blocks[4];
        for (int i = 0; i < 4; ++i) blocks[i] = static_cast<double>(mc.block_counts[i]);
        put_record<double>(os, "config.blocks", {4}, blocks);
    }
    put_scalar_record(os, "config.use_aam", mc.use_aam ? 1.0 : 0.0);
    put_scalar_record(os, "config.input_h", static_cast<double>(mc.input_h));
    put_scalar_record(os, "config.input_w", static_cast<double>(mc.input_w));

    if (!os) throw IoError("write failed: " + path.string());
}

template <class T>
Checkpoint<T> load_checkpoint(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read " + path.string());
    char magic[4];
    get_bytes(is, magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0) throw IoError(path.string() + ": bad magic");
    const std::uint16_t version = get_scalar<std::uint16_t>(is, "version");
    if (version != kVersion) {
        throw IoError(path.string() + ": unsupported version " + std::to_string(version));
    }

    // Stage everything first so a truncated file never yields a partial model.
    const auto model_records = read_section(is);
    const auto state_records = read_section(is);

    auto scalar = [&](const std::string& name) {
        auto it = state_records.find(name);
        if (it == state_records.end()) throw IoError("checkpoint: missing record '" + name + "'");
        return it->second.as_scalar(name);
    };

    ModelConfig cfg;
    cfg.num_classes = static_cast<std::size_t>(scalar("config.num_classes"));
    cfg.width_mult = scalar("config.width_mult");
    {
        auto it = state_records.find("config.blocks");
        if (it == state_records.end() || it->second.dtype != 1 ||
            shape_numel(it->second.shape) != 4) {
            throw IoError("checkpoint: missing or malformed config.blocks");
        }
        double blocks[4];
        std::memcpy(blocks, it->second.bytes.data(), sizeof blocks);
        for (int i = 0; i < 4; ++i) cfg.block_counts[i] = static_cast<std::size_t>(blocks[i]);
    }
    cfg.use_aam = scalar("config.use_aam") != 0.0;
    cfg.input_h = static_cast<std::size_t>(scalar("config.input_h"));
    cfg.input_w = static_cast<std::size_t>(scalar("config.input_w"));

    Checkpoint<T> ck{RaunetModel<T>::build(cfg, 0), TrainState<T>{}};
    for (auto& nt : ck.model.named_tensors()) {
        fill_from_record(model_records, nt.name, *nt.tensor);
    }

    ck.state.step = static_cast<std::size_t>(scalar("state.step"));
    ck.state.epoch = static_cast<std::size_t>(scalar("state.epoch"));
    ck.state.lr = scalar("state.lr");
    ck.state.best_dice = scalar("state.best_dice");
    ck.state.seed = static_cast<std::uint64_t>(scalar("state.seed_lo")) |
                    (static_cast<std::uint64_t>(scalar("state.seed_hi")) << 32);
    ck.state.adam.t = static_cast<std::size_t>(scalar("state.adam_t"));

    auto params = ck.model.parameters();
    auto named = ck.model.named_tensors();
    bool any_adam = false;
    for (const auto& kv : state_records) {
        if (kv.first.rfind("adam.m.", 0) == 0) {
            any_adam = true;
            break;
        }
    }
    if (any_adam) {
        ck.state.adam.m.clear();
        ck.state.adam.v.clear();
        for (auto& nt : named) {
            if (!nt.trainable) continue;
            for (const char* prefix : {"adam.m.", "adam.v."}) {
                auto it = state_records.find(prefix + nt.name);
                if (it == state_records.end()) {
                    throw IoError("checkpoint: missing record '" + std::string(prefix) + nt.name + "'");
                }
                const RawRecord& rec = it->second;
                if (rec.dtype != dtype_tag<T>() || rec.shape != nt.tensor->shape) {
                    throw IoError("checkpoint: bad optimizer record for '" + nt.name + "'");
                }
                std::vector<T> buf(shape_numel(rec.shape));
                std::memcpy(buf.data(), rec.bytes.data(), rec.bytes.size());
                (prefix[5] == 'm' ? ck.state.adam.m : ck.state.adam.v).push_back(std::move(buf));
            }
        }
    }
    return ck;
}

// ---- instantiations --------------------------------------------------------------

#define RAUNET_INSTANTIATE(T)                                                                  \
    template TensorPtr<T> batch_images<T>(const std::vector<TrainSample>&,                    \
                                          const std::vector<std::size_t>&, std::size_t,       \
                                          std::size_t);                                        \
    template struct AdamState<T>;                                                              \
    template struct TrainState<T>;                                                             \
    template EvalSummary evaluate_split<T>(RaunetModel<T>&, const std::vector<TrainSample>&,  \
                                           std::size_t);                                       \
    template TrainState<T> train<T>(RaunetModel<T>&, const Dataset&, const TrainConfig&,      \
                                    const LossConfig&, std::optional<TrainState<T>>);          \
    template void save_checkpoint<T>(RaunetModel<T>&, const TrainState<T>&,                   \
                                     const std::filesystem::path&);                            \
    template Checkpoint<T> load_checkpoint<T>(const std::filesystem::path&);

RAUNET_INSTANTIATE(float)
RAUNET_INSTANTIATE(double)
#undef RAUNET_INSTANTIATE

}  // namespace raunet
