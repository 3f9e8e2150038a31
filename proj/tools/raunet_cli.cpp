// Command-line surface: dataset generation, training, evaluation, mask
// prediction, gradient checking, parameter accounting and the fusion/loss
// ablation grid.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <thread>

#include "CLI11.hpp"
#include "raunet/gradcheck.hpp"
#include "raunet/netpbm.hpp"
#include "raunet/run_config.hpp"

namespace fs = std::filesystem;
using namespace raunet;

namespace {

struct CliOptions {
    std::string config_path;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;
    std::optional<double> width_mult;
    std::optional<bool> use_aam;
    std::optional<std::string> loss;
    std::optional<double> alpha;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> batch;
    std::optional<double> lr;
};

RunConfig resolve_config(const CliOptions& opts) {
    RunConfig cfg;
    if (!opts.config_path.empty()) cfg = RunConfig::from_file(opts.config_path);
    if (opts.width_mult) cfg.model.width_mult = *opts.width_mult;
    if (opts.use_aam) cfg.model.use_aam = *opts.use_aam;
    if (opts.loss) cfg.train.loss = loss_kind_from_string(*opts.loss);
    if (opts.alpha) cfg.loss.alpha = *opts.alpha;
    if (opts.epochs) cfg.train.epochs = *opts.epochs;
    if (opts.batch) cfg.train.batch_size = *opts.batch;
    if (opts.lr) cfg.train.lr0 = *opts.lr;
    if (opts.seed) {
        cfg.train.seed = *opts.seed;
        cfg.gen.seed = *opts.seed;
    }
    return cfg;
}

// every command leaves its fully-resolved config next to its outputs
void emit_resolved(const RunConfig& cfg, const fs::path& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    cfg.write(out_dir / "resolved.cfg");
}

void add_common(CLI::App* cmd, CliOptions& opts) {
    cmd->add_option("--config", opts.config_path, "key=value config file");
    cmd->add_option("--seed", opts.seed, "seed override (training and generation)");
    cmd->add_option("--out", opts.out_dir, "output directory");
    cmd->add_option("--width-mult", opts.width_mult, "model width multiplier override");
    cmd->add_option("--use-aam", opts.use_aam, "attention fusion on/off override");
    cmd->add_option("--loss", opts.loss, "loss override: ce|dice|celdice");
    cmd->add_option("--alpha", opts.alpha, "CEL-Dice alpha override");
    cmd->add_option("--epochs", opts.epochs, "epoch count override");
    cmd->add_option("--batch", opts.batch, "batch size override");
    cmd->add_option("--lr", opts.lr, "initial learning rate override");
}

const std::array<std::array<std::uint8_t, 3>, 10> kPalette = {{{230, 25, 75},
                                                               {60, 180, 75},
                                                               {255, 225, 25},
                                                               {0, 130, 200},
                                                               {245, 130, 48},
                                                               {145, 30, 180},
                                                               {70, 240, 240},
                                                               {240, 50, 230},
                                                               {210, 245, 60},
                                                               {250, 190, 190}}};

ImageU8 render_overlay(const ImageU8& image, const Mask& mask) {
    ImageU8 out = image;
    for (std::size_t i = 0; i < mask.ids.size(); ++i) {
        const std::uint8_t id = mask.ids[i];
        if (id == 0) continue;
        const auto& color = kPalette[(id - 1) % kPalette.size()];
        for (int c = 0; c < 3; ++c) {
            out.rgb[3 * i + c] = static_cast<std::uint8_t>((out.rgb[3 * i + c] + color[c]) / 2);
        }
    }
    return out;
}

int cmd_gen_data(const CliOptions& opts) {
    RunConfig cfg = resolve_config(opts);
    emit_resolved(cfg, opts.out_dir);
    const fs::path data_dir = fs::path(opts.out_dir) / "data";
    auto entries = generate(cfg.gen, data_dir);
    std::size_t train = 0, test = 0;
    for (const auto& e : entries) (e.split == "train" ? train : test) += 1;
    std::cout << "wrote " << entries.size() << " samples (" << train << " train, " << test
              << " test) under " << data_dir.string() << "\n";
    return 0;
}

int cmd_train(const CliOptions& opts, const std::string& manifest, const std::string& resume) {
    RunConfig cfg = resolve_config(opts);
    cfg.train.checkpoint_dir = fs::path(opts.out_dir);
    emit_resolved(cfg, opts.out_dir);

    Dataset data = load_dataset(manifest);
    std::cout << "dataset: " << data.train.size() << " train / " << data.test.size() << " test\n";

    if (!resume.empty()) {
        auto ck = load_checkpoint<float>(resume);
        TrainState<float> state = train(ck.model, data, cfg.train, cfg.loss,
                                        std::optional<TrainState<float>>(std::move(ck.state)));
        std::cout << "resumed to epoch " << state.epoch << ", best mean dice " << state.best_dice
                  << "\n";
        return 0;
    }

    auto model = RaunetModel<float>::build(cfg.model, cfg.train.seed);
    TrainState<float> state = train(model, data, cfg.train, cfg.loss);
    std::cout << "finished epoch " << state.epoch << ", best mean dice " << state.best_dice << "\n";
    return 0;
}

int cmd_eval(const CliOptions& opts, const std::string& checkpoint, const std::string& manifest,
             const std::string& split) {
    RunConfig cfg = resolve_config(opts);
    emit_resolved(cfg, opts.out_dir);
    auto ck = load_checkpoint<float>(checkpoint);

    Dataset data = load_dataset(manifest);
    const auto& samples = split == "train" ? data.train : data.test;
    if (samples.empty()) throw IoError("eval: split '" + split + "' is empty");

    EvalSummary summary = evaluate_split(ck.model, samples, cfg.train.batch_size);
    const fs::path csv_path = fs::path(opts.out_dir) / "metrics.csv";
    std::ofstream csv(csv_path);
    write_metrics_csv(csv, summary.report);
    std::cout << "mean dice " << summary.mean_dice << ", mean iou " << summary.mean_iou
              << " over " << samples.size() << " images (report: " << csv_path.string() << ")\n";
    return 0;
}

int cmd_predict(const CliOptions& opts, const std::string& checkpoint,
                const std::vector<std::string>& images, bool overlay) {
    RunConfig cfg = resolve_config(opts);
    emit_resolved(cfg, opts.out_dir);
    auto ck = load_checkpoint<float>(checkpoint);

    for (const std::string& path : images) {
        ImageU8 img = read_ppm(path);
        std::vector<TrainSample> one(1);
        one[0].image = img;
        auto batch = batch_images<float>(one, {0}, 0, 1);
        auto logits = ck.model.forward(nullptr, batch, Mode::eval);
        Mask mask = argmax_masks(logits)[0];

        const std::string stem = fs::path(path).stem().string();
        const fs::path mask_path = fs::path(opts.out_dir) / (stem + "_mask.pgm");
        write_pgm(mask_path, mask);
        std::cout << path << " -> " << mask_path.string() << "\n";
        if (overlay) {
            write_ppm(fs::path(opts.out_dir) / (stem + "_overlay.ppm"), render_overlay(img, mask));
        }
    }
    return 0;
}

int cmd_gradcheck(const CliOptions& opts, int cases) {
    const std::uint64_t seed = opts.seed.value_or(1234);
    auto results = run_gradcheck(seed, cases);
    bool all_ok = true;
    std::cout << std::left << std::setw(20) << "op" << std::setw(14) << "max rel err"
              << std::setw(12) << "tolerance" << "status\n";
    for (const auto& r : results) {
        all_ok = all_ok && r.passed();
        std::cout << std::left << std::setw(20) << r.op << std::setw(14) << std::scientific
                  << std::setprecision(2) << r.max_rel_err << std::setw(12) << r.tolerance
                  << (r.passed() ? "ok" : "FAIL") << "\n";
    }
    std::cout.unsetf(std::ios::scientific);
    if (!all_ok) throw NumericError("gradient check failed");
    return 0;
}

int cmd_params(const CliOptions& opts) {
    RunConfig cfg = resolve_config(opts);
    auto model = RaunetModel<float>::build(cfg.model, cfg.train.seed);
    const ParamCounts pc = model.count_params();
    auto line = [](const char* name, std::size_t count, std::size_t total) {
        std::cout << std::left << std::setw(10) << name << std::right << std::setw(12) << count
                  << "  (" << std::fixed << std::setprecision(2)
                  << 100.0 * static_cast<double>(count) / static_cast<double>(total) << "%)\n";
    };
    line("encoder", pc.encoder, pc.total);
    line("decoder", pc.decoder, pc.total);
    line("aam", pc.aam, pc.total);
    line("head", pc.head, pc.total);
    std::cout << std::left << std::setw(10) << "total" << std::right << std::setw(12) << pc.total
              << "  (" << std::setprecision(2)
              << static_cast<double>(pc.total) / 1e6 << "M)\n";
    return 0;
}

int cmd_ablate(const CliOptions& opts, const std::string& manifest, std::size_t jobs) {
    RunConfig cfg = resolve_config(opts);
    emit_resolved(cfg, opts.out_dir);
    Dataset data = load_dataset(manifest);

    struct Arm {
        bool use_aam;
        LossKind loss;
        double mean_dice = 0.0, mean_iou = 0.0, best_dice = 0.0;
        std::size_t params = 0;
    };
    std::vector<Arm> arms;
    for (bool use_aam : {false, true}) {
        for (LossKind kind : {LossKind::ce, LossKind::dice, LossKind::celdice}) {
            arms.push_back({use_aam, kind, 0, 0, 0, 0});
        }
    }

    std::mutex mu;
    std::size_t next = 0;
    auto worker = [&] {
        for (;;) {
            std::size_t idx;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (next >= arms.size()) return;
                idx = next++;
            }
            Arm& arm = arms[idx];
            RunConfig local = cfg;
            local.model.use_aam = arm.use_aam;
            local.train.loss = arm.loss;
            local.train.checkpoint_dir = fs::path(opts.out_dir) /
                                         (std::string(arm.use_aam ? "aam" : "base") + "_" +
                                          to_string(arm.loss));
            auto model = RaunetModel<float>::build(local.model, local.train.seed);
            arm.params = model.count_params().total;
            TrainState<float> state = train(model, data, local.train, local.loss);
            EvalSummary ev = evaluate_split(model, data.test.empty() ? data.train : data.test,
                                            local.train.batch_size);
            arm.mean_dice = ev.mean_dice;
            arm.mean_iou = ev.mean_iou;
            arm.best_dice = state.best_dice;
            {
                std::lock_guard<std::mutex> lock(mu);
                std::cout << (arm.use_aam ? "aam " : "base") << " + " << to_string(arm.loss)
                          << ": mean dice " << ev.mean_dice << ", mean iou " << ev.mean_iou << "\n";
            }
        }
    };
    std::vector<std::thread> pool;
    const std::size_t nthreads = std::max<std::size_t>(
        1, std::min(jobs, static_cast<std::size_t>(std::thread::hardware_concurrency())));
    for (std::size_t i = 0; i < nthreads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    const fs::path csv_path = fs::path(opts.out_dir) / "ablate.csv";
    std::ofstream csv(csv_path);
    csv << "fusion,loss,mean_dice,mean_iou,best_dice,params\n" << std::setprecision(12);
    for (const Arm& arm : arms) {
        csv << (arm.use_aam ? "aam" : "add") << ',' << to_string(arm.loss) << ',' << arm.mean_dice
            << ',' << arm.mean_iou << ',' << arm.best_dice << ',' << arm.params << '\n';
    }
    std::cout << "ablation grid written to " << csv_path.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"RAUNet segmentation engine"};
    app.require_subcommand(1);

    CliOptions opts;
    std::string manifest, checkpoint, resume, split = "test";
    std::vector<std::string> images;
    bool overlay = false;
    int cases = 20;
    std::size_t jobs = 2;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    add_common(gen, opts);

    auto* tr = app.add_subcommand("train", "train a model");
    add_common(tr, opts);
    tr->add_option("--manifest", manifest, "dataset manifest")->required();
    tr->add_option("--resume", resume, "checkpoint to resume from");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(ev, opts);
    ev->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    ev->add_option("--manifest", manifest, "dataset manifest")->required();
    ev->add_option("--split", split, "train|test");

    auto* pr = app.add_subcommand("predict", "write predicted masks for PPM images");
    add_common(pr, opts);
    pr->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    pr->add_option("images", images, "input PPM images")->required();
    pr->add_flag("--overlay", overlay, "also write color overlays");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite (F64)");
    add_common(gc, opts);
    gc->add_option("--cases", cases, "random shapes per op");

    auto* pa = app.add_subcommand("params", "parameter count breakdown");
    add_common(pa, opts);

    auto* ab = app.add_subcommand("ablate", "fusion x loss ablation grid");
    add_common(ab, opts);
    ab->add_option("--manifest", manifest, "dataset manifest")->required();
    ab->add_option("--jobs", jobs, "parallel training jobs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(opts);
        if (tr->parsed()) return cmd_train(opts, manifest, resume);
        if (ev->parsed()) return cmd_eval(opts, checkpoint, manifest, split);
        if (pr->parsed()) return cmd_predict(opts, checkpoint, images, overlay);
        if (gc->parsed()) return cmd_gradcheck(opts, cases);
        if (pa->parsed()) return cmd_params(opts);
        if (ab->parsed()) return cmd_ablate(opts, manifest, jobs);
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const ShapeError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
