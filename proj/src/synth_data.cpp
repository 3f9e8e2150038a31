#include "raunet/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "raunet/netpbm.hpp"
#include "raunet/tensor.hpp"

namespace raunet {

namespace fs = std::filesystem;

void GenSpec::validate() const {
    if (height < 8 || width < 8) throw ShapeError("GenSpec: image size too small");
    if (num_classes < 1 || num_classes > 250) throw ShapeError("GenSpec: num_classes out of range");
    if (images_per_split < 1) throw ShapeError("GenSpec: images_per_split must be >= 1");
    if (max_instruments < 1) throw ShapeError("GenSpec: max_instruments must be >= 1");
    if (!(foreground_ratio > 0.0 && foreground_ratio < 0.2)) {
        throw ShapeError("GenSpec: foreground_ratio must be in (0, 0.2)");
    }
    if (specular.count_min > specular.count_max || specular.size_min > specular.size_max ||
        !(specular.intensity > 0.0 && specular.intensity <= 1.0)) {
        throw ShapeError("GenSpec: invalid specular ranges");
    }
    if (burst_len < 1) throw ShapeError("GenSpec: burst_len must be >= 1");
}

namespace {

std::uint8_t clamp_u8(double v) {
    return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0) + 0.5);
}

// Background and lighting parameters shared within one burst ("video").
struct BurstParams {
    double base_r, base_g, base_b;
    double cx, cy;          // vignette center, relative
    double vignette;        // darkening strength toward the rim
    double noise_amp;
    std::uint64_t noise_seed;
};

BurstParams burst_params(std::uint64_t seed, const std::string& split, std::size_t burst) {
    Rng rng(Rng::mix(seed, Rng::mix(Rng::hash_str(split + "/burst"), burst)));
    BurstParams p;
    p.base_r = rng.uniform(140.0, 205.0);
    p.base_g = rng.uniform(60.0, 115.0);
    p.base_b = rng.uniform(45.0, 95.0);
    p.cx = rng.uniform(0.35, 0.65);
    p.cy = rng.uniform(0.35, 0.65);
    p.vignette = rng.uniform(0.35, 0.6);
    p.noise_amp = rng.uniform(6.0, 14.0);
    p.noise_seed = rng.next_u64();
    return p;
}

// Low-frequency noise: coarse lattice of offsets, bilinear upsampled.
struct CoarseNoise {
    static constexpr std::size_t kGrid = 6;
    double cell[kGrid][kGrid];

    explicit CoarseNoise(std::uint64_t seed) {
        Rng rng(seed);
        for (auto& row : cell) {
            for (double& v : row) v = rng.uniform(-1.0, 1.0);
        }
    }

    double at(double fy, double fx) const {
        const double gy = fy * (kGrid - 1), gx = fx * (kGrid - 1);
        const std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(gy), kGrid - 2);
        const std::size_t x0 = std::min<std::size_t>(static_cast<std::size_t>(gx), kGrid - 2);
        const double ty = gy - static_cast<double>(y0), tx = gx - static_cast<double>(x0);
        const double a = cell[y0][x0] * (1 - tx) + cell[y0][x0 + 1] * tx;
        const double b = cell[y0 + 1][x0] * (1 - tx) + cell[y0 + 1][x0 + 1] * tx;
        return a * (1 - ty) + b * ty;
    }
};

void draw_background(ImageU8& img, const BurstParams& bp) {
    const CoarseNoise noise(bp.noise_seed);
    const double h = static_cast<double>(img.height), w = static_cast<double>(img.width);
    const double rmax = std::sqrt(h * h + w * w) * 0.5;
    std::size_t i = 0;
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x, ++i) {
            const double dx = static_cast<double>(x) - bp.cx * w;
            const double dy = static_cast<double>(y) - bp.cy * h;
            const double r = std::sqrt(dx * dx + dy * dy) / rmax;
            const double shade = 1.0 - bp.vignette * r * r;
            const double n = bp.noise_amp * noise.at(static_cast<double>(y) / h,
                                                     static_cast<double>(x) / w);
            img.rgb[3 * i + 0] = clamp_u8(bp.base_r * shade + n);
            img.rgb[3 * i + 1] = clamp_u8(bp.base_g * shade + n * 0.7);
            img.rgb[3 * i + 2] = clamp_u8(bp.base_b * shade + n * 0.5);
        }
    }
}

// Class-specific instrument geometry. Families differ in slenderness and in
// tip construction so shape alone identifies the class.
struct FamilyGeometry {
    double aspect;  // length / thickness
    int tip;        // 0 round, 1 wedge, 2 flat crossbar
};

// Slenderness spaced geometrically so families stay separable even when
// instruments are drawn only a few pixels wide.
FamilyGeometry family_geometry(std::size_t family) {
    FamilyGeometry g;
    g.aspect = std::min(36.0, 4.0 * std::pow(1.9, static_cast<double>(family - 1)));
    g.tip = static_cast<int>(family % 3);
    return g;
}

struct InstrumentPose {
    std::size_t family;  // mask id
    double cx, cy;       // center, pixels
    double angle;
    double half_len;     // along the axis
    double half_w;       // body half-width
    double gray;         // base metal intensity
    double phase;
};

// Signed half-width of the instrument profile at axial position u, or < 0
// outside the body.
double profile_half_width(const InstrumentPose& p, const FamilyGeometry& g, double u) {
    if (std::abs(u) > p.half_len) return -1.0;
    switch (g.tip) {
        case 0: {  // round: capsule — circular cap over the last half-width
            const double cap = p.half_len - p.half_w;
            if (std::abs(u) <= cap) return p.half_w;
            const double d = std::abs(u) - cap;
            const double w2 = p.half_w * p.half_w - d * d;
            return w2 > 0 ? std::sqrt(w2) : -1.0;
        }
        case 1: {  // wedge: long linear taper to a sharp point
            const double taper_start = -p.half_len * 0.3;
            if (u <= taper_start) return p.half_w;
            return p.half_w * (p.half_len - u) / (p.half_len - taper_start);
        }
        default: {  // flat: narrow shaft with a wide T-shaped crossbar
            const double bar = p.half_len * 0.18;
            if (u > p.half_len - bar) return std::max(3.2 * p.half_w, p.half_w + 2.5);
            return p.half_w * 0.7;
        }
    }
}

void rasterize_instrument(ImageU8& img, Mask& mask, const InstrumentPose& p) {
    const FamilyGeometry g = family_geometry(p.family);
    const double c = std::cos(p.angle), s = std::sin(p.angle);
    // conservative bounding box around the rotated shape
    const double reach = p.half_len + 3.0 * p.half_w;
    const std::size_t x0 = static_cast<std::size_t>(std::max(0.0, p.cx - reach));
    const std::size_t x1 = std::min(img.width, static_cast<std::size_t>(std::max(0.0, p.cx + reach + 1)));
    const std::size_t y0 = static_cast<std::size_t>(std::max(0.0, p.cy - reach));
    const std::size_t y1 = std::min(img.height, static_cast<std::size_t>(std::max(0.0, p.cy + reach + 1)));
    for (std::size_t y = y0; y < y1; ++y) {
        for (std::size_t x = x0; x < x1; ++x) {
            const double dx = static_cast<double>(x) - p.cx;
            const double dy = static_cast<double>(y) - p.cy;
            const double u = c * dx + s * dy;
            const double v = -s * dx + c * dy;
            const double hw = profile_half_width(p, g, u);
            if (hw <= 0.0 || std::abs(v) > hw) continue;
            const std::size_t i = y * img.width + x;
            mask.ids[i] = static_cast<std::uint8_t>(p.family);
            // metal shading: brighter ridge along the axis, mild axial wave
            const double ridge = 1.0 - 0.55 * std::abs(v) / std::max(hw, 1e-6);
            const double wave = 0.12 * std::sin(u * 0.45 + p.phase);
            const double val = p.gray * (0.72 + 0.28 * ridge + wave);
            img.rgb[3 * i + 0] = clamp_u8(val);
            img.rgb[3 * i + 1] = clamp_u8(val * 1.02);
            img.rgb[3 * i + 2] = clamp_u8(val * 1.06);
        }
    }
}

void draw_speculars(ImageU8& img, const SpecularSpec& sp, Rng& rng) {
    const std::size_t count =
        sp.count_min + (sp.count_max > sp.count_min
                            ? static_cast<std::size_t>(rng.below(sp.count_max - sp.count_min + 1))
                            : 0);
    for (std::size_t k = 0; k < count; ++k) {
        const double cx = rng.uniform(0.0, static_cast<double>(img.width));
        const double cy = rng.uniform(0.0, static_cast<double>(img.height));
        const double ax = rng.uniform(sp.size_min, sp.size_max);
        const double ay = rng.uniform(sp.size_min, sp.size_max);
        const double theta = rng.uniform(0.0, 3.14159265358979);
        const double c = std::cos(theta), s = std::sin(theta);
        const std::size_t x0 = static_cast<std::size_t>(std::max(0.0, cx - ax - ay));
        const std::size_t x1 = std::min(img.width, static_cast<std::size_t>(std::max(0.0, cx + ax + ay + 1)));
        const std::size_t y0 = static_cast<std::size_t>(std::max(0.0, cy - ax - ay));
        const std::size_t y1 = std::min(img.height, static_cast<std::size_t>(std::max(0.0, cy + ax + ay + 1)));
        for (std::size_t y = y0; y < y1; ++y) {
            for (std::size_t x = x0; x < x1; ++x) {
                const double dx = static_cast<double>(x) - cx;
                const double dy = static_cast<double>(y) - cy;
                const double u = (c * dx + s * dy) / ax;
                const double v = (-s * dx + c * dy) / ay;
                const double d2 = u * u + v * v;
                if (d2 > 1.0) continue;
                const double blend = sp.intensity * (1.0 - d2);
                std::uint8_t* px = &img.rgb[3 * (y * img.width + x)];
                for (int ch = 0; ch < 3; ++ch) {
                    px[ch] = clamp_u8(px[ch] + blend * (255.0 - px[ch]));
                }
            }
        }
    }
}

std::vector<int> mask_class_ids(const Mask& mask) {
    std::set<int> ids;
    for (std::uint8_t v : mask.ids) {
        if (v != 0) ids.insert(v);
    }
    return {ids.begin(), ids.end()};
}

SynthSample make_sample(const GenSpec& spec, const BurstParams& bp, Rng& rng) {
    SynthSample sample;
    sample.image.height = spec.height;
    sample.image.width = spec.width;
    sample.image.rgb.resize(3 * spec.height * spec.width);
    sample.mask.height = spec.height;
    sample.mask.width = spec.width;

    const double total = static_cast<double>(spec.height * spec.width);
    const std::size_t count = 1 + (spec.max_instruments > 1
                                       ? static_cast<std::size_t>(rng.below(spec.max_instruments))
                                       : 0);

    // Instruments are re-posed until the foreground fraction lands near the
    // target (the invariant allows 3x either way; aim tighter for slack).
    for (int attempt = 0; attempt < 12; ++attempt) {
        draw_background(sample.image, bp);
        sample.mask.ids.assign(spec.height * spec.width, 0);
        for (std::size_t k = 0; k < count; ++k) {
            InstrumentPose pose;
            pose.family = 1 + static_cast<std::size_t>(rng.below(spec.num_classes));
            const FamilyGeometry g = family_geometry(pose.family);
            const double area =
                spec.foreground_ratio * total / static_cast<double>(count) * rng.uniform(0.85, 1.2);
            double len = std::sqrt(area * g.aspect);
            len = std::min(len, 0.85 * static_cast<double>(std::min(spec.height, spec.width)));
            const double width = area / len;
            pose.half_len = len * 0.5;
            pose.half_w = std::max(0.55, width * 0.5);
            pose.cx = rng.uniform(0.3, 0.7) * static_cast<double>(spec.width);
            pose.cy = rng.uniform(0.3, 0.7) * static_cast<double>(spec.height);
            pose.angle = rng.uniform(0.0, 6.283185307179586);
            pose.gray = rng.uniform(150.0, 215.0);
            pose.phase = rng.uniform(0.0, 6.283185307179586);
            rasterize_instrument(sample.image, sample.mask, pose);
        }
        std::size_t fg = 0;
        for (std::uint8_t v : sample.mask.ids) fg += v != 0;
        const double frac = static_cast<double>(fg) / total;
        if (frac >= spec.foreground_ratio / 2.5 && frac <= spec.foreground_ratio * 2.5) break;
    }

    draw_speculars(sample.image, spec.specular, rng);
    sample.class_ids = mask_class_ids(sample.mask);
    return sample;
}

std::string zero_pad(std::size_t v, int width) {
    std::string s = std::to_string(v);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

std::string ids_csv(const std::vector<int>& ids) {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) s.push_back(',');
        s += std::to_string(ids[i]);
    }
    return s;
}

}  // namespace

std::vector<ManifestEntry> generate(const GenSpec& spec, const fs::path& out_dir) {
    spec.validate();
    std::error_code ec;
    fs::create_directories(out_dir / "images", ec);
    fs::create_directories(out_dir / "masks", ec);
    if (!fs::is_directory(out_dir / "images") || !fs::is_directory(out_dir / "masks")) {
        throw IoError("generate: cannot create output directories under " + out_dir.string());
    }

    std::vector<ManifestEntry> entries;
    std::vector<SynthSample> train_samples;

    for (const char* split_name : {"train", "test"}) {
        const std::string split = split_name;
        for (std::size_t i = 0; i < spec.images_per_split; ++i) {
            const std::size_t burst = i / spec.burst_len;
            const BurstParams bp = burst_params(spec.seed, split, burst);
            Rng rng(Rng::mix(spec.seed, Rng::mix(Rng::hash_str(split + "/image"), i)));
            SynthSample sample = make_sample(spec, bp, rng);

            ManifestEntry e;
            e.group = split + "_g" + std::to_string(burst);
            e.split = split;
            e.image_path = "images/" + split + "_" + zero_pad(i, 4) + ".ppm";
            e.mask_path = "masks/" + split + "_" + zero_pad(i, 4) + ".pgm";
            e.class_ids = sample.class_ids;
            write_ppm(out_dir / e.image_path, sample.image);
            write_pgm(out_dir / e.mask_path, sample.mask);
            if (split == "train" && spec.augment_images > 0) train_samples.push_back(sample);
            entries.push_back(std::move(e));
        }
    }

    // Pre-generated augmentation: extra warped copies of train images,
    // keeping the source's burst group so the split stays leak-free.
    for (std::size_t a = 0; a < spec.augment_images; ++a) {
        Rng rng(Rng::mix(spec.seed, Rng::mix(Rng::hash_str("augment"), a)));
        const std::size_t src = static_cast<std::size_t>(rng.below(spec.images_per_split));
        AugmentParams ap;
        ap.rotate_deg = rng.uniform(-25.0, 25.0);
        ap.shift_x = rng.uniform(-0.1, 0.1) * static_cast<double>(spec.width);
        ap.shift_y = rng.uniform(-0.1, 0.1) * static_cast<double>(spec.height);
        ap.flip_h = rng.below(2) != 0;
        ap.flip_v = rng.below(2) != 0;
        SynthSample warped = augment(train_samples[src], ap);

        ManifestEntry e;
        e.group = "train_g" + std::to_string(src / spec.burst_len);
        e.split = "train";
        e.image_path = "images/train_aug_" + zero_pad(a, 4) + ".ppm";
        e.mask_path = "masks/train_aug_" + zero_pad(a, 4) + ".pgm";
        e.class_ids = warped.class_ids;
        write_ppm(out_dir / e.image_path, warped.image);
        write_pgm(out_dir / e.mask_path, warped.mask);
        entries.push_back(std::move(e));
    }

    write_manifest(out_dir / "manifest.tsv", entries);
    return entries;
}

void write_manifest(const fs::path& manifest_path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(manifest_path);
    if (!out) throw IoError("cannot write " + manifest_path.string());
    for (const ManifestEntry& e : entries) {
        out << e.group << '\t' << e.split << '\t' << e.image_path << '\t' << e.mask_path << '\t'
            << ids_csv(e.class_ids) << '\n';
    }
    if (!out) throw IoError("write failed: " + manifest_path.string());
}

std::vector<ManifestEntry> read_manifest(const fs::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot read " + manifest_path.string());
    std::vector<ManifestEntry> entries;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        ManifestEntry e;
        std::string ids;
        if (!std::getline(ls, e.group, '\t') || !std::getline(ls, e.split, '\t') ||
            !std::getline(ls, e.image_path, '\t') || !std::getline(ls, e.mask_path, '\t')) {
            throw IoError(manifest_path.string() + ":" + std::to_string(lineno) +
                          ": malformed manifest line");
        }
        std::getline(ls, ids, '\t');
        std::istringstream is(ids);
        std::string tok;
        while (std::getline(is, tok, ',')) {
            if (!tok.empty()) e.class_ids.push_back(std::stoi(tok));
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

// ---- augmentation ------------------------------------------------------------

namespace {

// mean border color, used as the out-of-canvas fill
std::array<double, 3> border_color(const ImageU8& img) {
    std::array<double, 3> acc = {0, 0, 0};
    std::size_t n = 0;
    auto add = [&](std::size_t x, std::size_t y) {
        const std::uint8_t* px = &img.rgb[3 * (y * img.width + x)];
        for (int c = 0; c < 3; ++c) acc[c] += px[c];
        ++n;
    };
    for (std::size_t x = 0; x < img.width; ++x) {
        add(x, 0);
        add(x, img.height - 1);
    }
    for (std::size_t y = 1; y + 1 < img.height; ++y) {
        add(0, y);
        add(img.width - 1, y);
    }
    for (double& c : acc) c /= static_cast<double>(n);
    return acc;
}

}  // namespace

SynthSample augment(const SynthSample& s, const AugmentParams& p) {
    const std::size_t H = s.image.height, W = s.image.width;
    SynthSample out;
    out.image.height = H;
    out.image.width = W;
    out.image.rgb.resize(3 * H * W);
    out.mask.height = H;
    out.mask.width = W;
    out.mask.ids.assign(H * W, 0);

    const double cx = (static_cast<double>(W) - 1.0) * 0.5;
    const double cy = (static_cast<double>(H) - 1.0) * 0.5;
    const double theta = p.rotate_deg * 3.14159265358979 / 180.0;
    const double c = std::cos(theta), sn = std::sin(theta);
    const auto fill = border_color(s.image);

    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            // inverse map: undo shift, undo rotation, undo flips
            double dx = static_cast<double>(x) - p.shift_x - cx;
            double dy = static_cast<double>(y) - p.shift_y - cy;
            double sx = c * dx + sn * dy + cx;
            double sy = -sn * dx + c * dy + cy;
            if (p.flip_h) sx = static_cast<double>(W) - 1.0 - sx;
            if (p.flip_v) sy = static_cast<double>(H) - 1.0 - sy;

            const std::size_t di = y * W + x;

            // mask: nearest neighbour keeps ids exact
            const long mx = std::lround(sx), my = std::lround(sy);
            if (mx >= 0 && my >= 0 && mx < static_cast<long>(W) && my < static_cast<long>(H)) {
                out.mask.ids[di] = s.mask.ids[static_cast<std::size_t>(my) * W +
                                              static_cast<std::size_t>(mx)];
            }

            // image: bilinear with border fill
            if (sx < 0.0 || sy < 0.0 || sx > static_cast<double>(W) - 1.0 ||
                sy > static_cast<double>(H) - 1.0) {
                for (int ch = 0; ch < 3; ++ch) out.image.rgb[3 * di + ch] = clamp_u8(fill[ch]);
                continue;
            }
            const std::size_t x0 = static_cast<std::size_t>(sx);
            const std::size_t y0 = static_cast<std::size_t>(sy);
            const std::size_t x1 = std::min(x0 + 1, W - 1);
            const std::size_t y1 = std::min(y0 + 1, H - 1);
            const double tx = sx - static_cast<double>(x0);
            const double ty = sy - static_cast<double>(y0);
            for (int ch = 0; ch < 3; ++ch) {
                const double a = s.image.rgb[3 * (y0 * W + x0) + ch] * (1 - tx) +
                                 s.image.rgb[3 * (y0 * W + x1) + ch] * tx;
                const double b = s.image.rgb[3 * (y1 * W + x0) + ch] * (1 - tx) +
                                 s.image.rgb[3 * (y1 * W + x1) + ch] * tx;
                out.image.rgb[3 * di + ch] = clamp_u8(a * (1 - ty) + b * ty);
            }
        }
    }
    out.class_ids = mask_class_ids(out.mask);
    return out;
}

}  // namespace raunet
