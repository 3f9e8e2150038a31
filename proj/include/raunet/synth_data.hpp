#pragma once

#include <filesystem>
#include <string>

#include "raunet/image.hpp"

namespace raunet {

// Specular highlights: saturated ellipses drawn over the image only, never
// the mask (reflections change appearance, not labels).
struct SpecularSpec {
    std::size_t count_min = 1;
    std::size_t count_max = 4;
    double intensity = 0.9;   // blend toward saturation, in (0,1]
    double size_min = 1.0;    // ellipse semi-axis range, pixels
    double size_max = 3.5;
};

// Synthetic stand-in for a cataract-tool dataset: ocular-looking background,
// 1..max_instruments thin elongated instruments per image with class-specific
// aspect ratio and tip geometry, severe foreground/background imbalance,
// specular highlights; images generated in bursts that share background and
// lighting, with the train/test split cut along bursts.
struct GenSpec {
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t num_classes = 10;      // instrument shape families, ids 1..num_classes
    std::size_t images_per_split = 150;  // image count in each of train and test
    std::size_t augment_images = 0;    // extra augmented copies appended to train
    std::size_t max_instruments = 2;
    double foreground_ratio = 0.02;    // target instrument-pixel fraction, in (0, 0.2)
    SpecularSpec specular;
    std::size_t burst_len = 10;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SynthSample {
    ImageU8 image;
    Mask mask;
    std::vector<int> class_ids;  // distinct foreground ids present in the mask
};

// One manifest line: group, split, image path, mask path, class ids.
struct ManifestEntry {
    std::string group;
    std::string split;  // "train" | "test"
    std::string image_path;  // relative to the manifest file
    std::string mask_path;
    std::vector<int> class_ids;
};

// Writes images/ masks/ and manifest.tsv under out_dir. Deterministic given
// spec.seed (per-image derived streams).
std::vector<ManifestEntry> generate(const GenSpec& spec, const std::filesystem::path& out_dir);

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest_path);
void write_manifest(const std::filesystem::path& manifest_path,
                    const std::vector<ManifestEntry>& entries);

struct AugmentParams {
    double rotate_deg = 0.0;
    double shift_x = 0.0;  // pixels, applied after rotation
    double shift_y = 0.0;
    bool flip_h = false;
    bool flip_v = false;
};

// Identical geometric transform on image (bilinear) and mask (nearest);
// out-of-canvas areas are filled with the image border color / background
// class.
SynthSample augment(const SynthSample& s, const AugmentParams& p);

}  // namespace raunet
