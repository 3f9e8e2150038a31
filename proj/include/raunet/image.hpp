#pragma once

#include <cstdint>
#include <vector>

namespace raunet {

// 8-bit interleaved RGB raster, the on-disk unit for samples (PPM).
struct ImageU8 {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> rgb;  // 3 * height * width, row-major, RGB

    std::size_t pixels() const { return height * width; }
};

// Per-pixel class ids; 0 is background (PGM on disk).
struct Mask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> ids;  // height * width

    std::size_t pixels() const { return height * width; }
};

// Batched integer target [N,H,W] for losses and metrics.
struct MaskBatch {
    std::size_t n = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> ids;  // n * height * width

    static MaskBatch stack(const std::vector<const Mask*>& masks);
    static MaskBatch of(const Mask& mask) { return stack({&mask}); }
};

}  // namespace raunet
