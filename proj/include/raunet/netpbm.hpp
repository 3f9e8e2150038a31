#pragma once

#include <filesystem>

#include "raunet/image.hpp"

namespace raunet {

// Binary netpbm with maxval 255 only. Masks are stored as P5 (pixel value ==
// class id), images as P6. Reads reject malformed headers, other maxvals and
// truncated payloads with IoError.

void write_ppm(const std::filesystem::path& path, const ImageU8& image);
ImageU8 read_ppm(const std::filesystem::path& path);

void write_pgm(const std::filesystem::path& path, const Mask& mask);
Mask read_pgm(const std::filesystem::path& path);

}  // namespace raunet
