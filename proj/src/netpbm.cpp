#include "raunet/netpbm.hpp"

#include <fstream>

#include "raunet/tensor.hpp"

namespace raunet {

namespace {

// Reads one whitespace-delimited token, skipping '#' comment lines.
std::string next_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    return tok;
}

struct PnmHeader {
    std::size_t width, height;
};

PnmHeader read_header(std::istream& in, const char* magic, const std::filesystem::path& path) {
    const std::string m = next_token(in);
    if (m != magic) {
        throw IoError(path.string() + ": expected " + magic + " magic, got '" + m + "'");
    }
    const std::string ws = next_token(in), hs = next_token(in), maxs = next_token(in);
    std::size_t w = 0, h = 0;
    long max = -1;
    try {
        w = std::stoul(ws);
        h = std::stoul(hs);
        max = std::stol(maxs);
    } catch (const std::exception&) {
        throw IoError(path.string() + ": malformed header");
    }
    if (w == 0 || h == 0) throw IoError(path.string() + ": zero image extent");
    if (max != 255) {
        throw IoError(path.string() + ": unsupported maxval " + std::to_string(max) +
                      " (only 255)");
    }
    return {w, h};
}

void read_payload(std::istream& in, std::vector<std::uint8_t>& out,
                  const std::filesystem::path& path) {
    in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (static_cast<std::size_t>(in.gcount()) != out.size()) {
        throw IoError(path.string() + ": truncated payload");
    }
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    return in;
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const ImageU8& image) {
    if (image.rgb.size() != 3 * image.pixels()) throw IoError("write_ppm: bad buffer size");
    auto out = open_out(path);
    out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.rgb.data()),
              static_cast<std::streamsize>(image.rgb.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

ImageU8 read_ppm(const std::filesystem::path& path) {
    auto in = open_in(path);
    const auto hdr = read_header(in, "P6", path);
    ImageU8 img;
    img.width = hdr.width;
    img.height = hdr.height;
    img.rgb.resize(3 * img.pixels());
    read_payload(in, img.rgb, path);
    return img;
}

void write_pgm(const std::filesystem::path& path, const Mask& mask) {
    if (mask.ids.size() != mask.pixels()) throw IoError("write_pgm: bad buffer size");
    auto out = open_out(path);
    out << "P5\n" << mask.width << ' ' << mask.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(mask.ids.data()),
              static_cast<std::streamsize>(mask.ids.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

Mask read_pgm(const std::filesystem::path& path) {
    auto in = open_in(path);
    const auto hdr = read_header(in, "P5", path);
    Mask mask;
    mask.width = hdr.width;
    mask.height = hdr.height;
    mask.ids.resize(mask.pixels());
    read_payload(in, mask.ids, path);
    return mask;
}

}  // namespace raunet
