#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

#include "otl/dataset.hpp"
#include "otl/errors.hpp"

namespace otl {

namespace {

class HeaderReader {
public:
    explicit HeaderReader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

    std::size_t number() {
        skip_space_and_comments();
        if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) throw FormatError("PGM: malformed header");
        std::size_t value = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            value = value * 10 + (bytes_[pos_++] - '0');
            if (value > 1u << 24) throw FormatError("PGM: header value too large");
        }
        return value;
    }

    // Exactly one whitespace byte separates maxval from the raster.
    std::size_t raster_start() {
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) throw FormatError("PGM: malformed header");
        return pos_ + 1;
    }

private:
    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    std::span<const unsigned char> bytes_;
    std::size_t pos_ = 2;
};

}  // namespace

Tensor decode_pgm(std::span<const unsigned char> bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError("PGM: expected P5 magic");
    HeaderReader reader(bytes);
    const std::size_t width = reader.number();
    const std::size_t height = reader.number();
    const std::size_t maxval = reader.number();
    if (maxval != 255) throw FormatError(fmt::format("PGM: maxval {} unsupported (need 255)", maxval));
    if (width == 0 || height == 0) throw FormatError("PGM: empty image");
    const std::size_t start = reader.raster_start();
    if (bytes.size() < start + width * height) {
        throw FormatError(fmt::format("PGM: truncated payload ({} of {} bytes)", bytes.size() - std::min(start, bytes.size()),
                                      width * height));
    }
    Tensor pixels({height, width});
    for (std::size_t i = 0; i < width * height; ++i) pixels[i] = bytes[start + i] / 255.0;
    return pixels;
}

std::vector<unsigned char> encode_pgm(const Tensor& pixels) {
    if (pixels.rank() != 2) throw ShapeError("PGM needs a [H, W] tensor");
    const std::string header = fmt::format("P5\n{} {}\n255\n", pixels.dim(1), pixels.dim(0));
    std::vector<unsigned char> out(header.begin(), header.end());
    out.reserve(out.size() + pixels.size());
    for (double v : pixels.data()) {
        out.push_back(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    }
    return out;
}

Tensor load_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_pgm(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void save_pgm(const Tensor& pixels, const std::filesystem::path& path) {
    const std::vector<unsigned char> bytes = encode_pgm(pixels);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace otl
