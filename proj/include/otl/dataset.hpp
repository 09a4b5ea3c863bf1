#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "otl/tensor.hpp"

namespace otl {

/// Grayscale image in [0,1], shape [H, W].
struct LabeledImage {
    Tensor pixels;
    std::size_t label = 0;
    std::string id;
};

enum class SplitTag { all, train, val };

struct Dataset {
    std::vector<LabeledImage> images;
    std::size_t class_count = 0;
    SplitTag split = SplitTag::all;
    std::vector<std::string> class_names;

    std::size_t size() const { return images.size(); }
    bool empty() const { return images.empty(); }
    std::size_t height() const;
    std::size_t width() const;

    std::vector<std::size_t> class_counts() const;
    // Index of the image with this id; throws KeyError when absent.
    std::size_t find(const std::string& id) const;

    // [N, H, W, 1] batch of the selected images, and their labels.
    Tensor batch(std::span<const std::size_t> indices) const;
    std::vector<std::size_t> labels(std::span<const std::size_t> indices) const;
    Tensor all_pixels() const;

    // Images whose label lies in [first, first + count), relabelled from 0.
    Dataset classes(std::size_t first, std::size_t count) const;
};

/// Pixel rectangle, rows [top, top+height) x cols [left, left+width).
struct Rect {
    std::size_t top = 0;
    std::size_t left = 0;
    std::size_t height = 0;
    std::size_t width = 0;

    bool contains(double row, double col) const {
        return row >= static_cast<double>(top) && row < static_cast<double>(top + height) &&
               col >= static_cast<double>(left) && col < static_cast<double>(left + width);
    }
    friend bool operator==(const Rect&, const Rect&) = default;
};

/// Synthetic stand-in for an aligned face set: a shared smooth background,
/// a class-specific binary pattern planted inside cue_region, and pixel noise.
/// Only the cue region carries identity information.
struct SyntheticSpec {
    std::size_t class_count = 10;
    std::size_t samples_per_class = 100;
    std::size_t height = 32;
    std::size_t width = 32;
    // Off-centre on purpose so that map recovery is not a centre bias.
    Rect cue_region{4, 14, 14, 14};
    double cue_strength = 0.8;
    double background_noise_sigma = 0.1;
    // Per-image chance of flipping each cue cell's sign (intra-class variation).
    double cell_flip_prob = 0.0;
    std::uint64_t seed = 1;

    void validate() const;
    static SyntheticSpec from_json(const nlohmann::json& doc);
    nlohmann::json to_json() const;
};

Dataset generate_synthetic(const SyntheticSpec& spec);

// Stratified: each class contributes round(val_fraction * n_c) images to val,
// capped so at least two remain in train. Throws SplitError for classes with
// fewer than two images.
std::pair<Dataset, Dataset> split(const Dataset& dataset, double val_fraction, std::uint64_t seed);

/// Endless stream of shuffled mini-batch index lists. Epoch e is a
/// permutation drawn from (seed, e); the last short batch of an epoch is kept.
class BatchStream {
public:
    BatchStream(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed);

    std::vector<std::size_t> next();
    std::size_t epoch() const { return epoch_; }

private:
    void reshuffle();

    std::size_t size_;
    std::size_t batch_size_;
    std::uint64_t seed_;
    std::size_t epoch_ = 0;
    std::size_t cursor_ = 0;
    std::vector<std::size_t> order_;
};

// Binary P5, maxval 255. Pixels map to byte/255.
Tensor load_pgm(const std::filesystem::path& path);
// Values are clamped to [0,1] and rounded to the nearest 1/255 step.
void save_pgm(const Tensor& pixels, const std::filesystem::path& path);
Tensor decode_pgm(std::span<const unsigned char> bytes);
std::vector<unsigned char> encode_pgm(const Tensor& pixels);

// <root>/<class_name>/<image>.pgm; class names sorted lexicographically give
// labels 0..K-1 and ids are "<class_name>/<file stem>".
Dataset load_directory(const std::filesystem::path& root);
void save_directory(const Dataset& dataset, const std::filesystem::path& root);

}  // namespace otl
