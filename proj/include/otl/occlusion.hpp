#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "otl/dataset.hpp"
#include "otl/model.hpp"
#include "otl/rng.hpp"
#include "otl/tensor.hpp"

namespace otl {

enum class NoiseKind { none, salt_pepper, speckle, gaussian, random };

struct NoiseModel {
    NoiseKind kind = NoiseKind::random;
    // p_flip for salt_pepper, sigma for speckle/gaussian. Drawn per patch
    // from the default range of the kind when unset.
    std::optional<double> param;
};

struct OccluderSpec {
    std::size_t height = 6;
    std::size_t width = 6;
    double intensity_lo = 0.0;
    double intensity_hi = 1.0;
    NoiseModel noise;

    void validate() const;
    static OccluderSpec from_json(const nlohmann::json& doc);
    nlohmann::json to_json() const;
};

// The three reference occluders (20x20, 20x40, 40x40 on a 100x100 face)
// scaled to the image size.
enum class OccluderSize { small, medium, large };
OccluderSpec scaled_occluder(OccluderSize size, std::size_t image_h, std::size_t image_w);
double default_temperature(OccluderSize size);

struct Location {
    std::size_t row = 0;
    std::size_t col = 0;
    friend bool operator==(const Location&, const Location&) = default;
};

struct BinaryOcclusionMap {
    Tensor grid;  // [H, W], values 0 or 1
    std::string image_id;
    std::size_t occluder_h = 0;
    std::size_t occluder_w = 0;
};

struct OcclusionMap {
    Tensor grid;  // [H, W], per-location error rate in [0, 1]
    std::size_t sample_count = 0;
    std::size_t occluder_h = 0;
    std::size_t occluder_w = 0;
};

struct PlacementDistribution {
    Tensor probs;  // [H, W], sums to 1
    double temperature = 1.0;
    std::vector<double> cdf;  // row-major cumulative probabilities
};

// Uniform base intensity in [lo, hi], per-pixel noise, clamped to [0,1].
Tensor make_occluder(const OccluderSpec& spec, Rng& rng);

// Rows covered by a patch of height h centred at row i: [i - h/2, i - h/2 + h),
// clipped to the image; columns likewise. Returns a new image.
Tensor apply_occluder(const Tensor& image, const Tensor& patch, Location center);
void apply_occluder_inplace(std::span<double> image, std::size_t height, std::size_t width, const Tensor& patch,
                            Location center);

struct ScanOptions {
    std::size_t stride = 1;
    std::size_t batch = 128;
    std::size_t workers = 1;
};

// Batch of [N,H,W,1] images -> predicted class per image.
using Predictor = std::function<std::vector<std::size_t>(const Tensor&)>;
Predictor model_predictor(const Model& model);

/// Occludes the image once per scan location with one patch drawn for the
/// whole image; a cell is 1 where the prediction differs from the label.
/// With stride s the scan visits rows/cols 0, s, 2s, ... and every cell of
/// the s x s block anchored there takes that location's value.
/// Throws PreconditionError if the unoccluded image is misclassified.
BinaryOcclusionMap binary_occlusion_map(const Predictor& predict, const LabeledImage& image,
                                        const OccluderSpec& spec, Rng& rng, const ScanOptions& options = {});
BinaryOcclusionMap binary_occlusion_map(const Model& model, const LabeledImage& image, const OccluderSpec& spec,
                                        Rng& rng, const ScanOptions& options = {});

OcclusionMap aggregate_map(std::span<const BinaryOcclusionMap> maps);

// P = softmax(O / T), max-subtracted. Throws ParameterError unless T > 0.
PlacementDistribution placement_distribution(const OcclusionMap& map, double temperature);
PlacementDistribution placement_distribution(const Tensor& grid, double temperature);

// Inverse-CDF draw over the row-major flattening.
Location sample_location(const PlacementDistribution& dist, Rng& rng);

// Baseline scheme: per-axis normal centred on the image with std = size/4,
// rounded and redrawn until inside the image.
struct NormalPlacement {};
Location sample_normal_location(std::size_t height, std::size_t width, Rng& rng);

using PlacementMode = std::variant<PlacementDistribution, NormalPlacement>;

// Every image in an [N,H,W] or [N,H,W,1] batch gets exactly one freshly
// drawn occluder at a sampled location. Output has the input's shape.
Tensor augment_batch(const Tensor& images, const PlacementMode& placement, const OccluderSpec& spec, Rng& rng);

// Centroid (row, col) of the top 10% of cells, ties broken by row-major order.
std::pair<double, double> top_decile_centroid(const Tensor& grid);

void save_map_csv(const Tensor& grid, const std::filesystem::path& path);
std::string map_csv(const Tensor& grid);
Tensor load_map_csv(const std::filesystem::path& path);
void save_map_pgm(const Tensor& grid, const std::filesystem::path& path);

}  // namespace otl
