#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "otl/dataset.hpp"
#include "otl/eval.hpp"
#include "otl/metric_losses.hpp"
#include "otl/model.hpp"
#include "otl/occlusion.hpp"
#include "otl/train.hpp"

namespace otl::cli {

enum ExitCode : int { kOk = 0, kUnexpected = 1, kConfig = 2, kNumeric = 3, kProtocol = 4 };

struct MapOptions {
    std::size_t stride = 1;
    std::size_t batch = 128;
    std::size_t max_images = 200;  // after filtering to correctly classified
    SplitTag split = SplitTag::val;
};

struct AugmentOptions {
    std::string mode = "P";  // P (map-guided) or R (normal placement)
    Schedule schedule{300, 0.02, 0.9, 32};
    double occluded_fraction = 0.5;
    std::filesystem::path map;
};

struct EvalOptions {
    std::filesystem::path pairs;  // empty: generate from the verification set
    std::size_t k = 10;
    std::size_t pairs_per_fold = 30;
};

/// Everything a command needs besides its input files. Relative paths in the
/// JSON resolve against the config file's directory.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::optional<SyntheticSpec> synthetic;
    std::filesystem::path dataset_path;
    // Classes [0, train_classes) train the classifier; the rest, if any,
    // form the verification set. 0 means all classes.
    std::size_t train_classes = 0;
    double val_fraction = 0.2;
    std::optional<ModelConfig> model;
    Schedule train;
    OccluderSpec occluder;
    std::optional<OccluderSize> occluder_size;
    double temperature = 0.4;
    MapOptions map;
    AugmentOptions augment;
    LossConfig loss;
    FinetuneSchedule finetune;
    EvalOptions eval;

    // Throws ConfigError. seed_override replaces (or supplies) the seed.
    static ExperimentConfig from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir,
                                      std::optional<std::uint64_t> seed_override = {});
};

ExperimentConfig load_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override = {});

struct ExperimentData {
    Dataset all;  // pair ids resolve against this
    Dataset train;
    Dataset val;
    Dataset verify;
    OccluderSpec occluder;  // with size presets resolved against the image size
};

ExperimentData prepare_data(const ExperimentConfig& config);

// Occludes the first round(fraction * N) images of each batch.
BatchHook occlusion_hook(PlacementMode placement, OccluderSpec spec, double fraction);

// Correctly classified images of data (at most max_images, in order) and the
// number of images that were excluded for being misclassified.
struct MapSubset {
    std::vector<std::size_t> indices;
    std::size_t excluded = 0;
};
MapSubset correctly_classified(const Model& model, const Dataset& data, std::size_t max_images);

// Aggregate map over the given images; image i draws from Rng::derive(seed, i).
OcclusionMap occlusion_map(const Model& model, const Dataset& data, const std::vector<std::size_t>& indices,
                           const OccluderSpec& spec, std::uint64_t seed, const ScanOptions& options);

// Full command-line entry point; returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace otl::cli
