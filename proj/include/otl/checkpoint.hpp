#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "otl/model.hpp"

namespace otl {

inline constexpr char kCheckpointMagic[4] = {'O', 'T', 'L', '1'};
inline constexpr int kCheckpointVersion = 1;

struct TrainingMeta {
    std::uint64_t steps = 0;
    std::string loss_mode = "none";
    friend bool operator==(const TrainingMeta&, const TrainingMeta&) = default;
};

struct Checkpoint {
    Model model;
    std::string rng_state;
    TrainingMeta meta;
};

// Layout: "OTL1" | u64 LE header length | UTF-8 JSON header | raw LE float64 blobs.
// Tensor offsets in the header are relative to the first blob byte.
void save_checkpoint(const std::filesystem::path& path, const Model& model, const std::string& rng_state = {},
                     const TrainingMeta& meta = {});

// Throws FormatError (bad magic / header), VersionError (format_version
// other than kCheckpointVersion) or CorruptionError (truncated data).
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace otl
