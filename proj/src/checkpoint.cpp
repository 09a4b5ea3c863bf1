#include "otl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include <fmt/format.h>

#include "otl/errors.hpp"

namespace otl {

using nlohmann::json;

namespace {

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model, const std::string& rng_state,
                     const TrainingMeta& meta) {
    json tensors = json::object();
    std::string blob;
    for (const auto& [name, tensor] : model.parameters()) {
        const std::size_t offset = blob.size();
        for (double v : tensor.data()) put_u64(blob, std::bit_cast<std::uint64_t>(v));
        tensors[name] = {{"shape", tensor.shape()}, {"offset", offset}, {"length", blob.size() - offset}};
    }
    const json header = {{"format_version", kCheckpointVersion},
                         {"model_config", model.config().to_json()},
                         {"tensors", std::move(tensors)},
                         {"rng_state", rng_state},
                         {"training_meta", {{"steps", meta.steps}, {"loss_mode", meta.loss_mode}}}};
    const std::string header_text = header.dump();

    std::string bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
    put_u64(bytes, header_text.size());
    bytes += header_text;
    bytes += blob;

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open checkpoint for writing: " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint: " + path.string());
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
        throw FormatError(path.string() + ": not a checkpoint (bad magic bytes)");
    }
    if (bytes.size() < 12) throw CorruptionError(path.string() + ": truncated header length");
    const std::uint64_t header_len = get_u64(bytes.data() + 4);
    if (header_len > bytes.size() - 12) throw CorruptionError(path.string() + ": truncated header");

    json header;
    try {
        header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(header_len));
    } catch (const json::exception& e) {
        throw CorruptionError(path.string() + ": unreadable header: " + e.what());
    }
    if (!header.is_object() || !header.contains("format_version") || !header.at("format_version").is_number_integer()) {
        throw FormatError(path.string() + ": header lacks format_version");
    }
    const int version = header.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
        throw VersionError(fmt::format("{}: checkpoint format version {} is not supported (expected {})",
                                       path.string(), version, kCheckpointVersion));
    }

    try {
        Model model(ModelConfig::from_json(header.at("model_config")));
        const json& tensors = header.at("tensors");
        const std::size_t data_start = 12 + header_len;
        const std::size_t data_len = bytes.size() - data_start;
        if (tensors.size() != model.parameters().size()) {
            throw FormatError(path.string() + ": tensor table does not match model parameters");
        }
        for (auto& [name, tensor] : model.parameters()) {
            if (!tensors.contains(name)) throw FormatError(path.string() + ": missing tensor '" + name + "'");
            const json& entry = tensors.at(name);
            if (entry.at("shape").get<Shape>() != tensor.shape()) {
                throw FormatError(path.string() + ": tensor '" + name + "' has the wrong shape");
            }
            const std::size_t offset = entry.at("offset").get<std::size_t>();
            const std::size_t length = entry.at("length").get<std::size_t>();
            if (length != tensor.size() * 8) throw FormatError(path.string() + ": bad length for '" + name + "'");
            if (offset > data_len || length > data_len - offset) {
                throw CorruptionError(path.string() + ": tensor '" + name + "' runs past end of file");
            }
            const unsigned char* p = bytes.data() + data_start + offset;
            for (std::size_t i = 0; i < tensor.size(); ++i) tensor[i] = std::bit_cast<double>(get_u64(p + 8 * i));
        }
        TrainingMeta meta;
        const json& tm = header.at("training_meta");
        meta.steps = tm.at("steps").get<std::uint64_t>();
        meta.loss_mode = tm.at("loss_mode").get<std::string>();
        return Checkpoint{std::move(model), header.at("rng_state").get<std::string>(), std::move(meta)};
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": malformed header: " + e.what());
    } catch (const ShapeError& e) {
        throw FormatError(path.string() + ": invalid model config: " + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(path.string() + ": invalid model config: " + e.what());
    }
}

}  // namespace otl
