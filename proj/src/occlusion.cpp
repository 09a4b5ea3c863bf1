#include "otl/occlusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "otl/errors.hpp"
#include "otl/parallel.hpp"

namespace otl {

using nlohmann::json;

namespace {

struct Range {
    double lo, hi;
};

Range default_noise_range(NoiseKind kind) {
    switch (kind) {
        case NoiseKind::salt_pepper: return {0.05, 0.3};
        case NoiseKind::speckle: return {0.1, 0.5};
        case NoiseKind::gaussian: return {0.05, 0.2};
        default: return {0.0, 0.0};
    }
}

const char* noise_name(NoiseKind kind) {
    switch (kind) {
        case NoiseKind::none: return "none";
        case NoiseKind::salt_pepper: return "salt_pepper";
        case NoiseKind::speckle: return "speckle";
        case NoiseKind::gaussian: return "gaussian";
        case NoiseKind::random: return "random";
    }
    return "?";
}

NoiseKind parse_noise(const std::string& name) {
    for (NoiseKind k : {NoiseKind::none, NoiseKind::salt_pepper, NoiseKind::speckle, NoiseKind::gaussian,
                        NoiseKind::random}) {
        if (name == noise_name(k)) return k;
    }
    throw ConfigError("unknown occluder noise model '" + name + "'");
}

}  // namespace

void OccluderSpec::validate() const {
    if (height < 1 || width < 1) throw ConfigError("occluder height and width must be at least 1");
    if (!(intensity_lo >= 0.0 && intensity_lo <= intensity_hi && intensity_hi <= 1.0)) {
        throw ConfigError("occluder intensity range must satisfy 0 <= lo <= hi <= 1");
    }
    if (noise.param) {
        if (!(*noise.param >= 0.0)) throw ConfigError("occluder noise parameter must be nonnegative");
        if (noise.kind == NoiseKind::salt_pepper && *noise.param > 1.0) {
            throw ConfigError("salt_pepper p_flip must not exceed 1");
        }
        if (noise.kind == NoiseKind::random) throw ConfigError("a random noise model takes no fixed parameter");
    }
}

OccluderSpec OccluderSpec::from_json(const json& doc) {
    OccluderSpec spec;
    if (!doc.is_object()) throw ConfigError("occluder spec must be an object");
    for (const auto& item : doc.items()) {
        const std::string& key = item.key();
        if (key != "height" && key != "width" && key != "intensity_range" && key != "noise") {
            throw ConfigError("occluder spec: unknown key '" + key + "'");
        }
    }
    try {
        spec.height = doc.value("height", spec.height);
        spec.width = doc.value("width", spec.width);
        if (doc.contains("intensity_range")) {
            spec.intensity_lo = doc.at("intensity_range").at(0).get<double>();
            spec.intensity_hi = doc.at("intensity_range").at(1).get<double>();
        }
        if (doc.contains("noise")) {
            const json& n = doc.at("noise");
            if (n.is_string()) {
                spec.noise.kind = parse_noise(n.get<std::string>());
            } else {
                spec.noise.kind = parse_noise(n.at("model").get<std::string>());
                if (n.contains("param")) spec.noise.param = n.at("param").get<double>();
            }
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("occluder spec: ") + e.what());
    }
    spec.validate();
    return spec;
}

json OccluderSpec::to_json() const {
    json noise_doc = {{"model", noise_name(noise.kind)}};
    if (noise.param) noise_doc["param"] = *noise.param;
    return {{"height", height}, {"width", width}, {"intensity_range", {intensity_lo, intensity_hi}}, {"noise", noise_doc}};
}

OccluderSpec scaled_occluder(OccluderSize size, std::size_t image_h, std::size_t image_w) {
    const double fh = size == OccluderSize::large ? 0.4 : 0.2;
    const double fw = size == OccluderSize::small ? 0.2 : 0.4;
    auto scale = [](double f, std::size_t n) {
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(f * static_cast<double>(n))));
    };
    OccluderSpec spec;
    spec.height = scale(fh, image_h);
    spec.width = scale(fw, image_w);
    return spec;
}

double default_temperature(OccluderSize size) {
    switch (size) {
        case OccluderSize::small: return 0.25;
        case OccluderSize::medium: return 0.4;
        case OccluderSize::large: return 0.6;
    }
    return 0.4;
}

Tensor make_occluder(const OccluderSpec& spec, Rng& rng) {
    spec.validate();
    const double base = rng.uniform(spec.intensity_lo, spec.intensity_hi);
    NoiseKind kind = spec.noise.kind;
    if (kind == NoiseKind::random) kind = static_cast<NoiseKind>(1 + rng.below(3));
    double param = 0.0;
    if (kind != NoiseKind::none) {
        if (spec.noise.param) {
            param = *spec.noise.param;
        } else {
            const Range r = default_noise_range(kind);
            param = rng.uniform(r.lo, r.hi);
        }
    }
    Tensor patch({spec.height, spec.width}, base);
    for (double& v : patch.data()) {
        switch (kind) {
            case NoiseKind::salt_pepper: {
                const double u = rng.uniform();
                if (u < 0.5 * param) {
                    v = 0.0;
                } else if (u < param) {
                    v = 1.0;
                }
                break;
            }
            case NoiseKind::speckle: v *= 1.0 + rng.normal(0.0, param); break;
            case NoiseKind::gaussian: v += rng.normal(0.0, param); break;
            default: break;
        }
        v = std::clamp(v, 0.0, 1.0);
    }
    return patch;
}

void apply_occluder_inplace(std::span<double> image, std::size_t height, std::size_t width, const Tensor& patch,
                            Location center) {
    if (center.row >= height || center.col >= width) {
        throw PlacementError(fmt::format("occluder centre ({}, {}) outside {}x{} image", center.row, center.col,
                                         height, width));
    }
    const std::size_t ph = patch.dim(0), pw = patch.dim(1);
    const auto top = static_cast<std::ptrdiff_t>(center.row) - static_cast<std::ptrdiff_t>(ph / 2);
    const auto left = static_cast<std::ptrdiff_t>(center.col) - static_cast<std::ptrdiff_t>(pw / 2);
    const std::ptrdiff_t r0 = std::max<std::ptrdiff_t>(top, 0);
    const std::ptrdiff_t r1 = std::min<std::ptrdiff_t>(top + static_cast<std::ptrdiff_t>(ph), static_cast<std::ptrdiff_t>(height));
    const std::ptrdiff_t c0 = std::max<std::ptrdiff_t>(left, 0);
    const std::ptrdiff_t c1 = std::min<std::ptrdiff_t>(left + static_cast<std::ptrdiff_t>(pw), static_cast<std::ptrdiff_t>(width));
    for (std::ptrdiff_t r = r0; r < r1; ++r) {
        for (std::ptrdiff_t c = c0; c < c1; ++c) {
            image[static_cast<std::size_t>(r) * width + static_cast<std::size_t>(c)] =
                patch.at(static_cast<std::size_t>(r - top), static_cast<std::size_t>(c - left));
        }
    }
}

Tensor apply_occluder(const Tensor& image, const Tensor& patch, Location center) {
    if (image.rank() != 2 || patch.rank() != 2) throw ShapeError("apply_occluder expects [H,W] image and patch");
    Tensor out = image;
    apply_occluder_inplace(out.data(), image.dim(0), image.dim(1), patch, center);
    return out;
}

Predictor model_predictor(const Model& model) {
    return [&model](const Tensor& batch) { return model.predict(batch); };
}

BinaryOcclusionMap binary_occlusion_map(const Predictor& predict, const LabeledImage& image,
                                        const OccluderSpec& spec, Rng& rng, const ScanOptions& options) {
    const Tensor& px = image.pixels;
    if (px.rank() != 2) throw ShapeError("occlusion map needs a [H,W] image");
    if (options.stride == 0 || options.batch == 0) throw ParameterError("scan stride and batch must be positive");
    const std::size_t h = px.dim(0), w = px.dim(1);
    const std::size_t plane = h * w;

    if (predict(px.reshaped({1, h, w, 1})).at(0) != image.label) {
        throw PreconditionError("image '" + image.id + "' is misclassified without an occluder");
    }
    const Tensor patch = make_occluder(spec, rng);

    std::vector<Location> scan;
    for (std::size_t r = 0; r < h; r += options.stride) {
        for (std::size_t c = 0; c < w; c += options.stride) scan.push_back({r, c});
    }
    std::vector<char> wrong(scan.size(), 0);
    parallel_for(scan.size(), options.workers, [&](std::size_t begin, std::size_t end) {
        for (std::size_t start = begin; start < end; start += options.batch) {
            const std::size_t count = std::min(options.batch, end - start);
            Tensor batch({count, h, w, 1});
            for (std::size_t k = 0; k < count; ++k) {
                std::span<double> slot = batch.data().subspan(k * plane, plane);
                std::copy(px.data().begin(), px.data().end(), slot.begin());
                apply_occluder_inplace(slot, h, w, patch, scan[start + k]);
            }
            const std::vector<std::size_t> pred = predict(batch);
            for (std::size_t k = 0; k < count; ++k) wrong[start + k] = pred[k] != image.label;
        }
    });

    BinaryOcclusionMap out{Tensor({h, w}), image.id, spec.height, spec.width};
    for (std::size_t s = 0; s < scan.size(); ++s) {
        if (!wrong[s]) continue;
        for (std::size_t r = scan[s].row; r < std::min(h, scan[s].row + options.stride); ++r) {
            for (std::size_t c = scan[s].col; c < std::min(w, scan[s].col + options.stride); ++c) out.grid.at(r, c) = 1.0;
        }
    }
    return out;
}

BinaryOcclusionMap binary_occlusion_map(const Model& model, const LabeledImage& image, const OccluderSpec& spec,
                                        Rng& rng, const ScanOptions& options) {
    return binary_occlusion_map(model_predictor(model), image, spec, rng, options);
}

OcclusionMap aggregate_map(std::span<const BinaryOcclusionMap> maps) {
    if (maps.empty()) throw AggregationError("cannot aggregate an empty list of maps");
    const BinaryOcclusionMap& first = maps.front();
    OcclusionMap out{Tensor(first.grid.shape()), maps.size(), first.occluder_h, first.occluder_w};
    for (const BinaryOcclusionMap& m : maps) {
        if (m.grid.shape() != first.grid.shape() || m.occluder_h != first.occluder_h ||
            m.occluder_w != first.occluder_w) {
            throw AggregationError("map '" + m.image_id + "' differs in grid or occluder shape");
        }
        for (std::size_t i = 0; i < out.grid.size(); ++i) out.grid[i] += m.grid[i];
    }
    const double n = static_cast<double>(maps.size());
    for (double& v : out.grid.data()) v /= n;
    return out;
}

PlacementDistribution placement_distribution(const Tensor& grid, double temperature) {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw ParameterError(fmt::format("temperature must be positive, got {}", temperature));
    }
    if (grid.rank() != 2 || grid.empty()) throw ShapeError("placement distribution needs a non-empty [H,W] map");
    const double peak = *std::max_element(grid.data().begin(), grid.data().end());
    PlacementDistribution dist{Tensor(grid.shape()), temperature, {}};
    double total = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        dist.probs[i] = std::exp((grid[i] - peak) / temperature);
        total += dist.probs[i];
    }
    dist.cdf.resize(grid.size());
    double running = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        dist.probs[i] /= total;
        running += dist.probs[i];
        dist.cdf[i] = running;
    }
    return dist;
}

PlacementDistribution placement_distribution(const OcclusionMap& map, double temperature) {
    return placement_distribution(map.grid, temperature);
}

Location sample_location(const PlacementDistribution& dist, Rng& rng) {
    const std::size_t w = dist.probs.dim(1);
    const double u = rng.uniform() * dist.cdf.back();
    auto it = std::upper_bound(dist.cdf.begin(), dist.cdf.end(), u);
    std::size_t idx = static_cast<std::size_t>(it - dist.cdf.begin());
    if (idx >= dist.cdf.size()) idx = dist.cdf.size() - 1;
    // Skip zero-probability cells that share the cumulative value.
    while (dist.probs[idx] == 0.0 && idx + 1 < dist.cdf.size()) ++idx;
    return {idx / w, idx % w};
}

Location sample_normal_location(std::size_t height, std::size_t width, Rng& rng) {
    auto axis = [&rng](std::size_t n) {
        const double centre = (static_cast<double>(n) - 1.0) / 2.0;
        const double sd = static_cast<double>(n) / 4.0;
        for (;;) {
            const double v = std::round(rng.normal(centre, sd));
            if (v >= 0.0 && v < static_cast<double>(n)) return static_cast<std::size_t>(v);
        }
    };
    const std::size_t row = axis(height);
    const std::size_t col = axis(width);
    return {row, col};
}

Tensor augment_batch(const Tensor& images, const PlacementMode& placement, const OccluderSpec& spec, Rng& rng) {
    if (images.rank() != 3 && !(images.rank() == 4 && images.dim(3) == 1)) {
        throw AugmentationError("augment_batch expects [N,H,W] or [N,H,W,1] images, got " +
                                shape_to_string(images.shape()));
    }
    const std::size_t n = images.dim(0), h = images.dim(1), w = images.dim(2);
    if (const auto* dist = std::get_if<PlacementDistribution>(&placement)) {
        if (dist->probs.shape() != Shape{h, w}) {
            throw AugmentationError("placement distribution " + shape_to_string(dist->probs.shape()) +
                                    " does not match images " + shape_to_string({h, w}));
        }
    }
    Tensor out = images;
    for (std::size_t i = 0; i < n; ++i) {
        const Location loc = std::holds_alternative<PlacementDistribution>(placement)
                                 ? sample_location(std::get<PlacementDistribution>(placement), rng)
                                 : sample_normal_location(h, w, rng);
        const Tensor patch = make_occluder(spec, rng);
        apply_occluder_inplace(out.data().subspan(i * h * w, h * w), h, w, patch, loc);
    }
    return out;
}

std::pair<double, double> top_decile_centroid(const Tensor& grid) {
    if (grid.rank() != 2 || grid.empty()) throw ShapeError("centroid needs a non-empty [H,W] grid");
    const std::size_t w = grid.dim(1);
    std::vector<std::size_t> order(grid.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return grid[a] > grid[b]; });
    const std::size_t take = std::max<std::size_t>(1, (grid.size() + 9) / 10);
    double row = 0.0, col = 0.0;
    for (std::size_t k = 0; k < take; ++k) {
        row += static_cast<double>(order[k] / w);
        col += static_cast<double>(order[k] % w);
    }
    return {row / static_cast<double>(take), col / static_cast<double>(take)};
}

std::string map_csv(const Tensor& grid) {
    std::string out;
    for (std::size_t r = 0; r < grid.dim(0); ++r) {
        for (std::size_t c = 0; c < grid.dim(1); ++c) {
            if (c) out += ',';
            out += fmt::format("{:.6f}", grid.at(r, c));
        }
        out += '\n';
    }
    return out;
}

void save_map_csv(const Tensor& grid, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << map_csv(grid);
}

Tensor load_map_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open map " + path.string());
    std::vector<double> values;
    std::size_t rows = 0, cols = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        std::stringstream row(line);
        std::string cell;
        std::size_t count = 0;
        while (std::getline(row, cell, ',')) {
            try {
                std::size_t used = 0;
                const double v = std::stod(cell, &used);
                if (!(v >= 0.0 && v <= 1.0)) throw FormatError("");
                values.push_back(v);
            } catch (const std::exception&) {
                throw FormatError(fmt::format("{}:{}: bad map cell '{}'", path.string(), rows + 1, cell));
            }
            ++count;
        }
        if (rows == 0) cols = count;
        if (count != cols) throw FormatError(fmt::format("{}:{}: ragged map row", path.string(), rows + 1));
        ++rows;
    }
    if (rows == 0 || cols == 0) throw FormatError(path.string() + ": empty map");
    return Tensor({rows, cols}, std::move(values));
}

void save_map_pgm(const Tensor& grid, const std::filesystem::path& path) { save_pgm(grid, path); }

}  // namespace otl
