#include "otl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <fmt/format.h>

#include "otl/errors.hpp"
#include "otl/rng.hpp"

namespace otl {

using nlohmann::json;

std::size_t Dataset::height() const {
    if (images.empty()) throw StateError("empty dataset has no image size");
    return images.front().pixels.dim(0);
}

std::size_t Dataset::width() const {
    if (images.empty()) throw StateError("empty dataset has no image size");
    return images.front().pixels.dim(1);
}

std::vector<std::size_t> Dataset::class_counts() const {
    std::vector<std::size_t> counts(class_count, 0);
    for (const LabeledImage& img : images) ++counts.at(img.label);
    return counts;
}

std::size_t Dataset::find(const std::string& id) const {
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i].id == id) return i;
    }
    throw KeyError("no image with id '" + id + "'");
}

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
    const std::size_t h = empty() ? 1 : height(), w = empty() ? 1 : width();
    Tensor out({indices.size(), h, w, 1});
    double* dst = out.data().data();
    for (std::size_t i : indices) {
        const Tensor& px = images.at(i).pixels;
        if (px.dim(0) != h || px.dim(1) != w) throw ShapeError("dataset images differ in size");
        dst = std::copy(px.data().begin(), px.data().end(), dst);
    }
    return out;
}

std::vector<std::size_t> Dataset::labels(std::span<const std::size_t> indices) const {
    std::vector<std::size_t> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(images.at(i).label);
    return out;
}

Tensor Dataset::all_pixels() const {
    std::vector<std::size_t> idx(images.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return batch(idx);
}

Dataset Dataset::classes(std::size_t first, std::size_t count) const {
    if (first + count > class_count) throw KeyError("class range outside dataset");
    Dataset out;
    out.class_count = count;
    out.split = split;
    if (!class_names.empty()) {
        out.class_names.assign(class_names.begin() + static_cast<std::ptrdiff_t>(first),
                               class_names.begin() + static_cast<std::ptrdiff_t>(first + count));
    }
    for (const LabeledImage& img : images) {
        if (img.label >= first && img.label < first + count) {
            out.images.push_back({img.pixels, img.label - first, img.id});
        }
    }
    return out;
}

void SyntheticSpec::validate() const {
    if (class_count < 1 || samples_per_class < 1) throw SpecError("synthetic spec needs classes and samples");
    if (height == 0 || width == 0) throw SpecError("synthetic image size must be positive");
    if (cue_region.height == 0 || cue_region.width == 0 || cue_region.top + cue_region.height > height ||
        cue_region.left + cue_region.width > width) {
        throw SpecError(fmt::format("cue_region [{}+{}, {}+{}] lies outside the {}x{} image", cue_region.top,
                                    cue_region.height, cue_region.left, cue_region.width, height, width));
    }
    if (!(cue_strength >= 0.0 && cue_strength <= 1.0)) throw SpecError("cue_strength must lie in [0,1]");
    if (!(background_noise_sigma >= 0.0)) throw SpecError("background_noise_sigma must be nonnegative");
    if (!(cell_flip_prob >= 0.0 && cell_flip_prob <= 0.5)) throw SpecError("cell_flip_prob must lie in [0,0.5]");
}

SyntheticSpec SyntheticSpec::from_json(const json& doc) {
    static const std::set<std::string> known{"class_count", "samples_per_class", "image_size",
                                             "cue_region", "cue_strength", "background_noise_sigma",
                                             "cell_flip_prob", "seed"};
    SyntheticSpec spec;
    if (!doc.is_object()) throw SpecError("synthetic spec must be an object");
    for (const auto& item : doc.items()) {
        if (!known.contains(item.key())) throw SpecError("synthetic spec: unknown key '" + item.key() + "'");
    }
    try {
        spec.class_count = doc.value("class_count", spec.class_count);
        spec.samples_per_class = doc.value("samples_per_class", spec.samples_per_class);
        if (doc.contains("image_size")) {
            const json& size = doc.at("image_size");
            spec.height = size.at(0).get<std::size_t>();
            spec.width = size.at(1).get<std::size_t>();
        }
        if (doc.contains("cue_region")) {
            const json& r = doc.at("cue_region");
            spec.cue_region = {r.at("top").get<std::size_t>(), r.at("left").get<std::size_t>(),
                               r.at("height").get<std::size_t>(), r.at("width").get<std::size_t>()};
        }
        spec.cue_strength = doc.value("cue_strength", spec.cue_strength);
        spec.background_noise_sigma = doc.value("background_noise_sigma", spec.background_noise_sigma);
        spec.cell_flip_prob = doc.value("cell_flip_prob", spec.cell_flip_prob);
        spec.seed = doc.value("seed", spec.seed);
    } catch (const json::exception& e) {
        throw SpecError(std::string("synthetic spec: ") + e.what());
    }
    spec.validate();
    return spec;
}

json SyntheticSpec::to_json() const {
    return {{"class_count", class_count},
            {"samples_per_class", samples_per_class},
            {"image_size", {height, width}},
            {"cue_region",
             {{"top", cue_region.top}, {"left", cue_region.left}, {"height", cue_region.height}, {"width", cue_region.width}}},
            {"cue_strength", cue_strength},
            {"background_noise_sigma", background_noise_sigma},
            {"cell_flip_prob", cell_flip_prob},
            {"seed", seed}};
}

namespace {

constexpr std::size_t kBackgroundGrid = 5;
constexpr std::size_t kCueCell = 2;

// Smooth shared texture: bilinear upsampling of a coarse random grid.
Tensor background_texture(std::size_t h, std::size_t w, Rng& rng) {
    std::vector<double> grid(kBackgroundGrid * kBackgroundGrid);
    for (double& g : grid) g = rng.uniform(0.3, 0.7);
    Tensor bg({h, w});
    const double sy = static_cast<double>(kBackgroundGrid - 1) / static_cast<double>(std::max<std::size_t>(h - 1, 1));
    const double sx = static_cast<double>(kBackgroundGrid - 1) / static_cast<double>(std::max<std::size_t>(w - 1, 1));
    for (std::size_t r = 0; r < h; ++r) {
        const double gy = static_cast<double>(r) * sy;
        const std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(gy), kBackgroundGrid - 2);
        const double fy = gy - static_cast<double>(y0);
        for (std::size_t c = 0; c < w; ++c) {
            const double gx = static_cast<double>(c) * sx;
            const std::size_t x0 = std::min<std::size_t>(static_cast<std::size_t>(gx), kBackgroundGrid - 2);
            const double fx = gx - static_cast<double>(x0);
            auto at = [&](std::size_t y, std::size_t x) { return grid[y * kBackgroundGrid + x]; };
            bg.at(r, c) = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                          fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
        }
    }
    return bg;
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const Rect& cue = spec.cue_region;
    const Tensor bg = background_texture(spec.height, spec.width, rng);

    // One +-1 pattern per class on a grid of kCueCell x kCueCell blocks.
    const std::size_t cells_y = (cue.height + kCueCell - 1) / kCueCell;
    const std::size_t cells_x = (cue.width + kCueCell - 1) / kCueCell;
    std::vector<std::vector<double>> templates(spec.class_count, std::vector<double>(cells_y * cells_x));
    for (auto& t : templates) {
        for (double& v : t) v = rng.bernoulli(0.5) ? 1.0 : -1.0;
    }

    Dataset ds;
    ds.class_count = spec.class_count;
    for (std::size_t c = 0; c < spec.class_count; ++c) ds.class_names.push_back(fmt::format("c{:03}", c));
    ds.images.reserve(spec.class_count * spec.samples_per_class);
    const double contrast = 0.5 * spec.cue_strength;
    for (std::size_t c = 0; c < spec.class_count; ++c) {
        for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
            Tensor px = bg;
            std::vector<double> pattern = templates[c];
            if (spec.cell_flip_prob > 0.0) {
                for (double& v : pattern) v = rng.bernoulli(spec.cell_flip_prob) ? -v : v;
            }
            for (std::size_t r = 0; r < cue.height; ++r) {
                for (std::size_t q = 0; q < cue.width; ++q) {
                    const double t = pattern[(r / kCueCell) * cells_x + q / kCueCell];
                    px.at(cue.top + r, cue.left + q) += contrast * t;
                }
            }
            for (double& v : px.data()) v = std::clamp(v + rng.normal(0.0, spec.background_noise_sigma), 0.0, 1.0);
            ds.images.push_back({std::move(px), c, fmt::format("c{:03}/{:04}", c, i)});
        }
    }
    return ds;
}

std::pair<Dataset, Dataset> split(const Dataset& dataset, double val_fraction, std::uint64_t seed) {
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw SplitError("val_fraction must lie in (0, 1)");
    std::vector<std::vector<std::size_t>> by_class(dataset.class_count);
    for (std::size_t i = 0; i < dataset.images.size(); ++i) by_class.at(dataset.images[i].label).push_back(i);

    std::vector<bool> to_val(dataset.images.size(), false);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& members = by_class[c];
        if (members.size() < 2) {
            throw SplitError(fmt::format("class {} has {} image(s); at least 2 are required", c, members.size()));
        }
        Rng rng = Rng::derive(seed, c);
        rng.shuffle(members);
        const auto wanted = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(members.size())));
        const std::size_t n_val = std::min(wanted, members.size() - 2);
        for (std::size_t k = 0; k < n_val; ++k) to_val[members[k]] = true;
    }

    Dataset train, val;
    for (Dataset* part : {&train, &val}) {
        part->class_count = dataset.class_count;
        part->class_names = dataset.class_names;
    }
    train.split = SplitTag::train;
    val.split = SplitTag::val;
    for (std::size_t i = 0; i < dataset.images.size(); ++i) {
        (to_val[i] ? val : train).images.push_back(dataset.images[i]);
    }
    return {std::move(train), std::move(val)};
}

BatchStream::BatchStream(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed)
    : size_(dataset_size), batch_size_(batch_size), seed_(seed) {
    if (dataset_size == 0) throw StateError("cannot batch an empty dataset");
    if (batch_size == 0) throw ParameterError("batch_size must be at least 1");
    reshuffle();
}

void BatchStream::reshuffle() {
    Rng rng = Rng::derive(seed_, epoch_);
    order_ = rng.permutation(size_);
    cursor_ = 0;
}

std::vector<std::size_t> BatchStream::next() {
    if (cursor_ >= size_) {
        ++epoch_;
        reshuffle();
    }
    const std::size_t end = std::min(size_, cursor_ + batch_size_);
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(end));
    cursor_ = end;
    return out;
}

Dataset load_directory(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw Error("not a directory: " + root.string());
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) names.push_back(entry.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    Dataset ds;
    ds.class_count = names.size();
    ds.class_names = names;
    for (std::size_t label = 0; label < names.size(); ++label) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(root / names[label])) {
            if (entry.is_regular_file() && entry.path().extension() == ".pgm") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const fs::path& f : files) {
            ds.images.push_back({load_pgm(f), label, names[label] + "/" + f.stem().string()});
        }
    }
    if (!ds.images.empty()) {
        for (const LabeledImage& img : ds.images) {
            if (img.pixels.shape() != ds.images.front().pixels.shape()) {
                throw ShapeError("images under " + root.string() + " differ in size (" + img.id + ")");
            }
        }
    }
    return ds;
}

void save_directory(const Dataset& dataset, const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    for (const LabeledImage& img : dataset.images) {
        const std::string& cls = dataset.class_names.at(img.label);
        const std::string stem = img.id.substr(img.id.find('/') == std::string::npos ? 0 : img.id.find('/') + 1);
        fs::create_directories(root / cls);
        save_pgm(img.pixels, root / cls / (stem + ".pgm"));
    }
}

}  // namespace otl
