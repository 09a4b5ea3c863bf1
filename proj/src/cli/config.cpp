#include <fstream>
#include <set>

#include <fmt/format.h>

#include "otl/cli.hpp"
#include "otl/errors.hpp"
#include "otl/rng.hpp"

namespace otl::cli {

using nlohmann::json;

namespace {

void allow_keys(const json& obj, const std::string& where, std::initializer_list<const char*> keys) {
    if (!obj.is_object()) throw ConfigError(where + " must be an object");
    const std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& item : obj.items()) {
        if (!allowed.contains(item.key())) throw ConfigError(fmt::format("{}: unknown key '{}'", where, item.key()));
    }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
    return obj.contains(key) ? obj.at(key).get<T>() : fallback;
}

Schedule parse_schedule(const json& doc, const std::string& where, Schedule s) {
    allow_keys(doc, where, {"steps", "lr", "momentum", "batch_size"});
    s.steps = get_or(doc, "steps", s.steps);
    s.lr = get_or(doc, "lr", s.lr);
    s.momentum = get_or(doc, "momentum", s.momentum);
    s.batch_size = get_or(doc, "batch_size", s.batch_size);
    if (!(s.lr > 0.0) || !(s.momentum >= 0.0 && s.momentum < 1.0) || s.batch_size == 0) {
        throw ConfigError(where + ": need lr > 0, 0 <= momentum < 1, batch_size >= 1");
    }
    return s;
}

OccluderSize parse_size(const std::string& name) {
    if (name == "small") return OccluderSize::small;
    if (name == "medium") return OccluderSize::medium;
    if (name == "large") return OccluderSize::large;
    throw ConfigError("occluder size must be small, medium or large, got '" + name + "'");
}

std::filesystem::path existing(const std::filesystem::path& base, const std::string& value, const char* what) {
    std::filesystem::path p(value);
    if (p.is_relative()) p = base / p;
    if (!std::filesystem::exists(p)) throw ConfigError(fmt::format("{} '{}' does not exist", what, p.string()));
    return p;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& doc, const std::filesystem::path& base_dir,
                                             std::optional<std::uint64_t> seed_override) {
    ExperimentConfig c;
    try {
        allow_keys(doc, "config", {"seed", "dataset", "train_classes", "val_fraction", "model", "train", "occluder",
                                   "temperature", "map", "augment", "loss", "finetune", "eval"});
        if (seed_override) {
            c.seed = *seed_override;
        } else if (doc.contains("seed")) {
            c.seed = doc.at("seed").get<std::uint64_t>();
        } else {
            throw ConfigError("config: 'seed' is mandatory (set it in the file or pass --seed)");
        }

        const json dataset = doc.value("dataset", json{{"synthetic", json::object()}});
        allow_keys(dataset, "dataset", {"synthetic", "path"});
        if (dataset.contains("synthetic") == dataset.contains("path")) {
            throw ConfigError("dataset: give exactly one of 'synthetic' or 'path'");
        }
        if (dataset.contains("synthetic")) {
            json spec = dataset.at("synthetic");
            if (spec.is_object() && !spec.contains("seed")) spec["seed"] = c.seed;
            c.synthetic = SyntheticSpec::from_json(spec);
        } else {
            c.dataset_path = existing(base_dir, dataset.at("path").get<std::string>(), "dataset path");
        }

        c.train_classes = get_or(doc, "train_classes", c.train_classes);
        c.val_fraction = get_or(doc, "val_fraction", c.val_fraction);
        if (!(c.val_fraction > 0.0 && c.val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
        if (c.synthetic && c.train_classes > c.synthetic->class_count) {
            throw ConfigError("train_classes exceeds the dataset's class count");
        }
        if (doc.contains("model")) c.model = ModelConfig::from_json(doc.at("model"));
        if (doc.contains("train")) c.train = parse_schedule(doc.at("train"), "train", c.train);

        if (doc.contains("occluder")) {
            json occ = doc.at("occluder");
            if (occ.is_object() && occ.contains("size")) {
                c.occluder_size = parse_size(occ.at("size").get<std::string>());
                occ.erase("size");
                // Height and width come from the preset once the image size is known.
                occ["height"] = 1;
                occ["width"] = 1;
            }
            c.occluder = OccluderSpec::from_json(occ);
        }
        c.temperature = c.occluder_size ? default_temperature(*c.occluder_size) : c.temperature;
        c.temperature = get_or(doc, "temperature", c.temperature);
        if (!(c.temperature > 0.0)) throw ConfigError("temperature must be positive");

        if (doc.contains("map")) {
            const json& m = doc.at("map");
            allow_keys(m, "map", {"stride", "batch", "max_images", "split"});
            c.map.stride = get_or(m, "stride", c.map.stride);
            c.map.batch = get_or(m, "batch", c.map.batch);
            c.map.max_images = get_or(m, "max_images", c.map.max_images);
            const std::string split_name = get_or<std::string>(m, "split", "val");
            if (split_name != "val" && split_name != "train") throw ConfigError("map.split must be train or val");
            c.map.split = split_name == "val" ? SplitTag::val : SplitTag::train;
            if (c.map.stride == 0 || c.map.batch == 0 || c.map.max_images == 0) {
                throw ConfigError("map: stride, batch and max_images must be positive");
            }
        }

        if (doc.contains("augment")) {
            const json& a = doc.at("augment");
            allow_keys(a, "augment",
                       {"mode", "steps", "lr", "momentum", "batch_size", "occluded_fraction", "map"});
            c.augment.mode = get_or<std::string>(a, "mode", c.augment.mode);
            json sched = json::object();
            for (const char* key : {"steps", "lr", "momentum", "batch_size"}) {
                if (a.contains(key)) sched[key] = a.at(key);
            }
            c.augment.schedule = parse_schedule(sched, "augment", c.augment.schedule);
            c.augment.occluded_fraction = get_or(a, "occluded_fraction", c.augment.occluded_fraction);
            if (!(c.augment.occluded_fraction >= 0.0 && c.augment.occluded_fraction <= 1.0)) {
                throw ConfigError("augment.occluded_fraction must lie in [0, 1]");
            }
            if (a.contains("map")) c.augment.map = existing(base_dir, a.at("map").get<std::string>(), "augment.map");
        }
        if (c.augment.mode != "P" && c.augment.mode != "R") throw ConfigError("augment.mode must be P or R");

        if (doc.contains("loss")) c.loss = LossConfig::from_json(doc.at("loss"));
        if (doc.contains("finetune")) {
            const json& f = doc.at("finetune");
            allow_keys(f, "finetune", {"steps", "lr", "momentum"});
            c.finetune.steps = get_or(f, "steps", c.finetune.steps);
            c.finetune.lr = get_or(f, "lr", c.finetune.lr);
            c.finetune.momentum = get_or(f, "momentum", c.finetune.momentum);
            if (!(c.finetune.lr > 0.0) || !(c.finetune.momentum >= 0.0 && c.finetune.momentum < 1.0)) {
                throw ConfigError("finetune: need lr > 0 and 0 <= momentum < 1");
            }
        }

        if (doc.contains("eval")) {
            const json& e = doc.at("eval");
            allow_keys(e, "eval", {"pairs", "k", "pairs_per_fold"});
            if (e.contains("pairs")) c.eval.pairs = existing(base_dir, e.at("pairs").get<std::string>(), "eval.pairs");
            c.eval.k = get_or(e, "k", c.eval.k);
            c.eval.pairs_per_fold = get_or(e, "pairs_per_fold", c.eval.pairs_per_fold);
            if (c.eval.k < 2 || c.eval.pairs_per_fold == 0) throw ConfigError("eval: need k >= 2 and pairs_per_fold >= 1");
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
    }
    return ExperimentConfig::from_json(doc, path.parent_path(), seed_override);
}

ExperimentData prepare_data(const ExperimentConfig& config) {
    Dataset all = config.synthetic ? generate_synthetic(*config.synthetic) : load_directory(config.dataset_path);
    const std::size_t train_classes = config.train_classes == 0 ? all.class_count : config.train_classes;
    if (train_classes > all.class_count || train_classes < 2) {
        throw ConfigError(fmt::format("train_classes {} invalid for {} classes", train_classes, all.class_count));
    }
    ExperimentData data;
    auto [train, val] = split(all.classes(0, train_classes), config.val_fraction,
                              Rng::derive(config.seed, "split").next_u64());
    data.train = std::move(train);
    data.val = std::move(val);
    data.verify = train_classes < all.class_count ? all.classes(train_classes, all.class_count - train_classes)
                                                   : data.val;
    data.all = std::move(all);
    data.occluder = config.occluder;
    if (config.occluder_size) {
        const OccluderSpec scaled = scaled_occluder(*config.occluder_size, data.all.height(), data.all.width());
        data.occluder.height = scaled.height;
        data.occluder.width = scaled.width;
    }
    if (data.occluder.height > data.all.height() || data.occluder.width > data.all.width()) {
        throw ConfigError("occluder is larger than the images");
    }
    return data;
}

}  // namespace otl::cli
