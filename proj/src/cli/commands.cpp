#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "otl/checkpoint.hpp"
#include "otl/errors.hpp"
#include "otl/parallel.hpp"

namespace otl::cli {

using nlohmann::json;
namespace fs = std::filesystem;

BatchHook occlusion_hook(PlacementMode placement, OccluderSpec spec, double fraction) {
    return [placement = std::move(placement), spec, fraction](Tensor& batch, Rng& rng) {
        const std::size_t m = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(batch.dim(0))));
        if (m == 0) return;
        const Tensor head = augment_batch(batch.slice_rows(0, m), placement, spec, rng);
        std::copy(head.data().begin(), head.data().end(), batch.data().begin());
    };
}

MapSubset correctly_classified(const Model& model, const Dataset& data, std::size_t max_images) {
    MapSubset subset;
    constexpr std::size_t kChunk = 256;
    for (std::size_t lo = 0; lo < data.size(); lo += kChunk) {
        std::vector<std::size_t> idx(std::min(kChunk, data.size() - lo));
        for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = lo + k;
        const std::vector<std::size_t> pred = model.predict(data.batch(idx));
        for (std::size_t k = 0; k < idx.size(); ++k) {
            if (pred[k] != data.images[idx[k]].label) {
                ++subset.excluded;
            } else if (subset.indices.size() < max_images) {
                subset.indices.push_back(idx[k]);
            }
        }
    }
    return subset;
}

OcclusionMap occlusion_map(const Model& model, const Dataset& data, const std::vector<std::size_t>& indices,
                           const OccluderSpec& spec, std::uint64_t seed, const ScanOptions& options) {
    std::vector<BinaryOcclusionMap> maps(indices.size());
    ScanOptions inner = options;
    inner.workers = 1;
    const Predictor predict = model_predictor(model);
    parallel_for(indices.size(), options.workers, [&](std::size_t begin, std::size_t end) {
        for (std::size_t k = begin; k < end; ++k) {
            Rng rng = Rng::derive(seed, indices[k]);
            maps[k] = binary_occlusion_map(predict, data.images[indices[k]], spec, rng, inner);
        }
    });
    return aggregate_map(maps);
}

namespace {

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("failed writing " + path.string());
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

ExperimentConfig config_of(const CommandArgs& args) {
    if (args.config.empty()) throw ConfigError("--config is required for this command");
    return load_config(args.config, args.seed);
}

Checkpoint checkpoint_of(const CommandArgs& args, const Dataset& data) {
    if (args.checkpoint.empty()) throw ConfigError("--checkpoint is required for this command");
    if (!fs::exists(args.checkpoint)) throw ConfigError("checkpoint '" + args.checkpoint.string() + "' does not exist");
    Checkpoint ckpt = load_checkpoint(args.checkpoint);
    const Shape expected{data.height(), data.width(), 1};
    if (ckpt.model.sample_shape() != expected) {
        throw ConfigError(fmt::format("checkpoint expects {} images but the dataset has {}",
                                      shape_to_string(ckpt.model.sample_shape()), shape_to_string(expected)));
    }
    return ckpt;
}

void prepare_out(const fs::path& out) {
    if (out.empty()) throw ConfigError("--out is required");
    fs::create_directories(out);
}

std::string step_log_csv(const std::vector<StepRecord>& log) {
    std::string text = "step,loss,accuracy\n";
    for (const StepRecord& r : log) text += fmt::format("{},{},{}\n", r.step, r.loss, r.accuracy);
    return text;
}

std::string dump(const json& doc) { return doc.dump(2) + "\n"; }

}  // namespace

void cmd_train_classifier(const CommandArgs& args, std::ostream& log) {
    const ExperimentConfig config = config_of(args);
    const ExperimentData data = prepare_data(config);
    ModelConfig model_config = config.model ? *config.model
                                            : ModelConfig::desk_default(data.train.height(), data.train.width(),
                                                                        data.train.class_count);
    Model probe = [&] {
        try {
            return Model(model_config);
        } catch (const ShapeError& e) {
            throw ConfigError(std::string("model: ") + e.what());
        }
    }();
    if (probe.sample_shape() != Shape{data.train.height(), data.train.width(), 1} ||
        probe.class_count() != data.train.class_count) {
        throw ConfigError("model input/output does not match the dataset's image size and class count");
    }
    prepare_out(args.out);

    Rng init = Rng::derive(config.seed, "init");
    Model model = Model::initialized(model_config, init);
    Rng rng = Rng::derive(config.seed, "train");
    const std::vector<StepRecord> history = train_classifier(model, data.train, config.train, rng);
    save_checkpoint(args.out / "checkpoint.otl", model, rng.state(), {config.train.steps, "classifier"});
    write_file(args.out / "train_log.csv", step_log_csv(history));

    const double train_acc = classification_accuracy(model, data.train);
    const double val_acc = classification_accuracy(model, data.val);
    write_file(args.out / "metrics.json", dump({{"train_accuracy", train_acc}, {"val_accuracy", val_acc}}));
    log << fmt::format("trained {} steps: train accuracy {:.2f}%, val accuracy {:.2f}%\n", config.train.steps,
                       100.0 * train_acc, 100.0 * val_acc);
}

void cmd_occlusion_map(const CommandArgs& args, std::ostream& log) {
    const ExperimentConfig config = config_of(args);
    const ExperimentData data = prepare_data(config);
    const Checkpoint ckpt = checkpoint_of(args, data.all);
    const Dataset& images = config.map.split == SplitTag::val ? data.val : data.train;
    const MapSubset subset = correctly_classified(ckpt.model, images, config.map.max_images);
    if (subset.indices.empty()) throw ProtocolError("no image is classified correctly without an occluder");
    prepare_out(args.out);

    const ScanOptions scan{config.map.stride, config.map.batch, args.workers};
    const OcclusionMap map = occlusion_map(ckpt.model, images, subset.indices, data.occluder,
                                           Rng::derive(config.seed, "map").next_u64(), scan);
    save_map_csv(map.grid, args.out / "map.csv");
    save_map_pgm(map.grid, args.out / "map.pgm");
    const MapStats stats = map_accuracy_stats(map);
    const auto [row, col] = top_decile_centroid(map.grid);
    write_file(args.out / "map_stats.json",
               dump({{"mean_accuracy", stats.mean_accuracy},
                     {"std", stats.std},
                     {"std_over", "cells"},
                     {"images_used", map.sample_count},
                     {"images_excluded", subset.excluded},
                     {"occluder", {{"height", map.occluder_h}, {"width", map.occluder_w}}},
                     {"stride", config.map.stride},
                     {"top_decile_centroid", {row, col}}}));
    log << fmt::format("map over {} images ({} misclassified excluded): mean accuracy {:.2f}% +- {:.2f}\n",
                       map.sample_count, subset.excluded, 100.0 * stats.mean_accuracy, 100.0 * stats.std);
}

void cmd_train_augmented(const CommandArgs& args, std::ostream& log) {
    const ExperimentConfig config = config_of(args);
    const ExperimentData data = prepare_data(config);
    const std::string mode = args.mode.empty() ? config.augment.mode : args.mode;
    if (mode != "P" && mode != "R") throw ConfigError("--mode for train-augmented must be P or R");
    Checkpoint ckpt = checkpoint_of(args, data.all);

    PlacementMode placement = NormalPlacement{};
    if (mode == "P") {
        const fs::path map_path = args.map.empty() ? config.augment.map : args.map;
        if (map_path.empty()) throw ConfigError("mode P needs an occlusion map (--map or augment.map)");
        if (!fs::exists(map_path)) throw ConfigError("map '" + map_path.string() + "' does not exist");
        const Tensor grid = load_map_csv(map_path);
        if (grid.shape() != Shape{data.all.height(), data.all.width()}) {
            throw ConfigError(fmt::format("map {} does not match the {}x{} images the occluder is placed on",
                                          shape_to_string(grid.shape()), data.all.height(), data.all.width()));
        }
        placement = placement_distribution(grid, config.temperature);
    }
    prepare_out(args.out);

    Rng rng = Rng::derive(config.seed, "augment");
    const BatchHook hook = occlusion_hook(placement, data.occluder, config.augment.occluded_fraction);
    const std::vector<StepRecord> history =
        train_classifier(ckpt.model, data.train, config.augment.schedule, rng, hook);
    const TrainingMeta meta{ckpt.meta.steps + config.augment.schedule.steps, "augmented-" + mode};
    save_checkpoint(args.out / "checkpoint.otl", ckpt.model, rng.state(), meta);
    write_file(args.out / "train_log.csv", step_log_csv(history));
    log << fmt::format("augmented ({}) fine-tune: {} steps, val accuracy {:.2f}%\n", mode,
                       config.augment.schedule.steps, 100.0 * classification_accuracy(ckpt.model, data.val));
}

void cmd_finetune_triplet(const CommandArgs& args, std::ostream& log) {
    const ExperimentConfig config = config_of(args);
    const ExperimentData data = prepare_data(config);
    LossConfig loss = config.loss;
    if (!args.mode.empty()) loss.mode = parse_triplet_mode(args.mode);
    Checkpoint ckpt = checkpoint_of(args, data.all);
    if (ckpt.model.layer_count() < 2) throw ConfigError("checkpoint has no bottleneck layer to fine-tune");
    prepare_out(args.out);

    Rng rng = Rng::derive(config.seed, "finetune");
    const std::vector<FinetuneRecord> history = finetune(ckpt.model, data.train, loss, config.finetune, rng);
    const TrainingMeta meta{ckpt.meta.steps + config.finetune.steps, "triplet-" + to_string(loss.mode)};
    save_checkpoint(args.out / "checkpoint.otl", ckpt.model, rng.state(), meta);
    write_file(args.out / "train_log.csv", finetune_log_csv(history));
    log << fmt::format("{} triplet fine-tune: {} steps\n", to_string(loss.mode), config.finetune.steps);
}

void cmd_evaluate(const CommandArgs& args, std::ostream& log) {
    const ExperimentConfig config = config_of(args);
    const ExperimentData data = prepare_data(config);
    const Checkpoint ckpt = checkpoint_of(args, data.all);
    const fs::path pairs_path = args.pairs.empty() ? config.eval.pairs : args.pairs;
    std::vector<PairSpec> pairs;
    if (!pairs_path.empty()) {
        if (!fs::exists(pairs_path)) throw ConfigError("pairs file '" + pairs_path.string() + "' does not exist");
        pairs = read_pairs_csv(pairs_path);
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            for (const std::string* id : {&pairs[i].id_a, &pairs[i].id_b}) {
                try {
                    data.all.find(*id);
                } catch (const KeyError&) {
                    throw FormatError(fmt::format("{}: pair {}: unknown image id '{}'", pairs_path.string(), i + 1, *id));
                }
            }
        }
    } else {
        Rng rng = Rng::derive(config.seed, "pairs");
        pairs = make_verification_pairs(data.verify, config.eval.k, config.eval.pairs_per_fold, rng);
    }
    if (pairs.size() < config.eval.k) {
        throw ProtocolError(fmt::format("{} pairs cannot fill {} folds", pairs.size(), config.eval.k));
    }
    prepare_out(args.out);

    const std::vector<ScoredPair> scored = score_pairs(ckpt.model, data.all, pairs, args.workers);
    const EvalReport report = evaluate_scores(scored, config.eval.k);
    const json doc = to_json(report);
    validate_eval_report(doc);
    write_file(args.out / "pairs.csv", pairs_csv(pairs));
    write_file(args.out / "roc.csv", roc_csv(roc(scored)));
    write_file(args.out / "kfold.json", dump(doc.at("kfold")));
    write_file(args.out / "report.json", dump(doc));
    log << fmt::format("{}-fold accuracy {:.2f}% +- {:.2f}, AUC {:.4f}, decidability {}\n", config.eval.k,
                       100.0 * report.kfold.mean, 100.0 * report.kfold.std, report.auc,
                       report.decidability ? fmt::format("{:.4f}", *report.decidability) : "undefined");
}

void cmd_report(const CommandArgs& args, std::ostream& log) {
    if (args.from.empty()) throw ConfigError("report needs at least one --from <run dir>");
    std::vector<std::pair<std::string, json>> rows;
    for (const fs::path& dir : args.from) {
        json row = json::object();
        if (fs::exists(dir / "map_stats.json")) row["map_stats"] = read_json(dir / "map_stats.json");
        if (fs::exists(dir / "report.json")) {
            row["eval"] = read_json(dir / "report.json");
            validate_eval_report(row["eval"]);
        }
        if (row.empty()) throw ConfigError("'" + dir.string() + "' holds neither map_stats.json nor report.json");
        fs::path name = dir.lexically_normal();
        if (name.filename().empty()) name = name.parent_path();
        rows.emplace_back(name.filename().string(), std::move(row));
    }
    prepare_out(args.out);
    const std::string table = report_table(rows);
    json combined = json::array();
    for (const auto& [name, row] : rows) combined.push_back({{"name", name}, {"results", row}});
    write_file(args.out / "report.txt", table);
    write_file(args.out / "report.json", dump({{"rows", combined}}));
    log << table;
}

}  // namespace otl::cli
