#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "commands.hpp"
#include "otl/errors.hpp"

namespace otl::cli {

namespace {

constexpr const char* kExitCodes =
    "Exit codes:\n"
    "  0  success\n"
    "  1  unexpected failure (I/O, internal error)\n"
    "  2  invalid configuration or input file (nothing is written)\n"
    "  3  numeric divergence (non-finite loss or parameters)\n"
    "  4  protocol violation (e.g. no correctly classified image, too few pairs)\n";

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Occlusion-aware training and triplet fine-tuning experiments", "otl"};
    app.footer(kExitCodes);
    app.require_subcommand(1);

    CommandArgs cmd;
    std::uint64_t seed = 0;
    app.add_option("--config", cmd.config, "Experiment config (JSON)");
    auto* seed_opt = app.add_option("--seed", seed, "Seed; overrides the config's seed");
    app.add_option("--out", cmd.out, "Output directory for all artifacts");
    app.add_option("--workers", cmd.workers, "Worker threads for map scans and pair scoring")
        ->check(CLI::PositiveNumber);

    auto add = [&](const char* name, const char* help) {
        auto* sub = app.add_subcommand(name, help);
        sub->fallthrough();
        return sub;
    };
    auto* train = add("train-classifier", "Train the classifier; writes checkpoint.otl, train_log.csv, metrics.json");
    auto* map = add("occlusion-map", "Aggregate occlusion map; writes map.csv, map.pgm, map_stats.json");
    auto* augmented = add("train-augmented", "Continue training on occluded batches; writes checkpoint.otl, train_log.csv");
    auto* triplet = add("finetune-triplet", "Triplet fine-tune of the bottleneck; writes checkpoint.otl, train_log.csv");
    auto* evaluate = add("evaluate", "Verification evaluation; writes pairs.csv, roc.csv, kfold.json, report.json");
    auto* report = add("report", "Tabulate run directories; writes report.txt, report.json");

    for (auto* sub : {map, augmented, triplet, evaluate}) {
        sub->add_option("--checkpoint", cmd.checkpoint, "Input checkpoint")->required();
    }
    augmented->add_option("--map", cmd.map, "Occlusion map CSV for mode P");
    augmented->add_option("--mode", cmd.mode, "P (map-guided placement) or R (normal placement)")
        ->check(CLI::IsMember({"P", "R"}));
    triplet->add_option("--mode", cmd.mode, "standard or batch")->check(CLI::IsMember({"standard", "batch"}));
    evaluate->add_option("--pairs", cmd.pairs, "Pairs CSV (id_a,id_b,is_match); generated when absent");
    report->add_option("--from", cmd.from, "Run directory (repeatable)")->required();

    std::vector<std::string> argv(args.rbegin(), args.rend());
    try {
        app.parse(argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            if (app.get_subcommands().empty()) return kOk;
            out << app.get_subcommands().front()->help();
            return kOk;
        }
        err << "error: " << e.what() << "\n";
        return kConfig;
    }
    if (*seed_opt) cmd.seed = seed;

    try {
        if (*train) cmd_train_classifier(cmd, out);
        if (*map) cmd_occlusion_map(cmd, out);
        if (*augmented) cmd_train_augmented(cmd, out);
        if (*triplet) cmd_finetune_triplet(cmd, out);
        if (*evaluate) cmd_evaluate(cmd, out);
        if (*report) cmd_report(cmd, out);
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return kNumeric;
    } catch (const ProtocolError& e) {
        err << "protocol error: " << e.what() << "\n";
        return kProtocol;
    } catch (const PreconditionError& e) {
        err << "protocol error: " << e.what() << "\n";
        return kProtocol;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const FormatError& e) {
        err << "input error: " << e.what() << "\n";
        return kConfig;
    } catch (const SplitError& e) {
        err << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kUnexpected;
    }
    return kOk;
}

int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args, std::cout, std::cerr);
}

}  // namespace otl::cli
