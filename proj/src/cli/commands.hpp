#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "otl/cli.hpp"

namespace otl::cli {

struct CommandArgs {
    std::filesystem::path config;
    std::optional<std::uint64_t> seed;
    std::filesystem::path out;
    std::size_t workers = 1;
    std::filesystem::path checkpoint;
    std::filesystem::path map;
    std::string mode;
    std::filesystem::path pairs;
    std::vector<std::filesystem::path> from;
};

void cmd_train_classifier(const CommandArgs& args, std::ostream& log);
void cmd_occlusion_map(const CommandArgs& args, std::ostream& log);
void cmd_train_augmented(const CommandArgs& args, std::ostream& log);
void cmd_finetune_triplet(const CommandArgs& args, std::ostream& log);
void cmd_evaluate(const CommandArgs& args, std::ostream& log);
void cmd_report(const CommandArgs& args, std::ostream& log);

}  // namespace otl::cli
