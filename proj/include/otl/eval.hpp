#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "otl/dataset.hpp"
#include "otl/model.hpp"
#include "otl/occlusion.hpp"
#include "otl/rng.hpp"

namespace otl {

struct PairSpec {
    std::string id_a;
    std::string id_b;
    bool is_match = false;
};

struct ScoredPair {
    std::string id_a;
    std::string id_b;
    double score = 0.0;  // cosine similarity of the two embeddings
    bool is_match = false;
};

// Scores are cos(embed(a), embed(b)); ids resolve against data. Embedding
// is parallelised over images with `workers` threads.
std::vector<ScoredPair> score_pairs(const Model& model, const Dataset& data, std::span<const PairSpec> pairs,
                                    std::size_t workers = 1);

struct RocPoint {
    double threshold = 0.0;  // accept when score >= threshold
    double far = 0.0;
    double tar = 0.0;
};

struct RocCurve {
    std::vector<RocPoint> points;  // thresholds descending from +inf
    double auc = 0.0;              // trapezoidal
};

// Throws ProtocolError unless both matches and non-matches are present.
RocCurve roc(std::span<const ScoredPair> scored);
std::string roc_csv(const RocCurve& curve);

// Fraction classified correctly when score > threshold means "match".
double accuracy_at(std::span<const ScoredPair> scored, double threshold);

struct ThresholdChoice {
    double threshold = 0.0;
    double accuracy = 0.0;
};

/// Best threshold for the given pairs. Candidates are the midpoints between
/// consecutive distinct scores plus min - 1 and max + 1. Among the candidates
/// of maximal accuracy, consecutive ones form runs; the run spanning the
/// widest threshold interval wins (earliest on a tie) and its midpoint is
/// returned.
ThresholdChoice select_threshold(std::span<const ScoredPair> scored);

struct KFoldReport {
    std::vector<double> per_fold_accuracy;
    std::vector<double> per_fold_threshold;
    double mean = 0.0;
    double std = 0.0;  // population
};

// Folds are contiguous blocks [f n / k, (f + 1) n / k) of the given order.
// Each fold's threshold is selected on the other k - 1 folds only.
KFoldReport kfold_accuracy(std::span<const ScoredPair> scored, std::size_t k);

struct MapStats {
    double mean_accuracy = 0.0;  // 1 - mean(O)
    double std = 0.0;            // population std of 1 - O over cells
};

MapStats map_accuracy_stats(const Tensor& grid);
MapStats map_accuracy_stats(const OcclusionMap& map);

struct EvalReport {
    std::size_t pair_count = 0;
    std::size_t folds = 0;
    KFoldReport kfold;
    double auc = 0.0;
    std::optional<double> decidability;
    // Over squared distances 2 - 2 cos between unit embeddings.
    double mu_ap = 0.0, mu_an = 0.0, var_ap = 0.0, var_an = 0.0;
};

EvalReport evaluate_scores(std::span<const ScoredPair> scored, std::size_t k);
nlohmann::json to_json(const EvalReport& report);
// Throws FormatError naming the first violated field.
void validate_eval_report(const nlohmann::json& doc);
std::string report_table(const std::vector<std::pair<std::string, nlohmann::json>>& rows);

// CSV "id_a,id_b,is_match"; a header row is optional. Throws FormatError
// whose message names the offending 1-based line.
std::vector<PairSpec> parse_pairs_csv(const std::string& text, const std::string& origin = "pairs");
std::vector<PairSpec> read_pairs_csv(const std::filesystem::path& path);
std::string pairs_csv(std::span<const PairSpec> pairs);

// `folds` contiguous blocks, each holding per_fold matching pairs followed
// by per_fold non-matching pairs, drawn from data with rng.
std::vector<PairSpec> make_verification_pairs(const Dataset& data, std::size_t folds, std::size_t per_fold, Rng& rng);

}  // namespace otl
