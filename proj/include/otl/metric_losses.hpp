#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "otl/dataset.hpp"
#include "otl/model.hpp"
#include "otl/rng.hpp"
#include "otl/tensor.hpp"

namespace otl {

/// L2-normalised bottleneck feature vector.
struct Embedding {
    std::vector<double> vector;
    std::string source_id;
    std::size_t label = 0;
};

// Divides every row of [N, D] by its L2 norm. Throws NormalizationError on a zero row.
Tensor normalize_rows(const Tensor& features);
// Gradient w.r.t. features given the gradient w.r.t. unit = normalize_rows(features).
Tensor normalize_rows_backward(const Tensor& features, const Tensor& unit, const Tensor& grad_unit);

std::vector<Embedding> embed(const Model& model, const Dataset& data, std::span<const std::size_t> indices);
std::vector<Embedding> embed(const Model& model, const Tensor& batch);

// Squared Euclidean distance. Throws DimensionError on length mismatch.
double distance(std::span<const double> a, std::span<const double> b);
double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct Triplet {
    std::size_t anchor = 0;
    std::size_t positive = 0;
    std::size_t negative = 0;
    friend auto operator<=>(const Triplet&, const Triplet&) = default;
};

// Population mean and variance of the positive and negative distance lists.
struct TripletStats {
    double mu_ap = 0.0;
    double mu_an = 0.0;
    double var_ap = 0.0;
    double var_an = 0.0;
};

TripletStats distance_stats(std::span<const double> d_ap, std::span<const double> d_an);

/// Triplets referencing a pool of embeddings by index, with their distances.
struct TripletBatch {
    std::vector<Triplet> triplets;
    std::vector<double> d_ap;
    std::vector<double> d_an;
    TripletStats stats;

    std::size_t size() const { return triplets.size(); }
    bool empty() const { return triplets.empty(); }
};

// Checks the label constraints and fills in distances and stats.
TripletBatch make_triplet_batch(std::span<const Embedding> pool, std::vector<Triplet> triplets);

struct TripletLoss {
    double loss = 0.0;
    Tensor grad;  // dloss/d(embedding), [pool size, D]
};

// sum_i max(0, d_ap_i - d_an_i + alpha)
double standard_triplet_objective(std::span<const double> d_ap, std::span<const double> d_an, double alpha);
// (1 - beta)(mu_ap - mu_an + alpha) + beta (var_ap + var_an), population variances
double batch_triplet_objective(std::span<const double> d_ap, std::span<const double> d_an, double alpha, double beta);

// Throws StateError on an empty batch.
TripletLoss standard_triplet_loss(std::span<const Embedding> pool, const TripletBatch& batch, double alpha);
// Throws BatchSizeError for fewer than two triplets.
TripletLoss batch_triplet_loss(std::span<const Embedding> pool, const TripletBatch& batch, double alpha, double beta);

struct SamplingOptions {
    // false keeps every (a, p, n) triplet instead of only margin violators.
    bool online = true;
    // Upper bound on returned triplets (0 = unlimited); excess is dropped by
    // seeded subsampling that preserves enumeration order. Needs rng.
    std::size_t budget = 0;
    Rng* rng = nullptr;
};

/// All ordered anchor/positive pairs (a != p, same label) against every
/// negative of another label with d_ap + alpha > d_an.
/// Throws CompositionError when the pool has no anchor/positive pair or no
/// second class.
TripletBatch online_sample_triplets(std::span<const Embedding> pool, double alpha, const SamplingOptions& options = {});

// |mu_pos - mu_neg| / sqrt((var_pos + var_neg) / 2). Throws DecidabilityError
// when both variances are zero, BatchSizeError when a list has < 2 scores.
double decidability(std::span<const double> pos_scores, std::span<const double> neg_scores);

enum class TripletMode { standard, batch };

struct LossConfig {
    TripletMode mode = TripletMode::batch;
    double alpha = 0.5;
    double beta = 0.7;
    bool online = true;
    std::size_t budget = 512;
    std::size_t pool_classes = 8;
    std::size_t pool_per_class = 8;

    void validate() const;
    static LossConfig from_json(const nlohmann::json& doc);
    nlohmann::json to_json() const;
};

std::string to_string(TripletMode mode);
TripletMode parse_triplet_mode(const std::string& name);

struct FinetuneSchedule {
    std::size_t steps = 200;
    double lr = 0.001;
    double momentum = 0.9;
};

struct FinetuneRecord {
    std::size_t step = 0;
    double loss = 0.0;
    double mu_ap = 0.0;
    double mu_an = 0.0;
    double var_ap = 0.0;
    double var_an = 0.0;
    double decidability = 0.0;  // NaN when undefined for the step's batch
    std::size_t triplet_count = 0;
};

/// Fine-tunes every layer up to the bottleneck; the classification layer is
/// ignored and left untouched. Steps whose batch is too small for the loss
/// make no update.
std::vector<FinetuneRecord> finetune(Model& model, const Dataset& train, const LossConfig& config,
                                     const FinetuneSchedule& schedule, Rng& rng);

std::string finetune_log_csv(const std::vector<FinetuneRecord>& log);

}  // namespace otl
