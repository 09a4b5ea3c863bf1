#include "otl/metric_losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "otl/errors.hpp"
#include "otl/optim.hpp"

namespace otl {

using nlohmann::json;

Tensor normalize_rows(const Tensor& features) {
    if (features.rank() != 2) throw ShapeError("normalize_rows expects [N, D]");
    Tensor out = features;
    const std::size_t n = features.dim(0), d = features.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) sq += features.at(i, j) * features.at(i, j);
        if (!(sq > 0.0)) throw NormalizationError(fmt::format("feature row {} has zero norm", i));
        const double inv = 1.0 / std::sqrt(sq);
        for (std::size_t j = 0; j < d; ++j) out.at(i, j) *= inv;
    }
    return out;
}

Tensor normalize_rows_backward(const Tensor& features, const Tensor& unit, const Tensor& grad_unit) {
    if (features.shape() != unit.shape() || features.shape() != grad_unit.shape() || features.rank() != 2) {
        throw ShapeError("normalize_rows_backward expects three [N, D] tensors of equal shape");
    }
    // z = f / |f|  =>  df = (dz - z (z . dz)) / |f|
    const std::size_t n = unit.dim(0), d = unit.dim(1);
    Tensor grad({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        double norm_sq = 0.0, proj = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            norm_sq += features.at(i, j) * features.at(i, j);
            proj += unit.at(i, j) * grad_unit.at(i, j);
        }
        const double inv_norm = 1.0 / std::sqrt(norm_sq);
        for (std::size_t j = 0; j < d; ++j) grad.at(i, j) = (grad_unit.at(i, j) - unit.at(i, j) * proj) * inv_norm;
    }
    return grad;
}

namespace {

std::vector<Embedding> rows_to_embeddings(const Tensor& unit) {
    std::vector<Embedding> out(unit.dim(0));
    const std::size_t d = unit.dim(1);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i].vector.assign(unit.data().begin() + static_cast<std::ptrdiff_t>(i * d),
                             unit.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
    }
    return out;
}

}  // namespace

std::vector<Embedding> embed(const Model& model, const Tensor& batch) {
    return rows_to_embeddings(normalize_rows(model.features(batch)));
}

std::vector<Embedding> embed(const Model& model, const Dataset& data, std::span<const std::size_t> indices) {
    std::vector<Embedding> out = embed(model, data.batch(indices));
    for (std::size_t k = 0; k < indices.size(); ++k) {
        out[k].source_id = data.images[indices[k]].id;
        out[k].label = data.images[indices[k]].label;
    }
    return out;
}

double distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError(fmt::format("distance between {}-d and {}-d vectors", a.size(), b.size()));
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        sum += diff * diff;
    }
    return sum;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("cosine similarity of vectors with different lengths");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (!(na > 0.0 && nb > 0.0)) throw NormalizationError("cosine similarity of a zero vector");
    return dot / std::sqrt(na * nb);
}

namespace {

void mean_var(std::span<const double> xs, double& mean, double& var) {
    mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
}

}  // namespace

TripletStats distance_stats(std::span<const double> d_ap, std::span<const double> d_an) {
    TripletStats s;
    if (d_ap.empty() || d_an.empty()) {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        return {nan, nan, nan, nan};
    }
    mean_var(d_ap, s.mu_ap, s.var_ap);
    mean_var(d_an, s.mu_an, s.var_an);
    return s;
}

TripletBatch make_triplet_batch(std::span<const Embedding> pool, std::vector<Triplet> triplets) {
    TripletBatch batch;
    batch.d_ap.reserve(triplets.size());
    batch.d_an.reserve(triplets.size());
    for (const Triplet& t : triplets) {
        if (t.anchor >= pool.size() || t.positive >= pool.size() || t.negative >= pool.size()) {
            throw KeyError("triplet references an embedding outside the pool");
        }
        const Embedding &a = pool[t.anchor], &p = pool[t.positive], &n = pool[t.negative];
        if (t.anchor == t.positive || a.label != p.label || a.label == n.label) {
            throw CompositionError("triplet violates the anchor/positive/negative label constraints");
        }
        batch.d_ap.push_back(distance(a.vector, p.vector));
        batch.d_an.push_back(distance(a.vector, n.vector));
    }
    batch.triplets = std::move(triplets);
    batch.stats = distance_stats(batch.d_ap, batch.d_an);
    return batch;
}

double standard_triplet_objective(std::span<const double> d_ap, std::span<const double> d_an, double alpha) {
    double loss = 0.0;
    for (std::size_t i = 0; i < d_ap.size(); ++i) loss += std::max(0.0, d_ap[i] - d_an[i] + alpha);
    return loss;
}

double batch_triplet_objective(std::span<const double> d_ap, std::span<const double> d_an, double alpha, double beta) {
    const TripletStats s = distance_stats(d_ap, d_an);
    return (1.0 - beta) * (s.mu_ap - s.mu_an + alpha) + beta * (s.var_ap + s.var_an);
}

namespace {

// Chains dL/d(d_ap_i), dL/d(d_an_i) into per-embedding gradients.
Tensor distance_chain(std::span<const Embedding> pool, const TripletBatch& batch, std::span<const double> g_ap,
                      std::span<const double> g_an) {
    const std::size_t dim = pool.empty() ? 0 : pool.front().vector.size();
    Tensor grad({pool.size(), std::max<std::size_t>(dim, 1)});
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Triplet& t = batch.triplets[i];
        const auto &a = pool[t.anchor].vector, &p = pool[t.positive].vector, &n = pool[t.negative].vector;
        for (std::size_t j = 0; j < dim; ++j) {
            const double dap = 2.0 * (a[j] - p[j]) * g_ap[i];
            const double dan = 2.0 * (a[j] - n[j]) * g_an[i];
            grad.at(t.anchor, j) += dap + dan;
            grad.at(t.positive, j) -= dap;
            grad.at(t.negative, j) -= dan;
        }
    }
    return grad;
}

}  // namespace

TripletLoss standard_triplet_loss(std::span<const Embedding> pool, const TripletBatch& batch, double alpha) {
    if (batch.empty()) throw StateError("standard triplet loss of an empty batch");
    std::vector<double> g_ap(batch.size()), g_an(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const bool active = batch.d_ap[i] - batch.d_an[i] + alpha > 0.0;
        g_ap[i] = active ? 1.0 : 0.0;
        g_an[i] = active ? -1.0 : 0.0;
    }
    return {standard_triplet_objective(batch.d_ap, batch.d_an, alpha), distance_chain(pool, batch, g_ap, g_an)};
}

TripletLoss batch_triplet_loss(std::span<const Embedding> pool, const TripletBatch& batch, double alpha, double beta) {
    if (batch.size() < 2) {
        throw BatchSizeError(fmt::format("batch triplet loss needs at least 2 triplets, got {}", batch.size()));
    }
    const double n = static_cast<double>(batch.size());
    const TripletStats s = distance_stats(batch.d_ap, batch.d_an);
    std::vector<double> g_ap(batch.size()), g_an(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        g_ap[i] = (1.0 - beta) / n + beta * 2.0 * (batch.d_ap[i] - s.mu_ap) / n;
        g_an[i] = -(1.0 - beta) / n + beta * 2.0 * (batch.d_an[i] - s.mu_an) / n;
    }
    return {batch_triplet_objective(batch.d_ap, batch.d_an, alpha, beta), distance_chain(pool, batch, g_ap, g_an)};
}

TripletBatch online_sample_triplets(std::span<const Embedding> pool, double alpha, const SamplingOptions& options) {
    const std::size_t m = pool.size();
    std::vector<double> dist(m * m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i + 1; j < m; ++j) dist[i * m + j] = dist[j * m + i] = distance(pool[i].vector, pool[j].vector);
    }
    bool has_pair = false, has_negative = false;
    for (std::size_t i = 0; i < m && !(has_pair && has_negative); ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            if (i == j) continue;
            (pool[i].label == pool[j].label ? has_pair : has_negative) = true;
        }
    }
    if (!has_pair) throw CompositionError("pool has no anchor/positive pair (every class has one sample)");
    if (!has_negative) throw CompositionError("pool has a single class, so no negatives exist");

    std::vector<Triplet> selected;
    for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t p = 0; p < m; ++p) {
            if (p == a || pool[p].label != pool[a].label) continue;
            const double d_ap = dist[a * m + p];
            for (std::size_t n = 0; n < m; ++n) {
                if (pool[n].label == pool[a].label) continue;
                if (!options.online || d_ap + alpha > dist[a * m + n]) selected.push_back({a, p, n});
            }
        }
    }
    if (options.budget > 0 && selected.size() > options.budget) {
        if (!options.rng) throw ParameterError("triplet budget subsampling needs an rng");
        std::vector<std::size_t> idx(selected.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        for (std::size_t k = 0; k < options.budget; ++k) {
            std::swap(idx[k], idx[k + options.rng->below(idx.size() - k)]);
        }
        idx.resize(options.budget);
        std::sort(idx.begin(), idx.end());
        std::vector<Triplet> kept;
        kept.reserve(idx.size());
        for (std::size_t k : idx) kept.push_back(selected[k]);
        selected = std::move(kept);
    }
    TripletBatch batch;
    batch.triplets = std::move(selected);
    for (const Triplet& t : batch.triplets) {
        batch.d_ap.push_back(dist[t.anchor * m + t.positive]);
        batch.d_an.push_back(dist[t.anchor * m + t.negative]);
    }
    batch.stats = distance_stats(batch.d_ap, batch.d_an);
    return batch;
}

double decidability(std::span<const double> pos_scores, std::span<const double> neg_scores) {
    if (pos_scores.size() < 2 || neg_scores.size() < 2) {
        throw BatchSizeError("decidability needs at least two scores per distribution");
    }
    const TripletStats s = distance_stats(pos_scores, neg_scores);
    if (s.var_ap == 0.0 && s.var_an == 0.0) throw DecidabilityError("decidability undefined: both variances are zero");
    return std::abs(s.mu_ap - s.mu_an) / std::sqrt(0.5 * (s.var_ap + s.var_an));
}

std::string to_string(TripletMode mode) { return mode == TripletMode::standard ? "standard" : "batch"; }

TripletMode parse_triplet_mode(const std::string& name) {
    if (name == "standard") return TripletMode::standard;
    if (name == "batch") return TripletMode::batch;
    throw ConfigError("loss mode must be 'standard' or 'batch', got '" + name + "'");
}

void LossConfig::validate() const {
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be nonnegative");
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0, 1]");
    if (pool_classes < 2) throw ConfigError("triplet pool needs at least 2 classes");
    if (pool_per_class < 2) throw ConfigError("triplet pool needs at least 2 images per class");
}

LossConfig LossConfig::from_json(const json& doc) {
    LossConfig cfg;
    static const std::set<std::string> known{"mode", "alpha", "beta", "online", "budget", "pool_classes",
                                             "pool_per_class"};
    if (!doc.is_object()) throw ConfigError("loss config must be an object");
    for (const auto& item : doc.items()) {
        if (!known.contains(item.key())) throw ConfigError("loss config: unknown key '" + item.key() + "'");
    }
    try {
        if (doc.contains("mode")) cfg.mode = parse_triplet_mode(doc.at("mode").get<std::string>());
        cfg.alpha = doc.value("alpha", cfg.alpha);
        cfg.beta = doc.value("beta", cfg.beta);
        cfg.online = doc.value("online", cfg.online);
        cfg.budget = doc.value("budget", cfg.budget);
        cfg.pool_classes = doc.value("pool_classes", cfg.pool_classes);
        cfg.pool_per_class = doc.value("pool_per_class", cfg.pool_per_class);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("loss config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

json LossConfig::to_json() const {
    return {{"mode", to_string(mode)}, {"alpha", alpha},           {"beta", beta},
            {"online", online},        {"budget", budget},         {"pool_classes", pool_classes},
            {"pool_per_class", pool_per_class}};
}

namespace {

// pool_classes distinct classes with >= 2 images, up to pool_per_class images each.
std::vector<std::size_t> draw_pool(const std::vector<std::vector<std::size_t>>& by_class, const LossConfig& config,
                                   Rng& rng) {
    std::vector<std::size_t> eligible;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        if (by_class[c].size() >= 2) eligible.push_back(c);
    }
    if (eligible.size() < 2) throw CompositionError("fine-tuning needs two classes with at least two images");
    rng.shuffle(eligible);
    eligible.resize(std::min(eligible.size(), config.pool_classes));
    std::sort(eligible.begin(), eligible.end());
    std::vector<std::size_t> pool;
    for (std::size_t c : eligible) {
        std::vector<std::size_t> members = by_class[c];
        rng.shuffle(members);
        members.resize(std::min(members.size(), config.pool_per_class));
        pool.insert(pool.end(), members.begin(), members.end());
    }
    return pool;
}

}  // namespace

std::vector<FinetuneRecord> finetune(Model& model, const Dataset& train, const LossConfig& config,
                                     const FinetuneSchedule& schedule, Rng& rng) {
    config.validate();
    std::vector<FinetuneRecord> log;
    if (schedule.steps == 0) return log;
    std::vector<std::vector<std::size_t>> by_class(train.class_count);
    for (std::size_t i = 0; i < train.size(); ++i) by_class.at(train.images[i].label).push_back(i);

    Sgd sgd(schedule.lr, schedule.momentum);
    Tape tape(model);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t step = 0; step < schedule.steps; ++step) {
        const std::vector<std::size_t> pool_idx = draw_pool(by_class, config, rng);
        const Tensor& features = tape.forward(train.batch(pool_idx), model.bottleneck_end());
        const Tensor unit = normalize_rows(features);
        std::vector<Embedding> pool = rows_to_embeddings(unit);
        for (std::size_t k = 0; k < pool.size(); ++k) pool[k].label = train.images[pool_idx[k]].label;

        const TripletBatch batch = online_sample_triplets(pool, config.alpha, {config.online, config.budget, &rng});
        FinetuneRecord rec{step, 0.0, batch.stats.mu_ap, batch.stats.mu_an, batch.stats.var_ap, batch.stats.var_an,
                           nan, batch.size()};
        if (batch.size() >= 2 && (batch.stats.var_ap > 0.0 || batch.stats.var_an > 0.0)) {
            rec.decidability = decidability(batch.d_ap, batch.d_an);
        }
        const std::size_t needed = config.mode == TripletMode::batch ? 2 : 1;
        if (batch.size() >= needed) {
            const TripletLoss loss = config.mode == TripletMode::batch
                                         ? batch_triplet_loss(pool, batch, config.alpha, config.beta)
                                         : standard_triplet_loss(pool, batch, config.alpha);
            rec.loss = loss.loss;
            const Tensor grad_features = normalize_rows_backward(features, unit, loss.grad);
            const BackwardResult grads = tape.backward(grad_features);
            sgd.step(model.parameters(), grads.parameters);
            if (!std::isfinite(rec.loss)) throw NumericError("triplet loss diverged");
        }
        log.push_back(rec);
    }
    return log;
}

std::string finetune_log_csv(const std::vector<FinetuneRecord>& log) {
    std::string out = "step,loss,mu_ap,mu_an,var_ap,var_an,decidability,triplet_count\n";
    for (const FinetuneRecord& r : log) {
        out += fmt::format("{},{},{},{},{},{},{},{}\n", r.step, r.loss, r.mu_ap, r.mu_an, r.var_ap, r.var_an,
                           r.decidability, r.triplet_count);
    }
    return out;
}

}  // namespace otl
