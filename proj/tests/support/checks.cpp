#include "checks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "otl/layers.hpp"
#include "otl/losses.hpp"

namespace otl::check {

namespace fs = std::filesystem;

Tensor random_tensor(const Shape& shape, Rng& rng, double lo, double hi) {
    Tensor t(shape);
    for (double& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

double relative_error(std::span<const double> a, std::span<const double> b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double scale = std::sqrt(std::max(na, nb));
    return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

std::vector<double> numeric_gradient(const std::function<double()>& f, std::span<double> x, double eps) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + eps;
        const double up = f();
        x[i] = keep - eps;
        const double down = f();
        x[i] = keep;
        g[i] = (up - down) / (2.0 * eps);
    }
    return g;
}

namespace {

double weighted_sum(const Tensor& t, const Tensor& weights) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * weights[i];
    return s;
}

void append(std::vector<double>& out, std::span<const double> xs) { out.insert(out.end(), xs.begin(), xs.end()); }

// Keeps every input at least `gap` away from zero so ReLU kinks stay out of reach.
Tensor away_from_zero(const Shape& shape, Rng& rng, double gap) {
    Tensor t(shape);
    for (double& v : t.data()) {
        const double mag = rng.uniform(gap, 1.0);
        v = rng.bernoulli(0.5) ? mag : -mag;
    }
    return t;
}

struct TripletInstance {
    std::vector<Embedding> pool;
    std::vector<Triplet> triplets;
    double alpha = 0.0;
};

TripletInstance triplet_instance(Rng& rng, std::size_t min_triplets) {
    for (;;) {
        TripletInstance inst;
        inst.pool = random_pool(rng, 6 + rng.below(5), 2 + rng.below(4), 2 + rng.below(2));
        std::vector<Triplet> all;
        for (std::size_t a = 0; a < inst.pool.size(); ++a) {
            for (std::size_t p = 0; p < inst.pool.size(); ++p) {
                if (p == a || inst.pool[p].label != inst.pool[a].label) continue;
                for (std::size_t n = 0; n < inst.pool.size(); ++n) {
                    if (inst.pool[n].label != inst.pool[a].label) all.push_back({a, p, n});
                }
            }
        }
        if (all.size() < min_triplets) continue;
        rng.shuffle(all);
        all.resize(std::min<std::size_t>(all.size(), min_triplets + rng.below(8)));
        inst.triplets = all;
        inst.alpha = rng.uniform(0.0, 1.0);
        const TripletBatch batch = make_triplet_batch(inst.pool, inst.triplets);
        bool clear_of_kink = true;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            clear_of_kink &= std::abs(batch.d_ap[i] - batch.d_an[i] + inst.alpha) > 1e-3;
        }
        if (clear_of_kink) return inst;
    }
}

std::vector<double> pool_gradient(TripletInstance& inst, const std::function<double()>& f) {
    std::vector<double> g;
    for (Embedding& e : inst.pool) append(g, numeric_gradient(f, e.vector));
    return g;
}

}  // namespace

double conv_gradient_error(Rng& rng) {
    const std::size_t n = 1 + rng.below(2), h = 3 + rng.below(4), w = 3 + rng.below(4);
    const std::size_t ci = 1 + rng.below(3), co = 1 + rng.below(3), kh = 1 + rng.below(3), kw = 1 + rng.below(3);
    const Padding pad = rng.bernoulli(0.5) ? Padding::same : Padding::valid;
    Tensor x = random_tensor({n, h, w, ci}, rng);
    Tensor wt = random_tensor({kh, kw, ci, co}, rng);
    Tensor b = random_tensor({co}, rng);
    const Tensor r = random_tensor(layers::conv2d_forward(x, wt, b, pad).shape(), rng);
    auto loss = [&] { return weighted_sum(layers::conv2d_forward(x, wt, b, pad), r); };

    Tensor gx(x.shape()), gw(wt.shape()), gb(b.shape());
    layers::conv2d_backward(x, wt, r, pad, gw, gb, &gx);
    std::vector<double> analytic, numeric;
    append(analytic, gx.data());
    append(analytic, gw.data());
    append(analytic, gb.data());
    append(numeric, numeric_gradient(loss, x.data()));
    append(numeric, numeric_gradient(loss, wt.data()));
    append(numeric, numeric_gradient(loss, b.data()));
    return relative_error(analytic, numeric);
}

double maxpool_gradient_error(Rng& rng) {
    const std::size_t window = 2 + rng.below(2);
    const std::size_t n = 1 + rng.below(2), h = window + rng.below(5), w = window + rng.below(5), c = 1 + rng.below(3);
    Tensor x({n, h, w, c});
    // Distinct values with gaps far larger than the difference step.
    const std::vector<std::size_t> order = rng.permutation(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.01 * static_cast<double>(order[i]) + rng.uniform(0.0, 0.001);
    std::vector<std::size_t> argmax;
    const Tensor out = layers::maxpool_forward(x, window, &argmax);
    const Tensor r = random_tensor(out.shape(), rng);
    auto loss = [&] { return weighted_sum(layers::maxpool_forward(x, window, nullptr), r); };
    const Tensor gx = layers::maxpool_backward(x.shape(), argmax, r);
    return relative_error(gx.data(), numeric_gradient(loss, x.data()));
}

double dense_gradient_error(Rng& rng) {
    const std::size_t n = 1 + rng.below(3), units = 1 + rng.below(5);
    Shape in_shape = rng.bernoulli(0.5) ? Shape{n, 2 + rng.below(6)} : Shape{n, 1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(2)};
    Tensor x = random_tensor(in_shape, rng);
    const std::size_t fan_in = x.size() / n;
    Tensor wt = random_tensor({fan_in, units}, rng);
    Tensor b = random_tensor({units}, rng);
    const Tensor r = random_tensor({n, units}, rng);
    auto loss = [&] { return weighted_sum(layers::dense_forward(x, wt, b), r); };
    Tensor gx(x.shape()), gw(wt.shape()), gb(b.shape());
    layers::dense_backward(x, wt, r, gw, gb, &gx);
    std::vector<double> analytic, numeric;
    append(analytic, gx.data());
    append(analytic, gw.data());
    append(analytic, gb.data());
    append(numeric, numeric_gradient(loss, x.data()));
    append(numeric, numeric_gradient(loss, wt.data()));
    append(numeric, numeric_gradient(loss, b.data()));
    return relative_error(analytic, numeric);
}

double relu_gradient_error(Rng& rng) {
    Tensor x = away_from_zero({1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(3)}, rng, 1e-2);
    const Tensor r = random_tensor(x.shape(), rng);
    auto loss = [&] { return weighted_sum(layers::relu_forward(x), r); };
    const Tensor gx = layers::relu_backward(x, r);
    return relative_error(gx.data(), numeric_gradient(loss, x.data()));
}

double softmax_ce_gradient_error(Rng& rng) {
    const std::size_t n = 1 + rng.below(4), k = 2 + rng.below(5);
    Tensor logits = random_tensor({n, k}, rng, -3.0, 3.0);
    std::vector<std::size_t> labels(n);
    for (std::size_t& l : labels) l = rng.below(k);
    auto loss = [&] { return softmax_cross_entropy(logits, labels).loss; };
    const Tensor g = softmax_cross_entropy(logits, labels).grad;
    return relative_error(g.data(), numeric_gradient(loss, logits.data()));
}

double standard_triplet_gradient_error(Rng& rng) {
    TripletInstance inst = triplet_instance(rng, 1);
    auto loss = [&] {
        const TripletBatch b = make_triplet_batch(inst.pool, inst.triplets);
        return standard_triplet_objective(b.d_ap, b.d_an, inst.alpha);
    };
    const TripletLoss analytic =
        standard_triplet_loss(inst.pool, make_triplet_batch(inst.pool, inst.triplets), inst.alpha);
    return relative_error(analytic.grad.data(), pool_gradient(inst, loss));
}

double batch_triplet_gradient_error(Rng& rng) {
    TripletInstance inst = triplet_instance(rng, 2);
    const double beta = rng.uniform(0.0, 1.0);
    auto loss = [&] {
        const TripletBatch b = make_triplet_batch(inst.pool, inst.triplets);
        return batch_triplet_objective(b.d_ap, b.d_an, inst.alpha, beta);
    };
    const TripletLoss analytic =
        batch_triplet_loss(inst.pool, make_triplet_batch(inst.pool, inst.triplets), inst.alpha, beta);
    return relative_error(analytic.grad.data(), pool_gradient(inst, loss));
}

double normalize_gradient_error(Rng& rng) {
    Tensor f = away_from_zero({1 + rng.below(4), 2 + rng.below(5)}, rng, 0.1);
    const Tensor r = random_tensor(f.shape(), rng);
    auto loss = [&] { return weighted_sum(normalize_rows(f), r); };
    const Tensor g = normalize_rows_backward(f, normalize_rows(f), r);
    return relative_error(g.data(), numeric_gradient(loss, f.data()));
}

double model_gradient_error(Rng& rng) {
    ModelConfig config;
    config.input = {6, 5, 1 + rng.below(2)};
    config.layers = {Conv2d{3, 3, 2, Padding::same}, Relu{}, MaxPool{2}, Conv2d{2, 1, 3, Padding::valid}, Dense{4},
                     Relu{}, Dense{3}};
    Model model = Model::initialized(config, rng);
    for (auto& [name, t] : model.parameters()) {
        if (name.ends_with(".bias")) {
            for (double& v : t.data()) v = rng.uniform(-0.1, 0.1);
        }
    }
    Tensor x = random_tensor({2, 6, 5, config.input.channels}, rng);
    const std::vector<std::size_t> labels = {rng.below(3), rng.below(3)};
    auto loss = [&] { return softmax_cross_entropy(model.forward(x), labels).loss; };

    Tape tape(model);
    const ClassificationLoss ce = softmax_cross_entropy(tape.forward(x), labels);
    const BackwardResult grads = tape.backward(ce.grad);
    std::vector<double> analytic, numeric;
    append(analytic, grads.input.data());
    append(numeric, numeric_gradient(loss, x.data()));
    for (auto& [name, t] : model.parameters()) {
        append(analytic, grads.parameters.at(name).data());
        append(numeric, numeric_gradient(loss, t.data()));
    }
    return relative_error(analytic, numeric);
}

std::vector<Embedding> random_pool(Rng& rng, std::size_t size, std::size_t dim, std::size_t classes) {
    std::vector<Embedding> pool(size);
    for (std::size_t i = 0; i < size; ++i) {
        pool[i].vector.resize(dim);
        for (double& v : pool[i].vector) v = rng.uniform(-1.0, 1.0);
        // Every class gets members before labels are drawn at random.
        pool[i].label = i < classes ? i : rng.below(classes);
        pool[i].source_id = "e" + std::to_string(i);
    }
    return pool;
}

std::set<Triplet> brute_force_violators(std::span<const Embedding> pool, double alpha) {
    auto sq = [&](std::size_t i, std::size_t j) {
        double s = 0.0;
        for (std::size_t k = 0; k < pool[i].vector.size(); ++k) {
            const double d = pool[i].vector[k] - pool[j].vector[k];
            s += d * d;
        }
        return s;
    };
    std::set<Triplet> out;
    for (std::size_t a = 0; a < pool.size(); ++a) {
        for (std::size_t p = 0; p < pool.size(); ++p) {
            for (std::size_t n = 0; n < pool.size(); ++n) {
                const bool valid = a != p && pool[a].label == pool[p].label && pool[n].label != pool[a].label;
                if (valid && sq(a, p) + alpha > sq(a, n)) out.insert({a, p, n});
            }
        }
    }
    return out;
}

ThresholdChoice brute_force_threshold(std::span<const ScoredPair> scored) {
    std::set<double> levels;
    for (const ScoredPair& s : scored) levels.insert(s.score);
    const std::vector<double> distinct(levels.begin(), levels.end());
    std::vector<double> candidates = {distinct.front() - 1.0};
    for (std::size_t i = 1; i < distinct.size(); ++i) candidates.push_back((distinct[i - 1] + distinct[i]) / 2.0);
    candidates.push_back(distinct.back() + 1.0);

    std::vector<std::size_t> hits;
    for (double t : candidates) {
        std::size_t correct = 0;
        for (const ScoredPair& s : scored) correct += (s.score > t) == s.is_match;
        hits.push_back(correct);
    }
    const std::size_t best = *std::max_element(hits.begin(), hits.end());
    double best_width = -1.0, chosen = 0.0;
    std::size_t i = 0;
    while (i < candidates.size()) {
        if (hits[i] != best) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j + 1 < candidates.size() && hits[j + 1] == best) ++j;
        if (candidates[j] - candidates[i] > best_width) {
            best_width = candidates[j] - candidates[i];
            chosen = (candidates[i] + candidates[j]) / 2.0;
        }
        i = j + 1;
    }
    return {chosen, static_cast<double>(best) / static_cast<double>(scored.size())};
}

KFoldReport brute_force_kfold(std::span<const ScoredPair> scored, std::size_t k) {
    KFoldReport r;
    const std::size_t n = scored.size();
    for (std::size_t f = 0; f < k; ++f) {
        std::vector<ScoredPair> held_in, held_out;
        for (std::size_t i = 0; i < n; ++i) {
            // Fold of pair i: the f with f n / k <= i < (f + 1) n / k.
            std::size_t fold = 0;
            while ((fold + 1) * n / k <= i) ++fold;
            (fold == f ? held_out : held_in).push_back(scored[i]);
        }
        const double t = brute_force_threshold(held_in).threshold;
        std::size_t correct = 0;
        for (const ScoredPair& s : held_out) correct += (s.score > t) == s.is_match;
        r.per_fold_threshold.push_back(t);
        r.per_fold_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(held_out.size()));
    }
    double sum = 0.0;
    for (double a : r.per_fold_accuracy) sum += a;
    r.mean = sum / static_cast<double>(k);
    double ss = 0.0;
    for (double a : r.per_fold_accuracy) ss += (a - r.mean) * (a - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(k));
    return r;
}

std::vector<RocPoint> brute_force_roc(std::span<const ScoredPair> scored) {
    std::set<double, std::greater<>> levels;
    for (const ScoredPair& s : scored) levels.insert(s.score);
    std::vector<double> thresholds = {std::numeric_limits<double>::infinity()};
    thresholds.insert(thresholds.end(), levels.begin(), levels.end());
    std::vector<RocPoint> points;
    for (double t : thresholds) {
        double acc_match = 0, acc_non = 0, matches = 0, non = 0;
        for (const ScoredPair& s : scored) {
            (s.is_match ? matches : non) += 1;
            if (s.score >= t) (s.is_match ? acc_match : acc_non) += 1;
        }
        points.push_back({t, acc_non / non, acc_match / matches});
    }
    return points;
}

Tensor brute_force_binary_map(const Predictor& predict, const LabeledImage& image, const Tensor& patch) {
    const std::size_t h = image.pixels.dim(0), w = image.pixels.dim(1);
    const std::size_t ph = patch.dim(0), pw = patch.dim(1);
    Tensor out({h, w});
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            Tensor img = image.pixels;
            for (std::size_t u = 0; u < ph; ++u) {
                for (std::size_t v = 0; v < pw; ++v) {
                    const long r = static_cast<long>(i) - static_cast<long>(ph / 2) + static_cast<long>(u);
                    const long c = static_cast<long>(j) - static_cast<long>(pw / 2) + static_cast<long>(v);
                    if (r >= 0 && c >= 0 && r < static_cast<long>(h) && c < static_cast<long>(w)) {
                        img.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = patch.at(u, v);
                    }
                }
            }
            const std::vector<std::size_t> pred = predict(img.reshaped({1, h, w, 1}));
            out.at(i, j) = pred.at(0) == image.label ? 0.0 : 1.0;
        }
    }
    return out;
}

std::vector<ScoredPair> random_scored_pairs(Rng& rng, std::size_t n, std::size_t distinct_levels) {
    std::vector<ScoredPair> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].id_a = "a" + std::to_string(i);
        out[i].id_b = "b" + std::to_string(i);
        out[i].is_match = rng.bernoulli(0.5);
        // Matches score higher on average; coarse levels force ties.
        double s = rng.uniform(-1.0, 1.0) * 0.7 + (out[i].is_match ? 0.3 : -0.3);
        if (distinct_levels > 0) s = std::round(s * static_cast<double>(distinct_levels)) / static_cast<double>(distinct_levels);
        out[i].score = std::clamp(s, -1.0, 1.0);
    }
    return out;
}

TempDir::TempDir(const std::string& tag) {
    static std::size_t counter = 0;
    Rng rng = Rng::derive(static_cast<std::uint64_t>(std::hash<std::string>{}(tag)), counter++);
    for (;;) {
        path_ = fs::temp_directory_path() / ("otl-" + tag + "-" + std::to_string(rng.next_u64() % 1000000000));
        if (fs::create_directory(path_)) break;
    }
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace otl::check
