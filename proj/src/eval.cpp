#include "otl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "otl/errors.hpp"
#include "otl/metric_losses.hpp"
#include "otl/parallel.hpp"

namespace otl {

using nlohmann::json;

std::vector<ScoredPair> score_pairs(const Model& model, const Dataset& data, std::span<const PairSpec> pairs,
                                    std::size_t workers) {
    std::map<std::string, std::size_t> slot;
    std::vector<std::size_t> images;
    for (const PairSpec& p : pairs) {
        for (const std::string* id : {&p.id_a, &p.id_b}) {
            if (slot.emplace(*id, images.size()).second) images.push_back(data.find(*id));
        }
    }
    std::vector<std::vector<double>> emb(images.size());
    constexpr std::size_t kChunk = 128;
    const std::size_t chunks = (images.size() + kChunk - 1) / kChunk;
    parallel_for(chunks, workers, [&](std::size_t begin, std::size_t end) {
        for (std::size_t c = begin; c < end; ++c) {
            const std::size_t lo = c * kChunk, hi = std::min(images.size(), lo + kChunk);
            const std::vector<std::size_t> idx(images.begin() + static_cast<std::ptrdiff_t>(lo),
                                               images.begin() + static_cast<std::ptrdiff_t>(hi));
            std::vector<Embedding> e = embed(model, data.batch(idx));
            for (std::size_t k = 0; k < e.size(); ++k) emb[lo + k] = std::move(e[k].vector);
        }
    });
    std::vector<ScoredPair> out;
    out.reserve(pairs.size());
    for (const PairSpec& p : pairs) {
        const auto& a = emb[slot.at(p.id_a)];
        const auto& b = emb[slot.at(p.id_b)];
        double dot = 0.0;
        for (std::size_t j = 0; j < a.size(); ++j) dot += a[j] * b[j];
        out.push_back({p.id_a, p.id_b, dot, p.is_match});
    }
    return out;
}

RocCurve roc(std::span<const ScoredPair> scored) {
    std::size_t matches = 0;
    for (const ScoredPair& s : scored) matches += s.is_match;
    const std::size_t non_matches = scored.size() - matches;
    if (matches == 0 || non_matches == 0) throw ProtocolError("ROC needs both matching and non-matching pairs");

    std::vector<const ScoredPair*> order;
    for (const ScoredPair& s : scored) order.push_back(&s);
    std::sort(order.begin(), order.end(), [](const ScoredPair* a, const ScoredPair* b) { return a->score > b->score; });

    RocCurve curve;
    curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        const double t = order[i]->score;
        while (i < order.size() && order[i]->score == t) {
            (order[i]->is_match ? tp : fp) += 1;
            ++i;
        }
        curve.points.push_back({t, static_cast<double>(fp) / static_cast<double>(non_matches),
                                static_cast<double>(tp) / static_cast<double>(matches)});
    }
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
        const RocPoint &a = curve.points[i - 1], &b = curve.points[i];
        curve.auc += (b.far - a.far) * (a.tar + b.tar) * 0.5;
    }
    return curve;
}

std::string roc_csv(const RocCurve& curve) {
    std::string out = "threshold,far,tar\n";
    for (const RocPoint& p : curve.points) out += fmt::format("{},{},{}\n", p.threshold, p.far, p.tar);
    return out;
}

double accuracy_at(std::span<const ScoredPair> scored, double threshold) {
    if (scored.empty()) throw ProtocolError("accuracy of an empty pair list");
    std::size_t correct = 0;
    for (const ScoredPair& s : scored) correct += (s.score > threshold) == s.is_match;
    return static_cast<double>(correct) / static_cast<double>(scored.size());
}

ThresholdChoice select_threshold(std::span<const ScoredPair> scored) {
    if (scored.empty()) throw ProtocolError("threshold selection needs at least one pair");
    std::vector<std::pair<double, bool>> items;
    items.reserve(scored.size());
    for (const ScoredPair& s : scored) items.emplace_back(s.score, s.is_match);
    std::sort(items.begin(), items.end());

    std::vector<double> distinct;
    for (const auto& it : items) {
        if (distinct.empty() || it.first != distinct.back()) distinct.push_back(it.first);
    }
    const std::size_t m = distinct.size();
    std::vector<double> candidates(m + 1);
    candidates[0] = distinct.front() - 1.0;
    for (std::size_t k = 1; k < m; ++k) candidates[k] = 0.5 * (distinct[k - 1] + distinct[k]);
    candidates[m] = distinct.back() + 1.0;

    // Candidate k rejects the first k distinct values and accepts the rest.
    std::size_t total_matches = 0;
    for (const auto& it : items) total_matches += it.second;
    std::vector<std::size_t> correct(m + 1);
    std::size_t rejected_non = 0, rejected_match = 0, pos = 0;
    for (std::size_t k = 0; k <= m; ++k) {
        if (k > 0) {
            while (pos < items.size() && items[pos].first == distinct[k - 1]) {
                (items[pos].second ? rejected_match : rejected_non) += 1;
                ++pos;
            }
        }
        correct[k] = rejected_non + (total_matches - rejected_match);
    }
    const std::size_t best = *std::max_element(correct.begin(), correct.end());

    std::size_t run_a = 0, run_b = 0;
    double widest = -1.0;
    for (std::size_t k = 0; k <= m;) {
        if (correct[k] != best) {
            ++k;
            continue;
        }
        std::size_t e = k;
        while (e + 1 <= m && correct[e + 1] == best) ++e;
        const double width = candidates[e] - candidates[k];
        if (width > widest) {
            widest = width;
            run_a = k;
            run_b = e;
        }
        k = e + 1;
    }
    return {0.5 * (candidates[run_a] + candidates[run_b]),
            static_cast<double>(best) / static_cast<double>(items.size())};
}

KFoldReport kfold_accuracy(std::span<const ScoredPair> scored, std::size_t k) {
    if (k < 2) throw ProtocolError("k-fold protocol needs k >= 2");
    if (scored.size() < k) throw ProtocolError(fmt::format("{} pairs cannot fill {} folds", scored.size(), k));
    const std::size_t n = scored.size();
    KFoldReport report;
    for (std::size_t f = 0; f < k; ++f) {
        const std::size_t lo = f * n / k, hi = (f + 1) * n / k;
        std::vector<ScoredPair> held_in;
        held_in.reserve(n - (hi - lo));
        held_in.insert(held_in.end(), scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(lo));
        held_in.insert(held_in.end(), scored.begin() + static_cast<std::ptrdiff_t>(hi), scored.end());
        const ThresholdChoice choice = select_threshold(held_in);
        report.per_fold_threshold.push_back(choice.threshold);
        report.per_fold_accuracy.push_back(accuracy_at(scored.subspan(lo, hi - lo), choice.threshold));
    }
    for (double a : report.per_fold_accuracy) report.mean += a;
    report.mean /= static_cast<double>(k);
    for (double a : report.per_fold_accuracy) report.std += (a - report.mean) * (a - report.mean);
    report.std = std::sqrt(report.std / static_cast<double>(k));
    return report;
}

MapStats map_accuracy_stats(const Tensor& grid) {
    if (grid.empty()) throw ShapeError("map statistics of an empty grid");
    const double n = static_cast<double>(grid.size());
    double mean_err = 0.0;
    for (double v : grid.data()) mean_err += v;
    mean_err /= n;
    const double mean_acc = 1.0 - mean_err;
    double var = 0.0;
    for (double v : grid.data()) var += ((1.0 - v) - mean_acc) * ((1.0 - v) - mean_acc);
    return {mean_acc, std::sqrt(var / n)};
}

MapStats map_accuracy_stats(const OcclusionMap& map) { return map_accuracy_stats(map.grid); }

EvalReport evaluate_scores(std::span<const ScoredPair> scored, std::size_t k) {
    EvalReport report;
    report.pair_count = scored.size();
    report.folds = k;
    report.kfold = kfold_accuracy(scored, k);
    report.auc = roc(scored).auc;
    std::vector<double> pos, neg;
    for (const ScoredPair& s : scored) (s.is_match ? pos : neg).push_back(2.0 - 2.0 * s.score);
    const TripletStats stats = distance_stats(pos, neg);
    report.mu_ap = stats.mu_ap;
    report.mu_an = stats.mu_an;
    report.var_ap = stats.var_ap;
    report.var_an = stats.var_an;
    try {
        report.decidability = decidability(pos, neg);
    } catch (const DecidabilityError&) {
    } catch (const BatchSizeError&) {
    }
    return report;
}

json to_json(const EvalReport& r) {
    return {{"pair_count", r.pair_count},
            {"folds", r.folds},
            {"kfold",
             {{"per_fold_accuracy", r.kfold.per_fold_accuracy},
              {"per_fold_threshold", r.kfold.per_fold_threshold},
              {"mean", r.kfold.mean},
              {"std", r.kfold.std}}},
            {"auc", r.auc},
            {"decidability", r.decidability ? json(*r.decidability) : json(nullptr)},
            {"distance_stats", {{"mu_ap", r.mu_ap}, {"mu_an", r.mu_an}, {"var_ap", r.var_ap}, {"var_an", r.var_an}}}};
}

void validate_eval_report(const json& doc) {
    auto need = [](const json& obj, const char* key, const char* where) -> const json& {
        if (!obj.is_object() || !obj.contains(key)) throw FormatError(fmt::format("{}: missing '{}'", where, key));
        return obj.at(key);
    };
    auto number = [&](const json& obj, const char* key, const char* where) {
        const json& v = need(obj, key, where);
        if (!v.is_number()) throw FormatError(fmt::format("{}: '{}' must be a number", where, key));
        return v.get<double>();
    };
    const double pairs = number(doc, "pair_count", "report");
    const double folds = number(doc, "folds", "report");
    const json& kfold = need(doc, "kfold", "report");
    const json& accs = need(kfold, "per_fold_accuracy", "kfold");
    const json& thresholds = need(kfold, "per_fold_threshold", "kfold");
    if (!accs.is_array() || !thresholds.is_array() || accs.size() != static_cast<std::size_t>(folds) ||
        thresholds.size() != accs.size()) {
        throw FormatError("kfold: per-fold lists must hold one entry per fold");
    }
    if (folds < 2 || pairs < folds) throw FormatError("report: inconsistent pair_count/folds");
    double mean = 0.0;
    for (const json& a : accs) {
        if (!a.is_number() || a.get<double>() < 0.0 || a.get<double>() > 1.0) {
            throw FormatError("kfold: accuracies must be numbers in [0,1]");
        }
        mean += a.get<double>();
    }
    mean /= static_cast<double>(accs.size());
    double var = 0.0;
    for (const json& a : accs) var += (a.get<double>() - mean) * (a.get<double>() - mean);
    const double sd = std::sqrt(var / static_cast<double>(accs.size()));
    if (std::abs(number(kfold, "mean", "kfold") - mean) > 1e-12 || std::abs(number(kfold, "std", "kfold") - sd) > 1e-12) {
        throw FormatError("kfold: mean/std do not match the per-fold accuracies");
    }
    const double auc = number(doc, "auc", "report");
    if (auc < 0.0 || auc > 1.0) throw FormatError("report: auc outside [0,1]");
    const json& d = need(doc, "decidability", "report");
    if (!d.is_null() && !(d.is_number() && d.get<double>() >= 0.0)) {
        throw FormatError("report: decidability must be null or a nonnegative number");
    }
    const json& ds = need(doc, "distance_stats", "report");
    for (const char* key : {"mu_ap", "mu_an", "var_ap", "var_an"}) number(ds, key, "distance_stats");
}

std::string report_table(const std::vector<std::pair<std::string, json>>& rows) {
    const std::vector<std::string> headers = {"model", "map acc", "map std", "kfold acc", "kfold std", "auc",
                                              "decidability", "var_ap+var_an"};
    std::vector<std::vector<std::string>> cells;
    auto pct = [](const json& v) { return v.is_number() ? fmt::format("{:.2f}%", 100.0 * v.get<double>()) : "-"; };
    auto num = [](const json& v) { return v.is_number() ? fmt::format("{:.4f}", v.get<double>()) : "-"; };
    for (const auto& [name, doc] : rows) {
        const json map = doc.value("map_stats", json::object());
        const json eval = doc.value("eval", json::object());
        const json kf = eval.value("kfold", json::object());
        const json ds = eval.value("distance_stats", json::object());
        json var_sum;
        if (ds.contains("var_ap")) var_sum = ds.at("var_ap").get<double>() + ds.at("var_an").get<double>();
        cells.push_back({name, pct(map.value("mean_accuracy", json())), pct(map.value("std", json())),
                         pct(kf.value("mean", json())), pct(kf.value("std", json())), num(eval.value("auc", json())),
                         num(eval.value("decidability", json())), num(var_sum)});
    }
    std::vector<std::size_t> width(headers.size());
    for (std::size_t c = 0; c < headers.size(); ++c) {
        width[c] = headers[c].size();
        for (const auto& row : cells) width[c] = std::max(width[c], row[c].size());
    }
    std::string out;
    auto emit = [&](const std::vector<std::string>& row) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            out += c == 0 ? fmt::format("{:<{}}", row[c], width[c]) : fmt::format("  {:>{}}", row[c], width[c]);
        }
        out += '\n';
    };
    emit(headers);
    std::size_t total = 0;
    for (std::size_t w : width) total += w + 2;
    out += std::string(total - 2, '-') + '\n';
    for (const auto& row : cells) emit(row);
    return out;
}

std::vector<PairSpec> parse_pairs_csv(const std::string& text, const std::string& origin) {
    std::vector<PairSpec> pairs;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1 && line == "id_a,id_b,is_match") continue;
        std::vector<std::string> fields;
        std::stringstream row(line);
        std::string field;
        while (std::getline(row, field, ',')) fields.push_back(field);
        if (!line.empty() && line.back() == ',') fields.emplace_back();
        if (fields.size() != 3 || fields[0].empty() || fields[1].empty()) {
            throw FormatError(fmt::format("{}:{}: expected 'id_a,id_b,is_match'", origin, line_no));
        }
        bool match;
        if (fields[2] == "1" || fields[2] == "true") {
            match = true;
        } else if (fields[2] == "0" || fields[2] == "false") {
            match = false;
        } else {
            throw FormatError(fmt::format("{}:{}: is_match must be 0/1/true/false, got '{}'", origin, line_no, fields[2]));
        }
        pairs.push_back({fields[0], fields[1], match});
    }
    return pairs;
}

std::vector<PairSpec> read_pairs_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open pairs file " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_pairs_csv(buf.str(), path.string());
}

std::string pairs_csv(std::span<const PairSpec> pairs) {
    std::string out = "id_a,id_b,is_match\n";
    for (const PairSpec& p : pairs) out += fmt::format("{},{},{}\n", p.id_a, p.id_b, p.is_match ? 1 : 0);
    return out;
}

std::vector<PairSpec> make_verification_pairs(const Dataset& data, std::size_t folds, std::size_t per_fold, Rng& rng) {
    std::vector<std::vector<std::size_t>> by_class(data.class_count);
    for (std::size_t i = 0; i < data.size(); ++i) by_class.at(data.images[i].label).push_back(i);
    std::vector<std::size_t> with_pairs;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        if (by_class[c].size() >= 2) with_pairs.push_back(c);
    }
    if (with_pairs.empty() || data.class_count < 2) {
        throw ProtocolError("pair generation needs two classes and a class with two images");
    }
    std::vector<PairSpec> out;
    for (std::size_t f = 0; f < folds; ++f) {
        for (std::size_t i = 0; i < per_fold; ++i) {
            const auto& members = by_class[with_pairs[rng.below(with_pairs.size())]];
            const std::size_t a = rng.below(members.size());
            std::size_t b = rng.below(members.size() - 1);
            if (b >= a) ++b;
            out.push_back({data.images[members[a]].id, data.images[members[b]].id, true});
        }
        for (std::size_t i = 0; i < per_fold; ++i) {
            std::size_t ia, ib;
            do {
                ia = rng.below(data.size());
                ib = rng.below(data.size());
            } while (data.images[ia].label == data.images[ib].label);
            out.push_back({data.images[ia].id, data.images[ib].id, false});
        }
    }
    return out;
}

}  // namespace otl
