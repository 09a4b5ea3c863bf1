#include "otl/losses.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "otl/errors.hpp"

namespace otl {

ClassificationLoss softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
    if (logits.rank() != 2) throw ShapeError("logits must be [N, K]");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    if (labels.size() != n) throw ShapeError(fmt::format("{} labels for {} logit rows", labels.size(), n));
    if (n == 0) throw ShapeError("empty batch");

    ClassificationLoss out{0.0, Tensor({n, k}), Tensor({n, k})};
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] >= k) throw LabelError(fmt::format("label {} outside [0, {})", labels[i], k));
        std::size_t top = 0;
        for (std::size_t j = 1; j < k; ++j) {
            if (logits.at(i, j) > logits.at(i, top)) top = j;
        }
        const double peak = logits.at(i, top);
        // log(sum) = log1p(sum of the non-peak terms) keeps saturated rows accurate
        double rest = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            if (j != top) rest += std::exp(logits.at(i, j) - peak);
        }
        const double log_total = std::log1p(rest);
        for (std::size_t j = 0; j < k; ++j) {
            const double log_p = logits.at(i, j) - peak - log_total;
            const double p = std::exp(log_p);
            out.probs.at(i, j) = p;
            out.grad.at(i, j) = (p - (j == labels[i] ? 1.0 : 0.0)) * inv_n;
            if (j == labels[i]) out.loss -= log_p * inv_n;
        }
    }
    if (!std::isfinite(out.loss)) throw NumericError("non-finite classification loss");
    return out;
}

}  // namespace otl
