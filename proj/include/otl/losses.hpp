#pragma once

#include <cstddef>
#include <span>

#include "otl/tensor.hpp"

namespace otl {

struct ClassificationLoss {
    double loss = 0.0;  // mean over the batch of -log p(correct class)
    Tensor probs;       // [N, K] softmax probabilities
    Tensor grad;        // dloss/dlogits, [N, K]
};

// Softmax with max-subtraction followed by the batch-mean cross-entropy.
// Throws LabelError for labels outside [0, K).
ClassificationLoss softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

}  // namespace otl
