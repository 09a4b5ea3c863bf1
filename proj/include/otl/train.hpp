#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "otl/dataset.hpp"
#include "otl/model.hpp"
#include "otl/rng.hpp"

namespace otl {

struct Schedule {
    std::size_t steps = 600;
    double lr = 0.02;
    double momentum = 0.9;
    std::size_t batch_size = 32;
};

struct StepRecord {
    std::size_t step = 0;
    double loss = 0.0;
    double accuracy = 0.0;  // on the (possibly augmented) training batch
};

// Rewrites a [N,H,W,1] training batch in place before the forward pass.
using BatchHook = std::function<void(Tensor& batch, Rng& rng)>;

/// Mini-batch SGD on the batch-mean softmax cross-entropy.
/// Throws NumericError when the loss or a parameter becomes non-finite.
std::vector<StepRecord> train_classifier(Model& model, const Dataset& train, const Schedule& schedule, Rng& rng,
                                         const BatchHook& hook = {});

double classification_accuracy(const Model& model, const Dataset& data, std::size_t chunk = 256);

}  // namespace otl
