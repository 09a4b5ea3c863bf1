#include "otl/train.hpp"

#include <algorithm>

#include "otl/errors.hpp"
#include "otl/losses.hpp"
#include "otl/optim.hpp"

namespace otl {

std::vector<StepRecord> train_classifier(Model& model, const Dataset& train, const Schedule& schedule, Rng& rng,
                                         const BatchHook& hook) {
    std::vector<StepRecord> log;
    if (schedule.steps == 0) return log;
    BatchStream stream(train.size(), schedule.batch_size, rng.next_u64());
    Sgd sgd(schedule.lr, schedule.momentum);
    Tape tape(model);
    log.reserve(schedule.steps);
    for (std::size_t step = 0; step < schedule.steps; ++step) {
        const std::vector<std::size_t> idx = stream.next();
        Tensor batch = train.batch(idx);
        const std::vector<std::size_t> labels = train.labels(idx);
        if (hook) hook(batch, rng);

        const Tensor& logits = tape.forward(batch);
        const ClassificationLoss ce = softmax_cross_entropy(logits, labels);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < logits.dim(1); ++j) {
                if (logits.at(i, j) > logits.at(i, best)) best = j;
            }
            correct += best == labels[i];
        }
        const BackwardResult grads = tape.backward(ce.grad);
        sgd.step(model.parameters(), grads.parameters);
        log.push_back({step, ce.loss, static_cast<double>(correct) / static_cast<double>(labels.size())});
    }
    return log;
}

double classification_accuracy(const Model& model, const Dataset& data, std::size_t chunk) {
    if (data.empty()) throw StateError("accuracy of an empty dataset");
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.size(); start += chunk) {
        idx.clear();
        for (std::size_t i = start; i < std::min(data.size(), start + chunk); ++i) idx.push_back(i);
        const std::vector<std::size_t> pred = model.predict(data.batch(idx));
        for (std::size_t k = 0; k < idx.size(); ++k) correct += pred[k] == data.images[idx[k]].label;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace otl
