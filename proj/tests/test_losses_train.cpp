#include <gtest/gtest.h>

#include <cmath>

#include "checks.hpp"
#include "otl/errors.hpp"
#include "otl/losses.hpp"
#include "otl/optim.hpp"
#include "otl/train.hpp"

using namespace otl;

namespace {

// Mean of -log softmax computed in long double without max-subtraction.
double reference_ce(const Tensor& logits, const std::vector<std::size_t>& labels) {
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    long double total = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
        long double z = 0.0L;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<long double>(logits.at(i, j)));
        total += std::log(z) - logits.at(i, labels[i]);
    }
    return static_cast<double>(total / n);
}

}  // namespace

TEST(SoftmaxCrossEntropy, UniformLogits) {
    const Tensor logits({2, 4}, 0.7);
    const std::vector<std::size_t> labels = {0, 3};
    const ClassificationLoss r = softmax_cross_entropy(logits, labels);
    EXPECT_NEAR(r.loss, std::log(4.0), 1e-12);
    EXPECT_NEAR(r.grad.at(0, 0), (0.25 - 1.0) / 2.0, 1e-12);
    EXPECT_NEAR(r.grad.at(0, 1), 0.25 / 2.0, 1e-12);
    EXPECT_NEAR(r.probs.at(1, 2), 0.25, 1e-12);
}

TEST(SoftmaxCrossEntropy, MatchesReference) {
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor logits = check::random_tensor({3, 5}, rng, -5.0, 5.0);
        const std::vector<std::size_t> labels = {rng.below(5), rng.below(5), rng.below(5)};
        EXPECT_NEAR(softmax_cross_entropy(logits, labels).loss, reference_ce(logits, labels), 1e-12);
    }
}

TEST(SoftmaxCrossEntropy, ShiftInvariant) {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor logits = check::random_tensor({2, 6}, rng, -4.0, 4.0);
        Tensor shifted = logits;
        const double c = rng.uniform(-100.0, 100.0);
        for (double& v : shifted.data()) v += c;
        const std::vector<std::size_t> labels = {rng.below(6), rng.below(6)};
        EXPECT_NEAR(softmax_cross_entropy(logits, labels).loss, softmax_cross_entropy(shifted, labels).loss, 1e-12);
    }
}

TEST(SoftmaxCrossEntropy, StableForHugeLogits) {
    const Tensor logits({1, 3}, std::vector<double>{1000.0, 0.0, -1000.0});
    const ClassificationLoss r = softmax_cross_entropy(logits, std::vector<std::size_t>{0});
    EXPECT_TRUE(std::isfinite(r.loss));
    EXPECT_NEAR(r.loss, 0.0, 1e-300);
    EXPECT_NEAR(softmax_cross_entropy(logits, std::vector<std::size_t>{2}).loss, 2000.0, 1e-9);
}

TEST(SoftmaxCrossEntropy, RejectsOutOfRangeLabel) {
    EXPECT_THROW(softmax_cross_entropy(Tensor({1, 3}), std::vector<std::size_t>{3}), LabelError);
}

TEST(Sgd, MomentumUpdates) {
    ParameterSet params{{"w", Tensor({2}, std::vector<double>{1.0, -1.0})}};
    const Gradients grads{{"w", Tensor({2}, std::vector<double>{0.5, 2.0})}};
    Sgd sgd(0.1, 0.9);
    sgd.step(params, grads);
    EXPECT_NEAR(params.at("w")[0], 1.0 - 0.05, 1e-15);
    EXPECT_NEAR(params.at("w")[1], -1.0 - 0.2, 1e-15);
    sgd.step(params, grads);
    // v2 = 0.9 v1 - lr g
    EXPECT_NEAR(params.at("w")[0], 0.95 + (0.9 * -0.05 - 0.05), 1e-15);
}

TEST(Sgd, MissingGradientLeavesEverythingUntouched) {
    ParameterSet params{{"a", Tensor({1}, 1.0)}, {"b", Tensor({1}, 2.0)}};
    const Gradients grads{{"a", Tensor({1}, 1.0)}};
    Sgd sgd(0.1, 0.0);
    EXPECT_THROW(sgd.step(params, grads), KeyError);
    EXPECT_EQ(params.at("a")[0], 1.0);
}

TEST(Sgd, RejectsGradientShapeMismatch) {
    ParameterSet params{{"a", Tensor({2}, 1.0)}};
    Sgd sgd(0.1, 0.0);
    EXPECT_THROW(sgd.step(params, Gradients{{"a", Tensor({3}, 1.0)}}), ShapeError);
}

class Training : public ::testing::Test {
protected:
    static Dataset tiny() {
        SyntheticSpec spec;
        spec.class_count = 4;
        spec.samples_per_class = 20;
        spec.height = 16;
        spec.width = 16;
        spec.cue_region = {2, 6, 8, 8};
        return generate_synthetic(spec);
    }
};

TEST_F(Training, ZeroStepsLeavesModelUnchanged) {
    const Dataset data = tiny();
    Rng init(1);
    Model m = Model::initialized(ModelConfig::desk_default(16, 16, 4), init);
    const Model before = m;
    Rng rng(2);
    EXPECT_TRUE(train_classifier(m, data, Schedule{0, 0.02, 0.9, 8}, rng).empty());
    EXPECT_EQ(m.parameters(), before.parameters());
}

TEST_F(Training, LearnsTinySyntheticTask) {
    const Dataset data = tiny();
    Rng init(1);
    Model m = Model::initialized(ModelConfig::desk_default(16, 16, 4), init);
    Rng rng(2);
    const auto log = train_classifier(m, data, Schedule{150, 0.02, 0.9, 16}, rng);
    ASSERT_EQ(log.size(), 150u);
    EXPECT_LT(log.back().loss, log.front().loss);
    EXPECT_GE(classification_accuracy(m, data), 0.95);
}

TEST_F(Training, SameSeedSameParameters) {
    const Dataset data = tiny();
    auto run = [&] {
        Rng init(5);
        Model m = Model::initialized(ModelConfig::desk_default(16, 16, 4), init);
        Rng rng(6);
        train_classifier(m, data, Schedule{20, 0.02, 0.9, 8}, rng);
        return m.parameters();
    };
    EXPECT_EQ(run(), run());
}

TEST_F(Training, HookSeesEveryBatch) {
    const Dataset data = tiny();
    Rng init(1);
    Model m = Model::initialized(ModelConfig::desk_default(16, 16, 4), init);
    Rng rng(2);
    std::size_t calls = 0;
    train_classifier(m, data, Schedule{5, 0.02, 0.9, 8}, rng, [&](Tensor& batch, Rng&) {
        EXPECT_EQ(batch.shape(), (Shape{8, 16, 16, 1}));
        ++calls;
    });
    EXPECT_EQ(calls, 5u);
}

TEST_F(Training, DivergenceIsReported) {
    const Dataset data = tiny();
    Rng init(1);
    Model m = Model::initialized(ModelConfig::desk_default(16, 16, 4), init);
    Rng rng(2);
    EXPECT_THROW(train_classifier(m, data, Schedule{50, 1e300, 0.9, 8}, rng), NumericError);
}
