#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "otl/errors.hpp"
#include "otl/rng.hpp"
#include "otl/tensor.hpp"

using namespace otl;

TEST(Tensor, ShapeAndFill) {
    Tensor t({2, 3}, 1.5);
    EXPECT_EQ(t.rank(), 2u);
    EXPECT_EQ(t.size(), 6u);
    EXPECT_EQ(t.at(1, 2), 1.5);
    t.at(1, 2) = 4.0;
    EXPECT_EQ(t[5], 4.0);
    EXPECT_EQ(shape_to_string(t.shape()), "[2x3]");
}

TEST(Tensor, RejectsBadShapes) {
    EXPECT_THROW(Tensor({2, 0}), ShapeError);
    EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1.0, 2.0, 3.0}), ShapeError);
    EXPECT_NO_THROW(Tensor({0, 3}));
}

TEST(Tensor, ReshapeKeepsData) {
    Tensor t({2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5});
    const Tensor r = t.reshaped({3, 2});
    EXPECT_EQ(r.values(), t.values());
    EXPECT_THROW(t.reshaped({4, 2}), ShapeError);
}

TEST(Tensor, SliceRows) {
    Tensor t({3, 2, 2});
    std::iota(t.data().begin(), t.data().end(), 0.0);
    const Tensor s = t.slice_rows(1, 3);
    EXPECT_EQ(s.shape(), (Shape{2, 2, 2}));
    EXPECT_EQ(s[0], 4.0);
    EXPECT_EQ(s[7], 11.0);
}

TEST(Tensor, StackAddsLeadingAxis) {
    const std::vector<Tensor> parts = {Tensor({2}, std::vector<double>{1, 2}), Tensor({2}, std::vector<double>{3, 4})};
    const Tensor s = stack(parts);
    EXPECT_EQ(s.shape(), (Shape{2, 2}));
    EXPECT_EQ(s.values(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Tensor, FiniteCheck) {
    Tensor t({2}, 0.0);
    EXPECT_TRUE(t.all_finite());
    t[1] = std::nan("");
    EXPECT_FALSE(t.all_finite());
}

TEST(Rng, SameSeedSameStream) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DerivedStreamsDiffer) {
    Rng a = Rng::derive(7, "train"), b = Rng::derive(7, "init"), c = Rng::derive(7, std::uint64_t{0});
    const auto x = a.next_u64(), y = b.next_u64(), z = c.next_u64();
    EXPECT_NE(x, y);
    EXPECT_NE(x, z);
    EXPECT_EQ(Rng::derive(7, "train").next_u64(), x);
}

TEST(Rng, UniformMoments) {
    Rng rng(1);
    double sum = 0.0, sq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        sum += u;
        sq += u * u;
    }
    EXPECT_NEAR(sum / n, 0.5, 0.005);
    EXPECT_NEAR(sq / n - (sum / n) * (sum / n), 1.0 / 12.0, 0.002);
}

TEST(Rng, NormalMoments) {
    Rng rng(2);
    double sum = 0.0, sq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        sum += z;
        sq += z * z;
    }
    EXPECT_NEAR(sum / n, 0.0, 0.01);
    EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(Rng, BelowCoversRangeUniformly) {
    Rng rng(3);
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 70000; ++i) {
        const auto k = rng.below(7);
        ASSERT_LT(k, 7u);
        ++counts[k];
    }
    for (int c : counts) EXPECT_NEAR(c, 10000, 400);
}

TEST(Rng, PermutationIsBijection) {
    Rng rng(4);
    for (std::size_t n : {1u, 2u, 17u, 100u}) {
        auto p = rng.permutation(n);
        std::sort(p.begin(), p.end());
        for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(p[i], i);
    }
}

TEST(Rng, StateRestoreReplaysIncludingSpareNormal) {
    Rng rng(5);
    rng.normal();  // leaves a cached spare
    const std::string saved = rng.state();
    std::vector<double> first;
    for (int i = 0; i < 5; ++i) first.push_back(rng.normal());
    Rng other(999);
    other.restore(saved);
    for (int i = 0; i < 5; ++i) EXPECT_EQ(other.normal(), first[i]);
}
