#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "checks.hpp"
#include "otl/dataset.hpp"
#include "otl/errors.hpp"
#include "otl/train.hpp"

using namespace otl;

namespace {

std::vector<unsigned char> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

void write_bytes(const std::filesystem::path& path, const std::string& s) {
    std::ofstream out(path, std::ios::binary);
    out << s;
}

SyntheticSpec small_spec() {
    SyntheticSpec spec;
    spec.class_count = 4;
    spec.samples_per_class = 30;
    spec.height = 16;
    spec.width = 16;
    spec.cue_region = {0, 8, 8, 8};
    return spec;
}

}  // namespace

TEST(Pgm, DecodesDirectScaling) {
    std::string file = "P5\n2 2\n255\n";
    file += std::string{'\x00', '\x80', '\xff', '\x40'};
    const Tensor t = decode_pgm(bytes_of(file));
    EXPECT_EQ(t.shape(), (Shape{2, 2}));
    EXPECT_EQ(t.values(), (std::vector<double>{0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0}));
}

TEST(Pgm, AllBlackIsZero) {
    const Tensor t = decode_pgm(bytes_of("P5\n3 2\n255\n" + std::string(6, '\0')));
    for (double v : t.data()) EXPECT_EQ(v, 0.0);
}

TEST(Pgm, SaveOfLoadIsByteIdentical) {
    check::TempDir dir("pgm");
    Rng rng(1);
    std::string file = "P5\n5 3\n255\n";
    for (int i = 0; i < 15; ++i) file += static_cast<char>(rng.below(256));
    write_bytes(dir / "a.pgm", file);
    save_pgm(load_pgm(dir / "a.pgm"), dir / "b.pgm");
    EXPECT_EQ(check::read_file(dir / "b.pgm"), file);
}

TEST(Pgm, AcceptsCommentsAndFlexibleWhitespace) {
    const Tensor t = decode_pgm(bytes_of("P5 # comment\n1  1\t255\n" + std::string(1, '\xff')));
    EXPECT_EQ(t.values(), (std::vector<double>{1.0}));
}

TEST(Pgm, RejectsMalformedFiles) {
    EXPECT_THROW(decode_pgm(bytes_of("P2\n1 1\n255\n0")), FormatError);
    EXPECT_THROW(decode_pgm(bytes_of("P5\n1 1\n65535\n\x01\x02")), FormatError);
    EXPECT_THROW(decode_pgm(bytes_of("P5\n2 2\n255\nabc")), FormatError);
    EXPECT_THROW(decode_pgm(bytes_of("P5\n2")), FormatError);
}

TEST(Synthetic, SameSpecSameDataset) {
    const Dataset a = generate_synthetic(small_spec());
    const Dataset b = generate_synthetic(small_spec());
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a.images[i].pixels, b.images[i].pixels);
        EXPECT_EQ(a.images[i].id, b.images[i].id);
    }
    SyntheticSpec other = small_spec();
    other.seed = 2;
    EXPECT_NE(generate_synthetic(other).images[0].pixels, a.images[0].pixels);
}

TEST(Synthetic, LayoutAndIds) {
    const Dataset d = generate_synthetic(small_spec());
    EXPECT_EQ(d.size(), 120u);
    EXPECT_EQ(d.class_count, 4u);
    EXPECT_EQ(d.height(), 16u);
    EXPECT_EQ(d.images[31].id, "c001/0001");
    EXPECT_EQ(d.images[31].label, 1u);
    EXPECT_EQ(d.find("c003/0029"), 119u);
    EXPECT_THROW(d.find("c009/0000"), KeyError);
    for (const auto& img : d.images) {
        for (double v : img.pixels.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
    }
}

TEST(Synthetic, ClassInformationLivesOnlyInCueRegion) {
    const SyntheticSpec spec = small_spec();
    const Dataset d = generate_synthetic(spec);
    // Per-class mean images; outside the cue they differ only by noise.
    std::vector<Tensor> means(spec.class_count, Tensor({16, 16}));
    for (const auto& img : d.images) {
        for (std::size_t i = 0; i < 256; ++i) means[img.label][i] += img.pixels[i] / 30.0;
    }
    double inside = 0.0, outside = 0.0;
    for (std::size_t r = 0; r < 16; ++r) {
        for (std::size_t c = 0; c < 16; ++c) {
            const double diff = std::abs(means[0].at(r, c) - means[1].at(r, c));
            (spec.cue_region.contains(r, c) ? inside : outside) = std::max(spec.cue_region.contains(r, c) ? inside : outside, diff);
        }
    }
    EXPECT_LT(outside, 0.1);
    EXPECT_GT(inside, 0.5);
}

TEST(Synthetic, RejectsBadSpecs) {
    SyntheticSpec spec = small_spec();
    spec.cue_region = {10, 10, 8, 8};
    EXPECT_THROW(generate_synthetic(spec), SpecError);
    spec = small_spec();
    spec.cue_strength = 1.5;
    EXPECT_THROW(spec.validate(), SpecError);
    EXPECT_THROW(SyntheticSpec::from_json({{"cue_region", {{"top", 0}}}}), SpecError);
    EXPECT_THROW(SyntheticSpec::from_json({{"class_cnt", 3}}), SpecError);
}

TEST(Synthetic, JsonRoundTrip) {
    SyntheticSpec spec = small_spec();
    spec.cell_flip_prob = 0.1;
    const SyntheticSpec back = SyntheticSpec::from_json(spec.to_json());
    EXPECT_EQ(back.to_json(), spec.to_json());
}

TEST(Synthetic, NoSignalMeansChanceAccuracy) {
    SyntheticSpec spec;
    spec.cue_strength = 0.0;
    const Dataset d = generate_synthetic(spec);
    auto [train, val] = split(d, 0.2, 1);
    Rng init(1);
    Model m = Model::initialized(ModelConfig::desk_default(32, 32, 10), init);
    Rng rng(2);
    train_classifier(m, train, Schedule{200, 0.02, 0.9, 32}, rng);
    EXPECT_NEAR(classification_accuracy(m, val), 0.1, 0.05);
}

TEST(Synthetic, MaskingTheCueHurtsMoreThanMaskingElsewhere) {
    SyntheticSpec spec = small_spec();
    spec.samples_per_class = 40;
    spec.cue_strength = 0.8;
    const Dataset d = generate_synthetic(spec);
    auto [train, val] = split(d, 0.25, 3);
    Rng init(1);
    Model m = Model::initialized(ModelConfig::desk_default(16, 16, 4), init);
    Rng rng(2);
    train_classifier(m, train, Schedule{200, 0.02, 0.9, 16}, rng);
    auto flips = [&](const Rect& region) {
        std::size_t count = 0;
        for (const auto& img : val.images) {
            Tensor masked = img.pixels;
            for (std::size_t r = region.top; r < region.top + region.height; ++r)
                for (std::size_t c = region.left; c < region.left + region.width; ++c) masked.at(r, c) = 0.5;
            const auto before = m.predict(img.pixels.reshaped({1, 16, 16, 1}));
            const auto after = m.predict(masked.reshaped({1, 16, 16, 1}));
            count += before != after;
        }
        return count;
    };
    EXPECT_GT(flips(spec.cue_region), flips(Rect{8, 0, 8, 8}));
}

TEST(Split, TenPercentOfHundred) {
    SyntheticSpec spec = small_spec();
    spec.samples_per_class = 100;
    const Dataset d = generate_synthetic(spec);
    auto [train, val] = split(d, 0.1, 7);
    for (std::size_t c : train.class_counts()) EXPECT_EQ(c, 90u);
    for (std::size_t c : val.class_counts()) EXPECT_EQ(c, 10u);
}

TEST(Split, IsAPartition) {
    const Dataset d = generate_synthetic(small_spec());
    auto [train, val] = split(d, 0.3, 7);
    std::set<std::string> seen;
    for (const auto* part : {&train, &val}) {
        for (const auto& img : part->images) EXPECT_TRUE(seen.insert(img.id).second) << img.id;
    }
    EXPECT_EQ(seen.size(), d.size());
}

TEST(Split, SeedChangesMembersNotCounts) {
    const Dataset d = generate_synthetic(small_spec());
    auto [t1, v1] = split(d, 0.3, 1);
    auto [t2, v2] = split(d, 0.3, 2);
    EXPECT_EQ(v1.class_counts(), v2.class_counts());
    std::set<std::string> a, b;
    for (const auto& img : v1.images) a.insert(img.id);
    for (const auto& img : v2.images) b.insert(img.id);
    EXPECT_NE(a, b);
}

TEST(Split, StratificationWithinOne) {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        SyntheticSpec spec = small_spec();
        spec.samples_per_class = 3 + rng.below(40);
        const double f = rng.uniform(0.05, 0.6);
        const Dataset d = generate_synthetic(spec);
        auto [train, val] = split(d, f, trial);
        for (std::size_t c : val.class_counts()) {
            EXPECT_LE(std::abs(static_cast<double>(c) - f * static_cast<double>(spec.samples_per_class)), 1.0);
        }
    }
}

TEST(Split, RejectsTinyClasses) {
    SyntheticSpec spec = small_spec();
    spec.samples_per_class = 1;
    EXPECT_THROW(split(generate_synthetic(spec), 0.5, 1), SplitError);
}

TEST(BatchStream, FullBatchIsOnePermutation) {
    BatchStream stream(10, 10, 3);
    auto b = stream.next();
    ASSERT_EQ(b.size(), 10u);
    std::sort(b.begin(), b.end());
    for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(b[i], i);
}

TEST(BatchStream, EpochIsABijectionAndKeepsShortBatch) {
    BatchStream stream(23, 5, 4);
    std::vector<std::size_t> all;
    std::vector<std::size_t> sizes;
    while (stream.epoch() == 0 || all.size() < 23) {
        const auto b = stream.next();
        sizes.push_back(b.size());
        all.insert(all.end(), b.begin(), b.end());
        if (all.size() >= 23) break;
    }
    EXPECT_EQ(sizes, (std::vector<std::size_t>{5, 5, 5, 5, 3}));
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < 23; ++i) EXPECT_EQ(all[i], i);
}

TEST(BatchStream, Replays) {
    BatchStream a(50, 7, 9), b(50, 7, 9);
    for (int i = 0; i < 30; ++i) EXPECT_EQ(a.next(), b.next());
}

TEST(BatchStream, RejectsEmptyDataset) { EXPECT_THROW(BatchStream(0, 4, 1), StateError); }

TEST(Directory, SaveAndLoad) {
    check::TempDir dir("dirset");
    const Dataset d = generate_synthetic(small_spec());
    save_directory(d, dir.path());
    const Dataset back = load_directory(dir.path());
    ASSERT_EQ(back.size(), d.size());
    EXPECT_EQ(back.class_count, 4u);
    const std::size_t i = back.find("c002/0005");
    EXPECT_EQ(back.images[i].label, 2u);
    const Tensor& orig = d.images[d.find("c002/0005")].pixels;
    for (std::size_t k = 0; k < orig.size(); ++k) EXPECT_NEAR(back.images[i].pixels[k], orig[k], 0.5 / 255.0 + 1e-12);
}
