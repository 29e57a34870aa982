#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace cmi;

TEST(RootSift, ZeroMapsToZero) {
    std::array<float, kSiftDim> raw{};
    EXPECT_EQ(root_sift_transform(raw).values, raw);
}

TEST(RootSift, OneHotIsFixed) {
    const auto raw = test::one_hot_sift(5);
    EXPECT_EQ(root_sift_transform(raw).values, raw);
    // Scale does not matter: l1 normalization first.
    EXPECT_EQ(root_sift_transform(test::one_hot_sift(5, 42.0F)).values, raw);
}

TEST(RootSift, HandComputedExample) {
    // (3, 1, 0, ...) -> l1 = 4 -> (0.75, 0.25) -> sqrt
    std::array<float, kSiftDim> raw{};
    raw[0] = 3.0F;
    raw[1] = 1.0F;
    const auto out = root_sift_transform(raw);
    EXPECT_NEAR(out.values[0], 0.8660254037844386, 1e-7);
    EXPECT_NEAR(out.values[1], 0.5, 1e-7);
    for (std::size_t d = 2; d < kSiftDim; ++d) {
        EXPECT_EQ(out.values[d], 0.0F);
    }
}

TEST(RootSift, RejectsNegativeAndNonFinite) {
    std::array<float, kSiftDim> raw{};
    raw[3] = -1.0F;
    EXPECT_THROW(root_sift_transform(raw), InvalidInput);
    raw[3] = std::numeric_limits<float>::quiet_NaN();
    EXPECT_THROW(root_sift_transform(raw), InvalidInput);
    raw[3] = std::numeric_limits<float>::infinity();
    EXPECT_THROW(root_sift_transform(raw), InvalidInput);
    std::vector<float> short_raw(127, 1.0F);
    EXPECT_THROW(root_sift_transform(short_raw), InvalidInput);
}

TEST(RootSift, UnitL2NormProperty) {
    std::mt19937_64 rng(7);
    std::exponential_distribution<float> expo(1.0F);
    std::bernoulli_distribution sparse(0.3);
    for (int trial = 0; trial < 500; ++trial) {
        std::array<float, kSiftDim> raw{};
        for (float& v : raw) {
            v = sparse(rng) ? 0.0F : 255.0F * expo(rng);
        }
        raw[trial % kSiftDim] += 1.0F;  // nonzero
        const auto out = root_sift_transform(raw);
        double sq = 0.0;
        for (float v : out.values) {
            ASSERT_TRUE(std::isfinite(v));
            ASSERT_GE(v, 0.0F);
            sq += double{v} * v;
        }
        ASSERT_NEAR(std::sqrt(sq), 1.0, 1e-6);
    }
}

TEST(MeanCn, SingleVectorIsIdentity) {
    CnVector v{0.1, 0.2, 0.05, 0.05, 0.3, 0.0, 0.1, 0.1, 0.05, 0.05, 0.0};
    const auto out = mean_cn_descriptor(std::vector<CnVector>{v});
    for (std::size_t d = 0; d < kCnDim; ++d) {
        EXPECT_EQ(out.values[d], static_cast<float>(v[d]));
    }
}

TEST(MeanCn, TwoOneHots) {
    CnVector e1{};
    CnVector e2{};
    e1[1] = 1.0;
    e2[2] = 1.0;
    const auto out = mean_cn_descriptor(std::vector<CnVector>{e1, e2});
    EXPECT_EQ(out.values[1], 0.5F);
    EXPECT_EQ(out.values[2], 0.5F);
    EXPECT_EQ(out.values[0], 0.0F);
}

TEST(MeanCn, PerDimensionMean) {
    CnVector a{};
    CnVector b{};
    a[0] = 0.6;
    a[1] = 0.4;
    b[0] = 0.2;
    b[1] = 0.8;
    const auto out = mean_cn_descriptor(std::vector<CnVector>{a, b});
    EXPECT_NEAR(out.values[0], 0.4, 1e-7);
    EXPECT_NEAR(out.values[1], 0.6, 1e-7);
}

TEST(MeanCn, EmptyPatchAndOffSimplexRejected) {
    EXPECT_THROW(mean_cn_descriptor(std::vector<CnVector>{}), InvalidInput);
    CnVector bad{};
    bad[0] = 0.7;
    EXPECT_THROW(mean_cn_descriptor(std::vector<CnVector>{bad}), InvalidInput);
}

TEST(MeanCn, OutputStaysOnSimplex) {
    std::mt19937_64 rng(11);
    std::gamma_distribution<double> gamma(0.5, 1.0);
    std::uniform_int_distribution<int> count(1, 40);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<CnVector> pixels(count(rng));
        for (auto& p : pixels) {
            double s = 0.0;
            for (double& x : p) {
                x = gamma(rng);
                s += x;
            }
            for (double& x : p) {
                x /= s;
            }
        }
        const auto out = mean_cn_descriptor(pixels);
        EXPECT_NO_THROW(validate_cn(out.values));
    }
}

TEST(Synthetic, ZeroNoiseGivesIdenticalTuples) {
    SynthConfig cfg;
    cfg.groups = 1;
    cfg.images_per_group = 2;
    cfg.features_per_image = 1;
    cfg.noise = 0.0;
    cfg.illum = 0.0;
    const Corpus c = generate_synthetic_corpus(cfg, 3);
    ASSERT_EQ(c.size(), 2U);
    ASSERT_EQ(c[0].features.size(), 1U);
    EXPECT_EQ(c[0].features, c[1].features);
    EXPECT_EQ(c[0].group_id, c[1].group_id);
    EXPECT_NE(c[0].image_id, c[1].image_id);
}

TEST(Synthetic, Deterministic) {
    SynthConfig cfg;
    cfg.groups = 5;
    cfg.features_per_image = 7;
    cfg.sift_share = 0.5;
    EXPECT_EQ(generate_synthetic_corpus(cfg, 99), generate_synthetic_corpus(cfg, 99));
    EXPECT_NE(generate_synthetic_corpus(cfg, 99), generate_synthetic_corpus(cfg, 100));
}

TEST(Synthetic, CountsAndGroups) {
    SynthConfig cfg;
    cfg.groups = 100;
    cfg.images_per_group = 4;
    cfg.features_per_image = 3;
    const Corpus c = generate_synthetic_corpus(cfg, 1);
    EXPECT_EQ(c.size(), 400U);
    std::set<GroupId> groups;
    std::set<ImageId> ids;
    for (const auto& img : c) {
        groups.insert(img.group_id);
        ids.insert(img.image_id);
        EXPECT_EQ(img.features.size(), 3U);
        for (const auto& f : img.features) {
            EXPECT_NO_THROW(validate_feature(f));
        }
    }
    EXPECT_EQ(groups.size(), 100U);
    EXPECT_EQ(ids.size(), 400U);
}

TEST(Synthetic, RejectsDegenerateConfig) {
    SynthConfig cfg;
    cfg.groups = 0;
    EXPECT_THROW(generate_synthetic_corpus(cfg, 1), ConfigError);
    cfg = {};
    cfg.images_per_group = 1;
    EXPECT_THROW(generate_synthetic_corpus(cfg, 1), ConfigError);
    cfg = {};
    cfg.features_per_image = 0;
    EXPECT_THROW(generate_synthetic_corpus(cfg, 1), ConfigError);
}

TEST(DescriptorFile, BinaryAndTextRoundTrip) {
    SynthConfig cfg;
    cfg.groups = 3;
    cfg.features_per_image = 4;
    Corpus c = generate_synthetic_corpus(cfg, 5);
    c.push_back(ImageRecord{1000, 77, {}});  // zero-feature image

    std::stringstream bin;
    write_descriptors(bin, c);
    EXPECT_EQ(read_descriptors(bin), c);

    std::stringstream txt;
    write_descriptors_text(txt, c);
    EXPECT_EQ(read_descriptors(txt), c);
}

TEST(DescriptorFile, BinaryLayout) {
    Corpus c{test::image(7, 2, {test::tuple_at(0, 0)})};
    std::stringstream bin;
    write_descriptors(bin, c);
    const std::string bytes = bin.str();
    // magic + u16 + u32 + (3 u32) + (3 + 128 + 11) f32
    EXPECT_EQ(bytes.size(), 4U + 2 + 4 + 12 + 4 * (3 + 128 + 11));
    EXPECT_EQ(bytes.substr(0, 4), "CMID");
    EXPECT_EQ(bytes[4], 1);
    EXPECT_EQ(bytes[5], 0);
    EXPECT_EQ(static_cast<unsigned char>(bytes[10]), 7);  // image id
}

TEST(DescriptorFile, CorruptionDetected) {
    Corpus c{test::image(1, 1, {test::tuple_at(0, 0)})};
    std::stringstream bin;
    write_descriptors(bin, c);
    std::string bytes = bin.str();

    std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
    EXPECT_THROW(read_descriptors(truncated), FormatError);

    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    std::stringstream bm(bad_magic);
    EXPECT_THROW(read_descriptors(bm), FormatError);

    std::string bad_version = bytes;
    bad_version[4] = 9;
    std::stringstream bv(bad_version);
    EXPECT_THROW(read_descriptors(bv), FormatError);

    Corpus dup{test::image(1, 1, {}), test::image(1, 2, {})};
    std::stringstream d;
    write_descriptors(d, dup);
    EXPECT_THROW(read_descriptors(d), FormatError);
}

TEST(DescriptorFile, TextRejectsShortRows) {
    std::stringstream txt("CMID-TEXT 1\nimage 1 1 1\n1 2 3 4\n");
    EXPECT_THROW(read_descriptors(txt), FormatError);
}

TEST(MakeFeatureTuple, AppliesRootSiftAndMeanCn) {
    std::array<float, kSiftDim> raw{};
    raw[0] = 3.0F;
    raw[1] = 1.0F;
    CnVector a{};
    CnVector b{};
    a[4] = 1.0;
    b[5] = 1.0;
    const FeatureTuple f = make_feature_tuple(raw, std::vector<CnVector>{a, b}, Keypoint{1, 2, 3});
    EXPECT_NEAR(f.sift.values[0], 0.8660254, 1e-6);
    EXPECT_EQ(f.color.values[4], 0.5F);
    EXPECT_THROW(make_feature_tuple(raw, std::vector<CnVector>{a}, Keypoint{1, 2, 0}), InvalidInput);
}
