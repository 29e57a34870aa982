#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace cmi;
using test::image;
using test::tuple_at;

namespace {

const Codebook& sift4() {
    static const Codebook b = test::one_hot_sift_book(4);
    return b;
}
const Codebook& color4() {
    static const Codebook b = test::one_hot_color_book(4);
    return b;
}

template <class PostingT>
std::string bytes_of(const InvertedIndex<PostingT>& idx) {
    std::stringstream s;
    write_index(s, idx);
    return s.str();
}

// Recounts from the corpus with the codebooks, independent of the index.
struct Recount {
    std::map<WordPair, std::set<ImageId>> images;
    std::map<WordPair, std::size_t> postings;
    std::map<ImageId, std::map<WordPair, int>> tf;
};

Recount recount(const Corpus& c, const Codebook& s, const Codebook* col) {
    Recount r;
    for (const auto& img : c) {
        for (const auto& f : img.features) {
            WordPair key{quantize_nearest(f.sift.values, s), col ? quantize_nearest(f.color.values, *col) : 0};
            r.images[key].insert(img.image_id);
            ++r.postings[key];
            ++r.tf[img.image_id][key];
        }
    }
    return r;
}

const test::Pipeline& synth_pipeline() {
    static const test::Pipeline p = [] {
        SynthConfig cfg;
        cfg.groups = 100;
        cfg.features_per_image = 12;
        cfg.sift_share = 0.5;
        return test::make_pipeline(cfg, 31, 64, 24, 4);
    }();
    return p;
}

}  // namespace

TEST(BuildMultiIndex, EmptyCorpus) {
    const MultiIndex idx = build_multi_index({}, sift4(), color4(), nullptr);
    EXPECT_EQ(idx.entry_count(), 0U);
    EXPECT_EQ(idx.image_count(), 0U);
    EXPECT_TRUE(idx.frozen());
}

TEST(BuildMultiIndex, OneImageOneTuple) {
    const MultiIndex idx = build_multi_index({image(5, 0, {tuple_at(2, 3)})}, sift4(), color4(), nullptr);
    EXPECT_EQ(idx.posting_count(), 1U);
    ASSERT_EQ(idx.postings(WordPair{2, 3}).size(), 1U);
    EXPECT_EQ(idx.postings(WordPair{2, 3})[0].image_id, 5U);
    EXPECT_EQ(idx.idf_table().images_with({2, 3}), 1U);
    EXPECT_EQ(idx.norm_table().norm(5), 1.0);
    EXPECT_EQ(idf(idx, 2, 3), 1.0);
}

TEST(BuildMultiIndex, TwoIdenticalTuples) {
    const MultiIndex idx =
        build_multi_index({image(5, 0, {tuple_at(1, 1), tuple_at(1, 1)})}, sift4(), color4(), nullptr);
    EXPECT_EQ(idx.entry_count(), 1U);
    EXPECT_EQ(idx.postings(WordPair{1, 1}).size(), 2U);
    EXPECT_EQ(idx.norm_table().norm(5), 2.0);
    EXPECT_EQ(idx.idf_table().images_with({1, 1}), 1U);
}

TEST(BuildMultiIndex, CnSignatureStored) {
    const MultiIndex idx = build_multi_index({image(5, 0, {tuple_at(1, 2)})}, sift4(), color4(), nullptr);
    EXPECT_EQ(idx.postings(WordPair{1, 2})[0].cn_sig.bits, (1U << 2) | (1U << 13));
    EXPECT_FALSE(idx.has_he());
}

TEST(BuildMultiIndex, DuplicateImageRejected) {
    EXPECT_THROW(build_multi_index({image(5, 0, {}), image(5, 1, {})}, sift4(), color4(), nullptr), InvalidInput);
}

TEST(Idf, Examples) {
    Corpus c;
    for (ImageId i = 0; i < 10; ++i) {
        c.push_back(image(i, i / 4, {i < 2 ? tuple_at(0, 0) : tuple_at(1, 1), tuple_at(3, 3)}));
    }
    const MultiIndex idx = build_multi_index(c, sift4(), color4(), nullptr);
    EXPECT_EQ(idf(idx, 0, 0), 5.0);
    EXPECT_EQ(idf(idx, 3, 3), 1.0);
    EXPECT_EQ(idf(idx, 1, 1), 10.0 / 8.0);
    EXPECT_THROW(idf(idx, 2, 2), StateError);

    const BaselineIndex base = build_baseline_index(c, sift4(), nullptr);
    EXPECT_EQ(idf(base, 0), 5.0);
    EXPECT_EQ(idf(base, 3), 1.0);
}

TEST(Idf, SingletonCorpus) {
    const MultiIndex idx = build_multi_index({image(1, 0, {tuple_at(0, 0)})}, sift4(), color4(), nullptr);
    EXPECT_EQ(idf(idx, 0, 0), 1.0);
}

TEST(ImageNorm, Examples) {
    EXPECT_EQ(image_norm({{{0, 0}, 1}}), 1.0);
    EXPECT_EQ(image_norm({{{0, 0}, 3}, {{1, 2}, 4}}), 5.0);
    WordHistogram h;
    for (WordId k = 0; k < 7; ++k) {
        h[{k, k}] = 1;
    }
    EXPECT_DOUBLE_EQ(image_norm(h), std::sqrt(7.0));
    EXPECT_THROW(image_norm({}), InvalidInput);
}

TEST(BuildBaselineIndex, CollapsesColor) {
    const BaselineIndex one = build_baseline_index({image(5, 0, {tuple_at(2, 3)})}, sift4(), nullptr);
    EXPECT_EQ(one.postings(WordPair{2, 0}).size(), 1U);
    EXPECT_EQ(one.norm_table().norm(5), 1.0);
    // Same SIFT word, different colors: one 1-D entry, h = 2.
    const BaselineIndex two =
        build_baseline_index({image(5, 0, {tuple_at(1, 1), tuple_at(1, 2)})}, sift4(), nullptr);
    EXPECT_EQ(two.entry_count(), 1U);
    EXPECT_EQ(two.postings(WordPair{1, 0}).size(), 2U);
    EXPECT_EQ(two.norm_table().norm(5), 2.0);
    EXPECT_EQ(two.idf_table().images_with({1, 0}), 1U);
    EXPECT_EQ(build_baseline_index({}, sift4(), nullptr).entry_count(), 0U);
}

TEST(Memory, PerFeatureFigures) {
    const MultiIndex idx = build_multi_index({image(1, 0, {tuple_at(0, 0), tuple_at(1, 1)})}, sift4(), color4(), nullptr);
    EXPECT_EQ(memory_footprint(idx, MemoryProfile::Baseline).bytes_per_feature, 4.0);
    EXPECT_EQ(memory_footprint(idx, MemoryProfile::Cmi).bytes_per_feature, 6.75);
    EXPECT_EQ(memory_footprint(idx, MemoryProfile::He).bytes_per_feature, 12.0);
    EXPECT_EQ(memory_footprint(idx, MemoryProfile::CmiHe).bytes_per_feature, 14.75);
    const auto m = memory_footprint(idx, MemoryProfile::CmiHe);
    EXPECT_EQ(m.features, 2U);
    EXPECT_EQ(m.total_bytes, 30U);  // ceil(29.5)
    EXPECT_EQ(m.directory_bytes, 24U);
}

TEST(Memory, MillionFeatures) {
    Corpus c;
    // 1000 images x 1000 features
    std::vector<FeatureTuple> feats(1000, tuple_at(0, 0));
    for (ImageId i = 0; i < 1000; ++i) {
        c.push_back(image(i, i / 4, feats));
    }
    const MultiIndex idx = build_multi_index(c, sift4(), color4(), nullptr);
    const auto m = memory_footprint(idx, MemoryProfile::CmiHe);
    EXPECT_EQ(m.features, 1000000U);
    EXPECT_EQ(m.total_bytes, 14750000U);
}

TEST(IndexProperties, PostingConservationAndCounts) {
    const auto& p = synth_pipeline();
    const MultiIndex idx = build_multi_index(p.corpus, p.sift_book, p.color_book, &p.he);
    const Recount r = recount(p.corpus, p.sift_book, &p.color_book);
    EXPECT_EQ(idx.posting_count(), total_features(p.corpus));
    EXPECT_EQ(idx.entry_count(), r.postings.size());
    for (const auto& e : idx.entries()) {
        const auto list = idx.postings(e);
        std::set<ImageId> distinct;
        for (std::size_t k = 0; k < list.size(); ++k) {
            distinct.insert(list[k].image_id);
            if (k > 0) {
                ASSERT_LE(list[k - 1].image_id, list[k].image_id);
            }
        }
        ASSERT_EQ(idx.idf_table().images_with(e.key), distinct.size());
        ASSERT_LE(distinct.size(), list.size());
        ASSERT_EQ(distinct, r.images.at(e.key));
        ASSERT_EQ(list.size(), r.postings.at(e.key));
        ASSERT_LT(e.key.sift, 64U);
        ASSERT_LT(e.key.color, 24U);
    }
}

TEST(IndexProperties, NormsRecomputableFromIndex) {
    const auto& p = synth_pipeline();
    const MultiIndex idx = build_multi_index(p.corpus, p.sift_book, p.color_book, nullptr);
    std::map<ImageId, double> sq;
    for (const auto& e : idx.entries()) {
        std::map<ImageId, int> count;
        for (const auto& post : idx.postings(e)) {
            ++count[post.image_id];
        }
        for (auto [id, n] : count) {
            sq[id] += double(n) * n;
        }
    }
    for (const auto& img : p.corpus) {
        EXPECT_NEAR(idx.norm_table().norm(img.image_id), std::sqrt(sq[img.image_id]), 1e-12);
    }
}

TEST(IndexProperties, FreezeIsIrreversible) {
    MultiIndex idx(4, 4, false);
    const std::vector<std::pair<WordPair, Posting>> feats{{{0, 0}, Posting{1, {}, {}}}};
    idx.add_image(1, feats);
    EXPECT_THROW(idx.add_image(1, feats), InvalidInput);
    idx.freeze();
    const std::vector<std::pair<WordPair, Posting>> more{{{0, 0}, Posting{2, {}, {}}}};
    EXPECT_THROW(idx.add_image(2, more), StateError);
    EXPECT_THROW(idx.freeze(), StateError);
    const std::vector<std::pair<WordPair, Posting>> off_grid{{{9, 0}, Posting{3, {}, {}}}};
    MultiIndex other(4, 4, false);
    EXPECT_THROW(other.add_image(3, off_grid), InvalidInput);
    EXPECT_THROW(memory_footprint(other, MemoryProfile::Cmi), StateError);
}

TEST(IndexFile, EmptyRoundTrip) {
    const MultiIndex idx = build_multi_index({}, sift4(), color4(), nullptr);
    std::stringstream s(bytes_of(idx));
    EXPECT_TRUE(read_index<Posting>(s).same_content(idx));
}

TEST(IndexFile, SyntheticRoundTripIsByteIdentical) {
    const auto& p = synth_pipeline();
    const MultiIndex idx = build_multi_index(p.corpus, p.sift_book, p.color_book, &p.he);
    ASSERT_EQ(p.corpus.size(), 400U);
    const std::string first = bytes_of(idx);
    std::stringstream s(first);
    const MultiIndex loaded = read_index<Posting>(s);
    EXPECT_TRUE(loaded.same_content(idx));
    EXPECT_EQ(bytes_of(loaded), first);
    // rebuilding gives the same bytes
    EXPECT_EQ(bytes_of(build_multi_index(p.corpus, p.sift_book, p.color_book, &p.he)), first);

    const BaselineIndex base = build_baseline_index(p.corpus, p.sift_book, &p.he);
    const std::string b = bytes_of(base);
    std::stringstream bs(b);
    const BaselineIndex base_loaded = read_index<SiftPosting>(bs);
    EXPECT_TRUE(base_loaded.same_content(base));
    EXPECT_EQ(bytes_of(base_loaded), b);
}

TEST(IndexFile, CorruptionDetected) {
    const MultiIndex idx = build_multi_index({image(1, 0, {tuple_at(0, 0)}), image(2, 0, {tuple_at(1, 2)})}, sift4(),
                                             color4(), nullptr);
    const std::string good = bytes_of(idx);

    std::string bad = good;
    bad[0] = 'Q';
    std::stringstream a(bad);
    EXPECT_THROW(read_index<Posting>(a), FormatError);

    std::stringstream t(good.substr(0, good.size() - 1));
    EXPECT_THROW(read_index<Posting>(t), FormatError);

    std::stringstream extra(good + "x");
    EXPECT_THROW(read_index<Posting>(extra), FormatError);

    std::string ver = good;
    ver[4] = 2;
    std::stringstream v(ver);
    EXPECT_THROW(read_index<Posting>(v), FormatError);

    std::stringstream kind(good);
    EXPECT_THROW(read_index<SiftPosting>(kind), FormatError);
}
