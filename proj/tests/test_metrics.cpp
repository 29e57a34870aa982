#include <sstream>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace cmi;

namespace {

RankedList ranked(ImageId query, std::vector<ImageId> ids) {
    RankedList r;
    r.query_id = query;
    double s = 1.0;
    for (ImageId id : ids) {
        r.items.push_back({id, s});
        s *= 0.5;
    }
    return r;
}

// groups of four: {0..3}, {10..13}, {20..23}
GroundTruth truth4() {
    GroundTruth t;
    for (GroupId g = 0; g < 3; ++g) {
        for (ImageId k = 0; k < 4; ++k) {
            t.add(g * 10 + k, g);
        }
    }
    return t;
}

}  // namespace

TEST(NsScore, Examples) {
    const GroundTruth t = truth4();
    EXPECT_EQ(ns_score(ranked(0, {0, 1, 2, 3, 10}), t), 4.0);
    EXPECT_EQ(ns_score(ranked(0, {0, 10, 1, 11, 2}), t), 2.0);
    EXPECT_EQ(ns_score(ranked(0, {10, 11, 12, 13, 0}), t), 0.0);
    EXPECT_EQ(ns_score(ranked(0, {0}), t), 1.0);

    GroundTruth odd = t;
    odd.add(4, 0);
    EXPECT_THROW(ns_score(ranked(0, {0}), odd), InvalidInput);
}

TEST(NsScore, EqualsFourTimesRecallAtFour) {
    const GroundTruth t = truth4();
    const std::vector<std::vector<ImageId>> lists{
        {0, 1, 2, 3}, {1, 10, 0, 20}, {20, 21, 22, 23}, {3, 2, 13}, {}};
    for (const auto& l : lists) {
        int hits = 0;
        for (std::size_t k = 0; k < std::min<std::size_t>(4, l.size()); ++k) {
            hits += l[k] < 4;
        }
        EXPECT_EQ(ns_score(ranked(0, l), t), 4.0 * (hits / 4.0));
    }
}

TEST(AveragePrecision, Examples) {
    GroundTruth pair;
    pair.add(1, 0);
    pair.add(2, 0);
    pair.add(3, 1);
    pair.add(4, 1);
    EXPECT_EQ(*average_precision(ranked(1, {1, 2, 3}), pair), 1.0);
    EXPECT_EQ(*average_precision(ranked(1, {1, 3, 2}), pair), 0.5);

    GroundTruth three;
    three.add(1, 0);
    three.add(2, 0);
    three.add(3, 0);
    three.add(7, 1);
    three.add(8, 1);
    // relevant at ranks 1 and 3, self excluded
    EXPECT_EQ(*average_precision(ranked(1, {1, 2, 7, 3}), three), (1.0 + 2.0 / 3.0) / 2.0);
    EXPECT_DOUBLE_EQ(*average_precision(ranked(1, {2, 7, 3}), three), 5.0 / 6.0);
}

TEST(AveragePrecision, SkipsQueriesWithoutRelevant) {
    GroundTruth t;
    t.add(1, 0);
    t.add(2, 1);
    t.add(3, 1);
    EXPECT_FALSE(average_precision(ranked(1, {1, 2}), t).has_value());
    std::size_t skipped = 0;
    const double m = mean_average_precision({std::nullopt, 0.5, 1.0}, &skipped);
    EXPECT_EQ(skipped, 1U);
    EXPECT_EQ(m, 0.75);
}

TEST(AveragePrecision, DependsOnlyOnPositions) {
    const GroundTruth t = truth4();
    RankedList a = ranked(0, {10, 1, 11, 2, 3});
    RankedList b = a;
    for (std::size_t k = 0; k < b.items.size(); ++k) {
        b.items[k].score = 100.0 - static_cast<double>(k);
    }
    EXPECT_EQ(average_precision(a, t), average_precision(b, t));
    // unretrieved relevant images count as zero
    EXPECT_DOUBLE_EQ(*average_precision(ranked(0, {1}), t), 1.0 / 3.0);
}

TEST(TopK, Examples) {
    const GroundTruth t = truth4();
    EXPECT_EQ(top_k_precision(ranked(0, {1, 10}), t, 1), 1.0);
    EXPECT_EQ(top_k_precision(ranked(0, {10, 1}), t, 1), 0.0);
    EXPECT_EQ(top_k_precision(ranked(0, {10, 11, 12, 13, 20, 21, 1}), t, 10), 1.0);
    EXPECT_EQ(top_k_precision(ranked(0, {10, 11, 12, 13, 20, 21, 22, 23, 24, 25, 1}), t, 10), 0.0);
    // self does not count
    EXPECT_EQ(top_k_precision(ranked(0, {0, 10}), t, 1), 0.0);
    EXPECT_THROW(top_k_precision(ranked(0, {}), t, 0), InvalidInput);
}

TEST(PerfectRun, MapOneAndNsFour) {
    const GroundTruth t = truth4();
    std::vector<std::optional<double>> aps;
    double ns = 0.0;
    for (GroupId g = 0; g < 3; ++g) {
        for (ImageId k = 0; k < 4; ++k) {
            const ImageId q = g * 10 + k;
            std::vector<ImageId> ids{q};
            for (ImageId o = 0; o < 4; ++o) {
                if (o != k) {
                    ids.push_back(g * 10 + o);
                }
            }
            for (ImageId other = 0; other < 30; other += 10) {
                if (other != g * 10) {
                    ids.push_back(other);
                }
            }
            aps.push_back(average_precision(ranked(q, ids), t));
            ns += ns_score(ranked(q, ids), t);
        }
    }
    EXPECT_EQ(mean_average_precision(aps), 1.0);
    EXPECT_EQ(ns / 12.0, 4.0);
}

TEST(TruthFile, RoundTripAndErrors) {
    SynthConfig cfg;
    cfg.groups = 3;
    cfg.features_per_image = 1;
    const Corpus c = generate_synthetic_corpus(cfg, 1);
    std::stringstream s;
    write_ground_truth(s, c);
    const GroundTruth t = read_ground_truth(s);
    EXPECT_EQ(t.size(), c.size());
    for (const auto& img : c) {
        EXPECT_EQ(t.group_of(img.image_id), img.group_id);
    }
    std::stringstream bad("1 2 3\n");
    EXPECT_THROW(read_ground_truth(bad), FormatError);
    std::stringstream dup("1 2\n1 3\n");
    EXPECT_THROW(read_ground_truth(dup), FormatError);
}

TEST(Config, ParsesQueryParams) {
    std::stringstream in(
        "# comment\n"
        "ma_sift = 1\n"
        "ma_color = auto\n"
        "kappa_color=5\n"
        "sigma_sift = 8.5\n"
        "enable_burst = true\n"
        "enable_sift_he = false\n");
    const KeyValueConfig cfg = KeyValueConfig::parse(in);
    QueryParams p;
    read_query_params(cfg, p);
    EXPECT_EQ(p.ma_sift, 1U);
    EXPECT_FALSE(p.ma_color.has_value());
    EXPECT_EQ(p.kappa_color, 5U);
    EXPECT_EQ(p.sigma_sift, 8.5);
    EXPECT_TRUE(p.enable_burst);
    EXPECT_FALSE(p.enable_sift_he);
    EXPECT_TRUE(cfg.unused_keys().empty());

    std::stringstream again(format_query_params(p));
    QueryParams q;
    read_query_params(KeyValueConfig::parse(again), q);
    EXPECT_EQ(format_query_params(q), format_query_params(p));
}

TEST(Config, Errors) {
    std::stringstream dup("a = 1\na = 2\n");
    EXPECT_THROW(KeyValueConfig::parse(dup), ConfigError);
    std::stringstream no_eq("just words\n");
    EXPECT_THROW(KeyValueConfig::parse(no_eq), ConfigError);
    std::stringstream bad_num("ma_sift = three\n");
    QueryParams p;
    EXPECT_THROW(read_query_params(KeyValueConfig::parse(bad_num), p), ConfigError);
    std::stringstream bad_bool("enable_burst = maybe\n");
    EXPECT_THROW(read_query_params(KeyValueConfig::parse(bad_bool), p), ConfigError);
    std::stringstream unknown("typo_key = 1\n");
    EXPECT_THROW(read_experiment_config(KeyValueConfig::parse(unknown)), ConfigError);
    EXPECT_THROW(KeyValueConfig::load("/nonexistent/params.cfg"), ConfigError);
}

namespace {

ExperimentConfig small_experiment() {
    ExperimentConfig c;
    c.synth.groups = 12;
    c.synth.features_per_image = 15;
    c.synth.sift_share = 0.5;
    c.synth.shared_sift_centers = 8;
    c.seed = 4;
    c.k_sift = 32;
    c.k_color = 16;
    c.kmeans_iters = 4;
    return c;
}

}  // namespace

TEST(Experiment, AblationGridHasOneRowPerCombination) {
    const MetricsReport r = run_experiment(small_experiment());
    ASSERT_EQ(r.rows.size(), 16U);
    std::set<std::tuple<bool, bool, bool, bool>> combos;
    for (const auto& row : r.rows) {
        combos.insert({row.cmi, row.burst, row.sift_he, row.sift_ma});
        ASSERT_TRUE(row.ns_score.has_value());
        EXPECT_GE(*row.ns_score, 0.0);
        EXPECT_LE(*row.ns_score, 4.0);
        EXPECT_GE(row.map, 0.0);
        EXPECT_LE(row.map, 1.0);
        // aggregates are means of the per-query breakdown
        double ns = 0.0;
        double ap = 0.0;
        double t1 = 0.0;
        double t10 = 0.0;
        for (const auto& q : row.per_query) {
            ns += *q.ns;
            ap += *q.ap;
            t1 += q.top1;
            t10 += q.top10;
        }
        const double n = static_cast<double>(row.per_query.size());
        EXPECT_NEAR(*row.ns_score, ns / n, 1e-12);
        EXPECT_NEAR(row.map, ap / n, 1e-12);
        EXPECT_NEAR(row.top1, t1 / n, 1e-12);
        EXPECT_NEAR(row.top10, t10 / n, 1e-12);
    }
    EXPECT_EQ(combos.size(), 16U);
}

TEST(Experiment, DeterministicReport) {
    const auto a = run_experiment(small_experiment());
    const auto b = run_experiment(small_experiment());
    EXPECT_EQ(format_report(a), format_report(b));
    EXPECT_EQ(report_to_json(a).dump(), report_to_json(b).dump());
}

TEST(Experiment, MissingCorpusIsConfigError) {
    ExperimentConfig c = small_experiment();
    c.corpus_path = "/nonexistent/corpus.cmid";
    EXPECT_THROW(run_experiment(c), ConfigError);
}
