#pragma once

// Experiment harness: corpus generation or loading, codebook and HE
// training, index construction, querying every image in turn and scoring
// the ranked lists. Optionally sweeps the c-MI / burstiness / SIFT HE /
// SIFT MA ablation grid.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmi/codebook.hpp"
#include "cmi/config.hpp"
#include "cmi/detail/parallel.hpp"
#include "cmi/features.hpp"
#include "cmi/index.hpp"
#include "cmi/metrics.hpp"
#include "cmi/query.hpp"
#include "cmi/signatures.hpp"

namespace cmi {

struct QueryMetrics {
    ImageId query_id = 0;
    std::optional<double> ns;
    std::optional<double> ap;
    double top1 = 0.0;
    double top10 = 0.0;
    TraversalStats stats;
};

struct MethodReport {
    std::string name;
    bool cmi = false;
    bool burst = false;
    bool sift_he = false;
    bool sift_ma = false;
    std::optional<double> ns_score;  // only when every group has 4 images
    double map = 0.0;
    double top1 = 0.0;
    double top10 = 0.0;
    std::size_t skipped_ap = 0;
    double mean_postings_visited = 0.0;
    double mean_entries_visited = 0.0;
    MemoryFootprint memory;
    std::vector<QueryMetrics> per_query;
};

struct MetricsReport {
    std::vector<std::pair<std::string, std::string>> header;
    std::vector<MethodReport> rows;
};

inline bool ukbench_style(const Corpus& queries, const GroundTruth& truth) {
    return !queries.empty() && std::all_of(queries.begin(), queries.end(), [&](const ImageRecord& q) {
               return truth.group_size(q.image_id) == 4;
           });
}

// Every query runs without self-exclusion; N-S counts the query itself,
// AP and top-k skip it.
inline MethodReport evaluate_queries(const Corpus& queries, const GroundTruth& truth,
                                     const std::function<QueryResult(const ImageRecord&)>& run) {
    MethodReport rep;
    rep.per_query.resize(queries.size());
    const bool with_ns = ukbench_style(queries, truth);
    parallel_for(queries.size(), [&](std::size_t q) {
        const QueryResult r = run(queries[q]);
        QueryMetrics& m = rep.per_query[q];
        m.query_id = queries[q].image_id;
        if (with_ns) {
            m.ns = ns_score(r.ranked, truth);
        }
        m.ap = average_precision(r.ranked, truth);
        m.top1 = top_k_precision(r.ranked, truth, 1);
        m.top10 = top_k_precision(r.ranked, truth, 10);
        m.stats = r.stats;
    });

    std::vector<std::optional<double>> aps;
    double ns = 0.0;
    double top1 = 0.0;
    double top10 = 0.0;
    double postings = 0.0;
    double entries = 0.0;
    for (const QueryMetrics& m : rep.per_query) {
        aps.push_back(m.ap);
        ns += m.ns.value_or(0.0);
        top1 += m.top1;
        top10 += m.top10;
        postings += static_cast<double>(m.stats.postings_visited);
        entries += static_cast<double>(m.stats.entries_visited);
    }
    const double n = queries.empty() ? 1.0 : static_cast<double>(queries.size());
    if (with_ns) {
        rep.ns_score = ns / n;
    }
    rep.map = mean_average_precision(aps, &rep.skipped_ap);
    rep.top1 = top1 / n;
    rep.top10 = top10 / n;
    rep.mean_postings_visited = postings / n;
    rep.mean_entries_visited = entries / n;
    return rep;
}

struct ExperimentConfig {
    std::optional<std::string> corpus_path;        // otherwise synthesized
    std::optional<std::string> train_corpus_path;  // otherwise the indexed corpus
    SynthConfig synth;
    std::uint64_t seed = 1;
    std::size_t k_sift = 1024;
    std::size_t k_color = 200;
    std::size_t kmeans_iters = 10;
    std::size_t max_train_samples = 0;
    std::size_t max_queries = 0;  // 0: every image
    bool ablation = true;         // full grid, else a single row
    bool single_cmi = true;       // method for the single row
    QueryParams params;
};

inline ExperimentConfig read_experiment_config(const KeyValueConfig& kv) {
    ExperimentConfig c;
    c.corpus_path = kv.get_string("corpus");
    c.train_corpus_path = kv.get_string("train_corpus");
    c.synth.groups = kv.get_or("groups", c.synth.groups);
    c.synth.images_per_group = kv.get_or("images_per_group", c.synth.images_per_group);
    c.synth.features_per_image = kv.get_or("features_per_image", c.synth.features_per_image);
    c.synth.noise = kv.get_or("noise", c.synth.noise);
    c.synth.illum = kv.get_or("illum", c.synth.illum);
    c.synth.sift_share = kv.get_or("sift_share", c.synth.sift_share);
    c.synth.shared_sift_centers = kv.get_or("shared_sift_centers", c.synth.shared_sift_centers);
    c.synth.colors_per_group = kv.get_or("colors_per_group", c.synth.colors_per_group);
    c.synth.pixels_per_patch = kv.get_or("pixels_per_patch", c.synth.pixels_per_patch);
    c.seed = kv.get_or("seed", c.seed);
    c.k_sift = kv.get_or("k_sift", c.k_sift);
    c.k_color = kv.get_or("k_color", c.k_color);
    c.kmeans_iters = kv.get_or("kmeans_iters", c.kmeans_iters);
    c.max_train_samples = kv.get_or("max_train_samples", c.max_train_samples);
    c.max_queries = kv.get_or("max_queries", c.max_queries);
    const std::string grid = kv.get_or<std::string>("grid", "ablation");
    if (grid != "ablation" && grid != "single") {
        throw ConfigError(kv.origin() + ": grid must be \"ablation\" or \"single\"");
    }
    c.ablation = grid == "ablation";
    const std::string method = kv.get_or<std::string>("method", "cmi");
    if (method != "cmi" && method != "baseline") {
        throw ConfigError(kv.origin() + ": method must be \"cmi\" or \"baseline\"");
    }
    c.single_cmi = method == "cmi";
    read_query_params(kv, c.params);
    kv.reject_unused();
    return c;
}

namespace detail {

inline Corpus load_corpus_checked(const std::string& path) {
    if (!std::filesystem::exists(path)) {
        throw ConfigError("missing input file: " + path);
    }
    return load_descriptors(path);
}

inline std::string fixed(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

inline MemoryProfile profile_for(bool cmi, bool he) {
    if (cmi) {
        return he ? MemoryProfile::CmiHe : MemoryProfile::Cmi;
    }
    return he ? MemoryProfile::He : MemoryProfile::Baseline;
}

}  // namespace detail

inline MetricsReport run_experiment(const ExperimentConfig& cfg) {
    Corpus corpus = cfg.corpus_path ? detail::load_corpus_checked(*cfg.corpus_path)
                                    : generate_synthetic_corpus(cfg.synth, cfg.seed);
    const Corpus train_holder = cfg.train_corpus_path ? detail::load_corpus_checked(*cfg.train_corpus_path) : Corpus{};
    const Corpus& train = cfg.train_corpus_path ? train_holder : corpus;

    const Codebook sift_book = train_kmeans(collect_samples(train, Family::Sift, cfg.max_train_samples, cfg.seed),
                                            cfg.k_sift, cfg.kmeans_iters, cfg.seed, Family::Sift);
    const Codebook color_book = train_kmeans(collect_samples(train, Family::Color, cfg.max_train_samples, cfg.seed + 1),
                                             cfg.k_color, cfg.kmeans_iters, cfg.seed + 1, Family::Color);
    const std::vector<HeSample> he_samples = collect_he_samples(train, sift_book);
    const HeModel he = train_he_model(he_samples, sift_book, cfg.seed + 2);

    const MultiIndex cmi_index = build_multi_index(corpus, sift_book, color_book, &he);
    const BaselineIndex base_index = build_baseline_index(corpus, sift_book, &he);
    const GroundTruth truth = GroundTruth::from_corpus(corpus);

    Corpus queries = corpus;
    if (cfg.max_queries > 0 && queries.size() > cfg.max_queries) {
        queries.resize(cfg.max_queries);
    }

    MetricsReport report;
    auto& h = report.header;
    h.emplace_back("source", cfg.corpus_path ? *cfg.corpus_path : std::string("synthetic"));
    h.emplace_back("seed", std::to_string(cfg.seed));
    h.emplace_back("images", std::to_string(corpus.size()));
    h.emplace_back("features", std::to_string(total_features(corpus)));
    h.emplace_back("queries", std::to_string(queries.size()));
    h.emplace_back("k_sift", std::to_string(sift_book.size()));
    h.emplace_back("k_color", std::to_string(color_book.size()));
    h.emplace_back("cmi_entries", std::to_string(cmi_index.entry_count()));
    h.emplace_back("baseline_entries", std::to_string(base_index.entry_count()));

    struct Combo {
        bool cmi, burst, he, ma;
    };
    std::vector<Combo> combos;
    if (cfg.ablation) {
        for (int cmi = 0; cmi < 2; ++cmi) {
            for (int burst = 0; burst < 2; ++burst) {
                for (int he_on = 0; he_on < 2; ++he_on) {
                    for (int ma = 0; ma < 2; ++ma) {
                        combos.push_back({cmi != 0, burst != 0, he_on != 0, ma != 0});
                    }
                }
            }
        }
    } else {
        combos.push_back({cfg.single_cmi, cfg.params.enable_burst, cfg.params.enable_sift_he, cfg.params.ma_sift > 1});
    }

    for (const Combo& c : combos) {
        QueryParams p = cfg.params;
        p.enable_burst = c.burst;
        p.enable_sift_he = c.he;
        if (cfg.ablation) {
            p.ma_sift = c.ma ? std::max<std::uint32_t>(cfg.params.ma_sift, 1) : 1;
        }
        MethodReport row;
        if (c.cmi) {
            row = evaluate_queries(queries, truth, [&](const ImageRecord& q) {
                return query_multi_index(q, cmi_index, sift_book, color_book, &he, p);
            });
            row.memory = memory_footprint(cmi_index, detail::profile_for(true, c.he));
        } else {
            row = evaluate_queries(queries, truth, [&](const ImageRecord& q) {
                return query_baseline(q, base_index, sift_book, &he, p);
            });
            row.memory = memory_footprint(base_index, detail::profile_for(false, c.he));
        }
        row.cmi = c.cmi;
        row.burst = c.burst;
        row.sift_he = c.he;
        row.sift_ma = p.ma_sift > 1;
        row.name = c.cmi ? "c-MI" : "BoW";
        report.rows.push_back(std::move(row));
    }
    return report;
}

inline MetricsReport run_experiment(const std::string& config_path) {
    return run_experiment(read_experiment_config(KeyValueConfig::load(config_path)));
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

inline std::string format_report(const MetricsReport& r) {
    std::ostringstream out;
    out << "[experiment]\n";
    for (const auto& [k, v] : r.header) {
        out << k << " = " << v << '\n';
    }
    out << "\n[results]\n";
    char line[256];
    std::snprintf(line, sizeof line, "%-6s %-4s %-5s %-4s %-4s %7s %8s %8s %8s %12s %10s %10s\n", "method", "cmi",
                  "burst", "he", "ma", "N-S", "mAP", "top1", "top10", "postings/q", "entries/q", "bytes/feat");
    out << line;
    auto mark = [](bool b) { return b ? "x" : "-"; };
    for (const MethodReport& m : r.rows) {
        std::snprintf(line, sizeof line, "%-6s %-4s %-5s %-4s %-4s %7s %8s %8s %8s %12s %10s %10s\n", m.name.c_str(),
                      mark(m.cmi), mark(m.burst), mark(m.sift_he), mark(m.sift_ma),
                      m.ns_score ? detail::fixed(*m.ns_score, 3).c_str() : "n/a", detail::fixed(m.map).c_str(),
                      detail::fixed(m.top1).c_str(), detail::fixed(m.top10).c_str(),
                      detail::fixed(m.mean_postings_visited, 1).c_str(), detail::fixed(m.mean_entries_visited, 1).c_str(),
                      detail::fixed(m.memory.bytes_per_feature, 2).c_str());
        out << line;
    }
    return out.str();
}

inline nlohmann::json report_to_json(const MetricsReport& r) {
    using nlohmann::json;
    json j;
    json header = json::object();
    for (const auto& [k, v] : r.header) {
        header[k] = v;
    }
    j["experiment"] = header;
    j["results"] = json::array();
    for (const MethodReport& m : r.rows) {
        json row;
        row["method"] = m.name;
        row["cmi"] = m.cmi;
        row["burst"] = m.burst;
        row["sift_he"] = m.sift_he;
        row["sift_ma"] = m.sift_ma;
        row["ns_score"] = m.ns_score ? json(*m.ns_score) : json(nullptr);
        row["map"] = m.map;
        row["top1"] = m.top1;
        row["top10"] = m.top10;
        row["skipped_ap"] = m.skipped_ap;
        row["mean_postings_visited"] = m.mean_postings_visited;
        row["mean_entries_visited"] = m.mean_entries_visited;
        row["memory"] = {{"bytes_per_feature", m.memory.bytes_per_feature},
                         {"total_bytes", m.memory.total_bytes},
                         {"directory_bytes", m.memory.directory_bytes},
                         {"features", m.memory.features}};
        json per = json::array();
        for (const QueryMetrics& q : m.per_query) {
            per.push_back({{"query", q.query_id},
                           {"ns", q.ns ? json(*q.ns) : json(nullptr)},
                           {"ap", q.ap ? json(*q.ap) : json(nullptr)},
                           {"top1", q.top1},
                           {"top10", q.top10},
                           {"postings_visited", q.stats.postings_visited},
                           {"entries_visited", q.stats.entries_visited}});
        }
        row["per_query"] = per;
        j["results"].push_back(row);
    }
    return j;
}

// rank,image_id,score rows for external plotting.
inline void write_ranked_csv(std::ostream& out, const std::vector<RankedList>& lists) {
    out << "query_id,rank,image_id,score\n";
    char buf[128];
    for (const RankedList& l : lists) {
        for (std::size_t r = 0; r < l.items.size(); ++r) {
            std::snprintf(buf, sizeof buf, "%u,%zu,%u,%.17g\n", l.query_id, r + 1, l.items[r].image_id,
                          l.items[r].score);
            out << buf;
        }
    }
}

}  // namespace cmi
