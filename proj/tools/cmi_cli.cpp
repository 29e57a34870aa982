// cmi: command-line front end for the coupled multi-index library.
//
// Exit codes: 0 success, 2 configuration error, 3 data-format error,
// 1 anything else.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <variant>

#include <CLI11.hpp>

#include "cmi/cmi.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitFormat = 3;

// Paths in a params file are relative to the file itself.
std::string resolve(const cmi::KeyValueConfig& cfg, const std::string& path) {
    fs::path p(path);
    if (p.is_absolute()) {
        return path;
    }
    return (fs::path(cfg.origin()).parent_path() / p).string();
}

std::string require_path(const cmi::KeyValueConfig& cfg, const std::string& key) {
    auto v = cfg.get_string(key);
    if (!v) {
        throw cmi::ConfigError(cfg.origin() + ": missing key \"" + key + "\"");
    }
    return resolve(cfg, *v);
}

std::optional<std::string> optional_path(const cmi::KeyValueConfig& cfg, const std::string& key) {
    auto v = cfg.get_string(key);
    if (!v) {
        return std::nullopt;
    }
    return resolve(cfg, *v);
}

cmi::Corpus load_corpus(const std::string& path) {
    if (!fs::exists(path)) {
        throw cmi::ConfigError("missing input file: " + path);
    }
    return cmi::load_descriptors(path);
}

using AnyIndex = std::variant<cmi::MultiIndex, cmi::BaselineIndex>;

AnyIndex load_any_index(const std::string& path) {
    if (!fs::exists(path)) {
        throw cmi::ConfigError("missing index file: " + path);
    }
    if (cmi::peek_index_file(path).has_color) {
        return cmi::load_index<cmi::Posting>(path);
    }
    return cmi::load_index<cmi::SiftPosting>(path);
}

// Everything a query needs besides the index, read from a params file:
// QueryParams fields plus sift_book, color_book, he and queries paths.
struct QuerySetup {
    cmi::QueryParams params;
    cmi::Codebook sift_book;
    std::optional<cmi::Codebook> color_book;
    std::optional<cmi::HeModel> he;
    std::optional<std::string> queries_path;
};

QuerySetup load_query_setup(const std::string& params_path, bool needs_color) {
    const cmi::KeyValueConfig cfg = cmi::KeyValueConfig::load(params_path);
    QuerySetup s;
    cmi::read_query_params(cfg, s.params);
    s.sift_book = cmi::load_codebook(require_path(cfg, "sift_book"));
    if (needs_color) {
        s.color_book = cmi::load_codebook(require_path(cfg, "color_book"));
    } else {
        cfg.get_string("color_book");
    }
    if (auto he = optional_path(cfg, "he")) {
        s.he = cmi::load_he_model(*he);
    }
    s.queries_path = optional_path(cfg, "queries");
    cfg.reject_unused();
    return s;
}

cmi::QueryResult run_one(const AnyIndex& index, const QuerySetup& s, const cmi::ImageRecord& q,
                         const cmi::QueryParams& p) {
    const cmi::HeModel* he = s.he ? &*s.he : nullptr;
    if (const auto* mi = std::get_if<cmi::MultiIndex>(&index)) {
        return cmi::query_multi_index(q, *mi, s.sift_book, *s.color_book, he, p);
    }
    return cmi::query_baseline(q, std::get<cmi::BaselineIndex>(index), s.sift_book, he, p);
}

const cmi::ImageRecord& find_image(const cmi::Corpus& corpus, cmi::ImageId id) {
    for (const auto& img : corpus) {
        if (img.image_id == id) {
            return img;
        }
    }
    throw cmi::ConfigError("query image " + std::to_string(id) + " not found in the queries file");
}

cmi::GroundTruth load_truth(const std::string& path) {
    if (!fs::exists(path)) {
        throw cmi::ConfigError("missing truth file: " + path);
    }
    std::ifstream in(path, std::ios::binary);
    char magic[4] = {};
    in.read(magic, 4);
    in.clear();
    in.seekg(0);
    if (std::string_view(magic, 4) == cmi::kDescriptorMagic) {
        return cmi::GroundTruth::from_corpus(cmi::read_descriptors(in));
    }
    return cmi::read_ground_truth(in);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw cmi::ConfigError("cannot open for writing: " + path);
    }
    out << text;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Coupled multi-index (SIFT x Color Names) image retrieval"};
    app.require_subcommand(1);

    // gen-synth
    cmi::SynthConfig synth;
    std::uint64_t synth_seed = 1;
    std::string synth_out;
    std::string synth_truth;
    bool synth_text = false;
    auto* gen = app.add_subcommand("gen-synth", "Generate a seeded synthetic grouped corpus");
    gen->add_option("--groups", synth.groups)->capture_default_str();
    gen->add_option("--images-per-group", synth.images_per_group)->capture_default_str();
    gen->add_option("--features", synth.features_per_image, "Features per image")->capture_default_str();
    gen->add_option("--noise", synth.noise)->capture_default_str();
    gen->add_option("--illum", synth.illum)->capture_default_str();
    gen->add_option("--sift-share", synth.sift_share, "Fraction of SIFT centers drawn from the shared pool")
        ->capture_default_str();
    gen->add_option("--shared-sift-centers", synth.shared_sift_centers)->capture_default_str();
    gen->add_option("--colors-per-group", synth.colors_per_group)->capture_default_str();
    gen->add_option("--pixels-per-patch", synth.pixels_per_patch)->capture_default_str();
    gen->add_option("--seed", synth_seed)->capture_default_str();
    gen->add_option("--out", synth_out)->required();
    gen->add_option("--truth-out", synth_truth, "Also write an \"image_id group_id\" truth file");
    gen->add_flag("--text", synth_text, "Write the line-oriented text variant");

    // train-codebook
    std::string cb_family;
    std::size_t cb_k = 0;
    std::size_t cb_iters = 10;
    std::uint64_t cb_seed = 1;
    std::size_t cb_max_samples = 0;
    std::string cb_in;
    std::string cb_out;
    auto* tcb = app.add_subcommand("train-codebook", "Train a k-means codebook for one descriptor family");
    tcb->add_option("--family", cb_family)->required()->check(CLI::IsMember({"sift", "color"}));
    tcb->add_option("--k", cb_k)->required();
    tcb->add_option("--iters", cb_iters)->capture_default_str();
    tcb->add_option("--seed", cb_seed)->capture_default_str();
    tcb->add_option("--max-samples", cb_max_samples, "Subsample the training set (0 = all)")->capture_default_str();
    tcb->add_option("--in", cb_in)->required();
    tcb->add_option("--out", cb_out)->required();

    // train-he
    std::string he_book;
    std::string he_in;
    std::string he_out;
    std::uint64_t he_seed = 1;
    auto* the = app.add_subcommand("train-he", "Train the SIFT Hamming Embedding model");
    the->add_option("--sift-book", he_book)->required();
    the->add_option("--in", he_in)->required();
    the->add_option("--out", he_out)->required();
    the->add_option("--seed", he_seed)->capture_default_str();

    // build-index
    std::string bi_mode;
    std::string bi_sift;
    std::string bi_color;
    std::string bi_he;
    std::string bi_in;
    std::string bi_out;
    auto* bld = app.add_subcommand("build-index", "Build a c-MI or 1-D baseline index");
    bld->add_option("--mode", bi_mode)->required()->check(CLI::IsMember({"baseline", "cmi"}));
    bld->add_option("--sift-book", bi_sift)->required();
    bld->add_option("--color-book", bi_color);
    bld->add_option("--he", bi_he, "HE model; omit to build without SIFT signatures");
    bld->add_option("--in", bi_in)->required();
    bld->add_option("--out", bi_out)->required();

    // query
    std::string q_index;
    std::string q_params;
    cmi::ImageId q_id = 0;
    std::size_t q_top = 0;
    bool q_exclude = false;
    auto* qry = app.add_subcommand("query", "Rank database images for one query image");
    qry->add_option("--index", q_index)->required();
    qry->add_option("--params", q_params)->required();
    qry->add_option("--query-id", q_id)->required();
    qry->add_option("--top", q_top, "Print at most this many results (0 = all)");
    qry->add_flag("--exclude-self", q_exclude, "Drop the query image from its own ranking");

    // evaluate
    std::string ev_index;
    std::string ev_truth;
    std::string ev_params;
    std::string ev_report;
    std::string ev_csv;
    auto* eva = app.add_subcommand("evaluate", "Query every image and score the rankings");
    eva->add_option("--index", ev_index)->required();
    eva->add_option("--truth", ev_truth, "Truth file or descriptor file with group ids")->required();
    eva->add_option("--params", ev_params)->required();
    eva->add_option("--report", ev_report, "Text report; a .json sidecar is written next to it")->required();
    eva->add_option("--csv", ev_csv, "Also write ranked lists as CSV");

    // bench
    std::string bn_index;
    std::string bn_params;
    auto* bnc = app.add_subcommand("bench", "Report traversal statistics and memory footprint");
    bnc->add_option("--index", bn_index)->required();
    bnc->add_option("--params", bn_params)->required();

    // experiment
    std::string ex_config;
    std::string ex_report;
    auto* exp = app.add_subcommand("experiment", "Run a full generate/train/build/query/score experiment");
    exp->add_option("--config", ex_config)->required();
    exp->add_option("--report", ex_report, "Text report path (stdout if omitted); .json sidecar alongside");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (*gen) {
            const cmi::Corpus corpus = cmi::generate_synthetic_corpus(synth, synth_seed);
            cmi::save_descriptors(synth_out, corpus, synth_text);
            if (!synth_truth.empty()) {
                std::ofstream out(synth_truth);
                if (!out) {
                    throw cmi::ConfigError("cannot open for writing: " + synth_truth);
                }
                cmi::write_ground_truth(out, corpus);
            }
            std::cout << "wrote " << corpus.size() << " images, " << cmi::total_features(corpus) << " features to "
                      << synth_out << '\n';
        } else if (*tcb) {
            const cmi::Family family = cb_family == "sift" ? cmi::Family::Sift : cmi::Family::Color;
            const cmi::Corpus corpus = load_corpus(cb_in);
            cmi::KMeansReport rep;
            const cmi::Codebook book = cmi::train_kmeans(cmi::collect_samples(corpus, family, cb_max_samples, cb_seed),
                                                         cb_k, cb_iters, cb_seed, family, &rep);
            cmi::save_codebook(cb_out, book);
            std::cout << "trained " << cb_family << " codebook k=" << book.size() << " in " << rep.iterations
                      << " iterations, objective " << rep.objective.back() << '\n';
        } else if (*the) {
            const cmi::Codebook book = cmi::load_codebook(he_book);
            const cmi::Corpus corpus = load_corpus(he_in);
            cmi::HeTrainingReport rep;
            const cmi::HeModel model = cmi::train_he_model(cmi::collect_he_samples(corpus, book), book, he_seed, &rep);
            cmi::save_he_model(he_out, model);
            std::cout << "trained HE model for " << model.word_count() << " words";
            if (!rep.words_without_samples.empty()) {
                std::cout << " (" << rep.words_without_samples.size() << " words without samples, zero thresholds)";
            }
            std::cout << '\n';
        } else if (*bld) {
            const cmi::Codebook sift_book = cmi::load_codebook(bi_sift);
            std::optional<cmi::HeModel> he;
            if (!bi_he.empty()) {
                he = cmi::load_he_model(bi_he);
            }
            const cmi::Corpus corpus = load_corpus(bi_in);
            if (bi_mode == "cmi") {
                if (bi_color.empty()) {
                    throw cmi::ConfigError("build-index --mode cmi needs --color-book");
                }
                const cmi::Codebook color_book = cmi::load_codebook(bi_color);
                const auto index = cmi::build_multi_index(corpus, sift_book, color_book, he ? &*he : nullptr);
                cmi::save_index(bi_out, index);
                std::cout << "c-MI index: " << index.image_count() << " images, " << index.entry_count()
                          << " entries, " << index.posting_count() << " postings\n";
            } else {
                const auto index = cmi::build_baseline_index(corpus, sift_book, he ? &*he : nullptr);
                cmi::save_index(bi_out, index);
                std::cout << "baseline index: " << index.image_count() << " images, " << index.entry_count()
                          << " entries, " << index.posting_count() << " postings\n";
            }
        } else if (*qry) {
            const AnyIndex index = load_any_index(q_index);
            const QuerySetup setup = load_query_setup(q_params, std::holds_alternative<cmi::MultiIndex>(index));
            if (!setup.queries_path) {
                throw cmi::ConfigError(q_params + ": missing key \"queries\"");
            }
            const cmi::Corpus queries = load_corpus(*setup.queries_path);
            cmi::QueryParams p = setup.params;
            if (q_exclude) {
                p.exclude_image = q_id;
            }
            const cmi::QueryResult r = run_one(index, setup, find_image(queries, q_id), p);
            std::cout << "# query " << q_id << ": " << r.stats.postings_visited << " postings, "
                      << r.stats.entries_visited << " entries visited\n";
            std::cout << "rank image_id score\n";
            const std::size_t n = q_top == 0 ? r.ranked.items.size() : std::min(q_top, r.ranked.items.size());
            for (std::size_t i = 0; i < n; ++i) {
                std::printf("%zu %u %.9g\n", i + 1, r.ranked.items[i].image_id, r.ranked.items[i].score);
            }
        } else if (*eva) {
            const AnyIndex index = load_any_index(ev_index);
            const bool cmi_mode = std::holds_alternative<cmi::MultiIndex>(index);
            const QuerySetup setup = load_query_setup(ev_params, cmi_mode);
            const cmi::GroundTruth truth = load_truth(ev_truth);
            const cmi::Corpus queries = load_corpus(setup.queries_path ? *setup.queries_path : ev_truth);
            std::vector<cmi::RankedList> lists(queries.size());
            cmi::MethodReport row = cmi::evaluate_queries(queries, truth, [&](const cmi::ImageRecord& q) {
                cmi::QueryResult r = run_one(index, setup, q, setup.params);
                if (!ev_csv.empty()) {
                    lists[static_cast<std::size_t>(&q - queries.data())] = r.ranked;
                }
                return r;
            });
            row.name = cmi_mode ? "c-MI" : "BoW";
            row.cmi = cmi_mode;
            row.burst = setup.params.enable_burst;
            row.sift_he = setup.params.enable_sift_he;
            row.sift_ma = setup.params.ma_sift > 1;
            const bool he_bits = std::visit([](const auto& i) { return i.has_he(); }, index);
            const auto profile = cmi_mode ? (he_bits ? cmi::MemoryProfile::CmiHe : cmi::MemoryProfile::Cmi)
                                          : (he_bits ? cmi::MemoryProfile::He : cmi::MemoryProfile::Baseline);
            row.memory = std::visit([&](const auto& i) { return cmi::memory_footprint(i, profile); }, index);
            cmi::MetricsReport report;
            report.header.emplace_back("index", ev_index);
            report.header.emplace_back("queries", std::to_string(queries.size()));
            report.rows.push_back(std::move(row));
            write_text(ev_report, cmi::format_report(report));
            write_text(ev_report + ".json", cmi::report_to_json(report).dump(2) + "\n");
            if (!ev_csv.empty()) {
                std::ofstream csv(ev_csv);
                if (!csv) {
                    throw cmi::ConfigError("cannot open for writing: " + ev_csv);
                }
                cmi::write_ranked_csv(csv, lists);
            }
            std::cout << cmi::format_report(report);
        } else if (*bnc) {
            const AnyIndex index = load_any_index(bn_index);
            const bool cmi_mode = std::holds_alternative<cmi::MultiIndex>(index);
            const QuerySetup setup = load_query_setup(bn_params, cmi_mode);
            if (!setup.queries_path) {
                throw cmi::ConfigError(bn_params + ": missing key \"queries\"");
            }
            const cmi::Corpus queries = load_corpus(*setup.queries_path);
            cmi::TraversalStats total;
            for (const auto& q : queries) {
                total += run_one(index, setup, q, setup.params).stats;
            }
            const double n = queries.empty() ? 1.0 : static_cast<double>(queries.size());
            std::cout << "[traversal]\n";
            std::cout << "queries = " << queries.size() << '\n';
            std::cout << "postings_visited_total = " << total.postings_visited << '\n';
            std::cout << "entries_visited_total = " << total.entries_visited << '\n';
            std::printf("postings_visited_per_query = %.3f\n", static_cast<double>(total.postings_visited) / n);
            std::printf("entries_visited_per_query = %.3f\n", static_cast<double>(total.entries_visited) / n);
            std::cout << "\n[memory]\n";
            for (auto profile : {cmi::MemoryProfile::Baseline, cmi::MemoryProfile::Cmi, cmi::MemoryProfile::He,
                                 cmi::MemoryProfile::CmiHe}) {
                const auto m = std::visit([&](const auto& i) { return cmi::memory_footprint(i, profile); }, index);
                std::printf("%-9s bytes_per_feature = %.2f total_bytes = %llu directory_bytes = %llu\n",
                            cmi::to_string(profile).c_str(), m.bytes_per_feature,
                            static_cast<unsigned long long>(m.total_bytes),
                            static_cast<unsigned long long>(m.directory_bytes));
            }
        } else if (*exp) {
            const cmi::MetricsReport report = cmi::run_experiment(ex_config);
            const std::string text = cmi::format_report(report);
            if (ex_report.empty()) {
                std::cout << text;
            } else {
                write_text(ex_report, text);
                write_text(ex_report + ".json", cmi::report_to_json(report).dump(2) + "\n");
                std::cout << text;
            }
        }
    } catch (const cmi::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const cmi::FormatError& e) {
        std::cerr << "format error: " << e.what() << '\n';
        return kExitFormat;
    } catch (const cmi::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
