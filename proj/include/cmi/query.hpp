#pragma once

// Online retrieval over a frozen index.
//
// Every query tuple is multiply-assigned on both axes; each visited posting
// contributes match_weight * idf^2 to its image, optionally down-weighted by
// intra-image burstiness, and accumulated scores are divided by the l2 norms
// of the query and database TF histograms.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cmi/codebook.hpp"
#include "cmi/error.hpp"
#include "cmi/features.hpp"
#include "cmi/index.hpp"
#include "cmi/signatures.hpp"

namespace cmi {

struct QueryParams {
    std::uint32_t ma_sift = 3;
    std::optional<std::uint32_t> ma_color;  // unset: ceil(K_c / 2)
    std::uint32_t kappa_color = 7;
    double sigma_color = 4.0;
    std::uint32_t tau_sift = 30;
    double sigma_sift = 16.0;
    bool enable_sift_he = true;
    bool enable_color_he = true;
    bool enable_burst = false;
    bool log_idf = false;                   // log(N / n_ij) instead of N / n_ij
    std::optional<ImageId> exclude_image;   // drop this id from the ranked list
};

inline std::uint32_t default_ma_color(std::size_t color_words) {
    return static_cast<std::uint32_t>((color_words + 1) / 2);
}

// Throws ConfigError on a violated invariant; returns the effective color MA.
inline std::uint32_t validate(const QueryParams& p, std::size_t sift_words, std::size_t color_words) {
    auto bad = [](const std::string& m) { return ConfigError("query params: " + m); };
    if (p.ma_sift < 1 || p.ma_sift > sift_words) {
        throw bad("ma_sift must be in [1, " + std::to_string(sift_words) + "]");
    }
    const std::uint32_t ma_color = p.ma_color.value_or(default_ma_color(color_words));
    if (ma_color < 1 || ma_color > color_words) {
        throw bad("ma_color must be in [1, " + std::to_string(color_words) + "]");
    }
    if (p.kappa_color > kCnBits) {
        throw bad("kappa_color must be in [0, 22]");
    }
    if (p.tau_sift > kSiftBits) {
        throw bad("tau_sift must be in [0, 64]");
    }
    if (!(p.sigma_color > 0.0) || !(p.sigma_sift > 0.0)) {
        throw bad("sigmas must be positive");
    }
    return ma_color;
}

struct ScoredImage {
    ImageId image_id = 0;
    double score = 0.0;

    friend bool operator==(const ScoredImage&, const ScoredImage&) = default;
};

// Sorted by (score desc, image_id asc); only images with a positive score.
struct RankedList {
    ImageId query_id = 0;
    std::vector<ScoredImage> items;

    friend bool operator==(const RankedList&, const RankedList&) = default;
};

struct TraversalStats {
    std::uint64_t postings_visited = 0;
    std::uint64_t entries_visited = 0;

    TraversalStats& operator+=(const TraversalStats& o) {
        postings_visited += o.postings_visited;
        entries_visited += o.entries_visited;
        return *this;
    }
    friend bool operator==(const TraversalStats&, const TraversalStats&) = default;
};

struct QueryResult {
    RankedList ranked;
    TraversalStats stats;
};

inline void sort_ranked(std::vector<ScoredImage>& items) {
    std::sort(items.begin(), items.end(), [](const ScoredImage& a, const ScoredImage& b) {
        return a.score != b.score ? a.score > b.score : a.image_id < b.image_id;
    });
}

// ---------------------------------------------------------------------------
// Match kernel
// ---------------------------------------------------------------------------

// exp(-d^2 / sigma^2) if d < threshold, else 0.
inline double gated_gaussian(unsigned d, unsigned threshold, double sigma) {
    if (d >= threshold) {
        return 0.0;
    }
    const double dd = static_cast<double>(d);
    return std::exp(-(dd * dd) / (sigma * sigma));
}

struct FeatureSignatures {
    SiftSignature sift;
    CnSignature color;
};

// Weight of a match between two tuples already filed under the same word
// pair. Disabled factors contribute 1.
inline double match_weight(const FeatureSignatures& q, const FeatureSignatures& db, const QueryParams& p) {
    double w = 1.0;
    if (p.enable_sift_he) {
        w *= gated_gaussian(hamming_distance(q.sift, db.sift), p.tau_sift, p.sigma_sift);
    }
    if (p.enable_color_he) {
        w *= gated_gaussian(hamming_distance(q.color, db.color), p.kappa_color, p.sigma_color);
    }
    return w;
}

inline double match_weight(const FeatureSignatures& q, const Posting& db, const QueryParams& p) {
    return match_weight(q, FeatureSignatures{db.sift_sig, db.cn_sig}, p);
}

// 1-D postings carry no color signature; only the SIFT factor applies.
inline double match_weight(const FeatureSignatures& q, const SiftPosting& db, const QueryParams& p) {
    if (!p.enable_sift_he) {
        return 1.0;
    }
    return gated_gaussian(hamming_distance(q.sift, db.sift_sig), p.tau_sift, p.sigma_sift);
}

inline double burst_factor(std::size_t matches) { return 1.0 / std::sqrt(static_cast<double>(matches)); }

// Scales every match of one query feature against one database image by
// t^(-1/2), t being the number of matches in the group.
inline std::vector<double> burstiness_reweight(std::span<const double> weights) {
    if (weights.empty()) {
        throw InvalidInput("burstiness group must hold at least one match");
    }
    const double f = burst_factor(weights.size());
    std::vector<double> out(weights.begin(), weights.end());
    for (double& w : out) {
        w *= f;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Index traversal
// ---------------------------------------------------------------------------

// A query tuple after quantization: the probed SIFT words (each with the
// SIFT signature computed against that word's thresholds) and color words.
struct QueryFeature {
    std::vector<WordId> sift_words;
    std::vector<SiftSignature> sift_sigs;  // aligned with sift_words
    std::vector<WordId> color_words;
    CnSignature color_sig;
    WordPair nearest;
};

namespace detail {

inline QueryFeature prepare_feature(const FeatureTuple& f, const Codebook& sift_book, const Codebook* color_book,
                                    const HeModel* he, std::uint32_t ma_sift, std::uint32_t ma_color) {
    QueryFeature q;
    Assignment sa = quantize_multiple(f.sift.values, sift_book, ma_sift);
    q.sift_words = std::move(sa.word_ids);
    q.sift_sigs.reserve(q.sift_words.size());
    for (WordId w : q.sift_words) {
        q.sift_sigs.push_back(he ? sift_signature(f.sift.values, w, *he) : SiftSignature{});
    }
    if (color_book) {
        Assignment ca = quantize_multiple(f.color.values, *color_book, ma_color);
        q.color_words = std::move(ca.word_ids);
        q.color_sig = cn_binarize(f.color);
    } else {
        q.color_words = {0};
    }
    q.nearest = {q.sift_words.front(), q.color_words.front()};
    return q;
}

inline double idf_weight(const IdfTable& table, WordPair key, bool log_idf) {
    const double v = table.idf(key);
    return log_idf ? std::log(v) : v;
}

template <class PostingT>
QueryResult traverse(ImageId query_id, const std::vector<QueryFeature>& features, double query_norm,
                     const InvertedIndex<PostingT>& index, const QueryParams& p) {
    QueryResult result;
    result.ranked.query_id = query_id;
    if (features.empty()) {
        return result;
    }
    const NormTable& norms = index.norm_table();
    const IdfTable& idf = index.idf_table();
    std::vector<double> acc(norms.size(), 0.0);
    std::vector<double> group_sum(norms.size(), 0.0);
    std::vector<std::uint32_t> group_count(norms.size(), 0);
    std::vector<std::uint32_t> touched;

    for (const QueryFeature& q : features) {
        for (std::size_t si = 0; si < q.sift_words.size(); ++si) {
            const FeatureSignatures sigs{q.sift_sigs[si], q.color_sig};
            for (WordId j : q.color_words) {
                const WordPair key{q.sift_words[si], j};
                const auto* entry = index.find(key);
                if (!entry) {
                    continue;
                }
                ++result.stats.entries_visited;
                const double idf_w = idf_weight(idf, key, p.log_idf);
                const double idf2 = idf_w * idf_w;
                auto postings = index.postings(*entry);
                auto slots = index.slots(*entry);
                result.stats.postings_visited += postings.size();
                for (std::size_t k = 0; k < postings.size(); ++k) {
                    const double w = match_weight(sigs, postings[k], p);
                    if (w <= 0.0) {
                        continue;
                    }
                    const std::uint32_t s = slots[k];
                    if (group_count[s] == 0) {
                        touched.push_back(s);
                    }
                    ++group_count[s];
                    group_sum[s] += w * idf2;
                }
            }
        }
        for (std::uint32_t s : touched) {
            acc[s] += p.enable_burst ? group_sum[s] * burst_factor(group_count[s]) : group_sum[s];
            group_sum[s] = 0.0;
            group_count[s] = 0;
        }
        touched.clear();
    }

    for (std::size_t s = 0; s < acc.size(); ++s) {
        if (acc[s] <= 0.0) {
            continue;
        }
        const ImageId id = norms.image_ids()[s];
        if (p.exclude_image && *p.exclude_image == id) {
            continue;
        }
        result.ranked.items.push_back({id, acc[s] / (query_norm * norms.norms()[s])});
    }
    sort_ranked(result.ranked.items);
    return result;
}

inline void check_books(std::size_t index_sift, std::size_t index_color, const Codebook& sift_book,
                        const Codebook* color_book) {
    require_family(sift_book, Family::Sift);
    if (sift_book.size() < index_sift) {
        throw ConfigError("SIFT codebook smaller than the index grid");
    }
    if (color_book) {
        require_family(*color_book, Family::Color);
        if (color_book->size() < index_color) {
            throw ConfigError("color codebook smaller than the index grid");
        }
    }
}

inline void check_sift_he(const QueryParams& p, const HeModel* he, bool index_has_he, const Codebook& sift_book) {
    if (!p.enable_sift_he) {
        return;
    }
    if (!he || !index_has_he) {
        throw ConfigError("enable_sift_he requires an HE model and an index built with SIFT signatures");
    }
    if (he->word_count() != sift_book.size()) {
        throw ConfigError("HE model does not match the SIFT codebook");
    }
}

template <class PostingT>
QueryResult run_query(const ImageRecord& query, const InvertedIndex<PostingT>& index, const Codebook& sift_book,
                      const Codebook* color_book, const HeModel* he, const QueryParams& p) {
    if (!index.frozen()) {
        throw StateError("queries need a frozen index");
    }
    check_books(index.sift_words(), index.color_words(), sift_book, color_book);
    const std::uint32_t ma_color = validate(p, sift_book.size(), color_book ? color_book->size() : 1);
    check_sift_he(p, he, index.has_he(), sift_book);
    const HeModel* sig_model = p.enable_sift_he ? he : nullptr;

    std::vector<QueryFeature> features;
    features.reserve(query.features.size());
    WordHistogram hist;
    for (const FeatureTuple& f : query.features) {
        features.push_back(prepare_feature(f, sift_book, color_book, sig_model, p.ma_sift, ma_color));
        ++hist[features.back().nearest];
    }
    const double qnorm = hist.empty() ? 0.0 : image_norm(hist);
    return traverse(query.image_id, features, qnorm, index, p);
}

}  // namespace detail

inline QueryResult query_multi_index(const ImageRecord& query, const MultiIndex& index, const Codebook& sift_book,
                                     const Codebook& color_book, const HeModel* he, const QueryParams& params) {
    return detail::run_query(query, index, sift_book, &color_book, he, params);
}

// The color dimension is absent: color MA and color HE do not apply.
inline QueryResult query_baseline(const ImageRecord& query, const BaselineIndex& index, const Codebook& sift_book,
                                  const HeModel* he, const QueryParams& params) {
    QueryParams p = params;
    p.ma_color = 1;
    p.enable_color_he = false;
    return detail::run_query(query, index, sift_book, nullptr, he, p);
}

// ---------------------------------------------------------------------------
// Brute-force oracle
//
// Scores a query against a raw corpus with a direct double loop over all
// query/database tuple pairs. Quantization, signatures, pair document
// frequencies and histogram norms are recomputed from the corpus; no index
// structure is involved. A null color codebook scores the 1-D baseline.
// ---------------------------------------------------------------------------

class BruteForceScorer {
  public:
    BruteForceScorer(const Corpus& corpus, const Codebook& sift_book, const Codebook* color_book, const HeModel* he)
        : sift_book_(sift_book), color_book_(color_book), he_(he) {
        require_family(sift_book, Family::Sift);
        if (color_book) {
            require_family(*color_book, Family::Color);
        }
        std::map<std::pair<WordId, WordId>, std::set<ImageId>> holders;
        for (const ImageRecord& img : corpus) {
            DbImage db;
            db.id = img.image_id;
            std::map<std::pair<WordId, WordId>, std::uint32_t> tf;
            for (const FeatureTuple& f : img.features) {
                DbFeature d;
                d.sift_word = quantize_nearest(f.sift.values, sift_book);
                d.color_word = color_book ? quantize_nearest(f.color.values, *color_book) : 0;
                d.sift_sig = he ? sift_signature(f.sift.values, d.sift_word, *he) : SiftSignature{};
                d.cn_sig = cn_binarize(f.color);
                db.features.push_back(d);
                holders[{d.sift_word, d.color_word}].insert(img.image_id);
                ++tf[{d.sift_word, d.color_word}];
            }
            double sq = 0.0;
            for (const auto& [pair, c] : tf) {
                sq += double(c) * double(c);
            }
            db.norm = std::sqrt(sq);
            images_.push_back(std::move(db));
        }
        n_images_ = images_.size();
        for (const auto& [pair, ids] : holders) {
            n_ij_[pair] = ids.size();
        }
    }

    RankedList score(const ImageRecord& query, const QueryParams& params) const {
        QueryParams p = params;
        if (!color_book_) {
            p.ma_color = 1;
            p.enable_color_he = false;
        }
        const std::uint32_t ma_color = validate(p, sift_book_.size(), color_book_ ? color_book_->size() : 1);
        if (p.enable_sift_he && !he_) {
            throw ConfigError("enable_sift_he requires an HE model");
        }

        RankedList out;
        out.query_id = query.image_id;
        if (query.features.empty()) {
            return out;
        }

        std::map<std::pair<WordId, WordId>, std::uint32_t> qtf;
        struct Probe {
            std::vector<WordId> sift_words;
            std::vector<WordId> color_words;
            const FeatureTuple* tuple;
        };
        std::vector<Probe> probes;
        for (const FeatureTuple& f : query.features) {
            Probe pr{quantize_multiple(f.sift.values, sift_book_, p.ma_sift).word_ids,
                     color_book_ ? quantize_multiple(f.color.values, *color_book_, ma_color).word_ids
                                 : std::vector<WordId>{0},
                     &f};
            ++qtf[{pr.sift_words.front(), pr.color_words.front()}];
            probes.push_back(std::move(pr));
        }
        double qsq = 0.0;
        for (const auto& [pair, c] : qtf) {
            qsq += double(c) * double(c);
        }
        const double qnorm = std::sqrt(qsq);

        for (const DbImage& img : images_) {
            if (p.exclude_image && *p.exclude_image == img.id) {
                continue;
            }
            double numerator = 0.0;
            for (const Probe& pr : probes) {
                const CnSignature q_cn = cn_binarize(pr.tuple->color);
                double group = 0.0;
                std::size_t matches = 0;
                for (const DbFeature& y : img.features) {
                    auto si = std::find(pr.sift_words.begin(), pr.sift_words.end(), y.sift_word);
                    if (si == pr.sift_words.end() ||
                        std::find(pr.color_words.begin(), pr.color_words.end(), y.color_word) == pr.color_words.end()) {
                        continue;
                    }
                    double w = 1.0;
                    if (p.enable_sift_he) {
                        const auto q_sig = sift_signature(pr.tuple->sift.values, y.sift_word, *he_);
                        const int d = std::popcount(q_sig.bits ^ y.sift_sig.bits);
                        w *= d < static_cast<int>(p.tau_sift) ? std::exp(-double(d * d) / (p.sigma_sift * p.sigma_sift))
                                                              : 0.0;
                    }
                    if (color_book_ && p.enable_color_he) {
                        const int d = std::popcount((q_cn.bits ^ y.cn_sig.bits) & 0x3FFFFFU);
                        w *= d < static_cast<int>(p.kappa_color)
                                 ? std::exp(-double(d * d) / (p.sigma_color * p.sigma_color))
                                 : 0.0;
                    }
                    if (w <= 0.0) {
                        continue;
                    }
                    double idf = static_cast<double>(n_images_) /
                                 static_cast<double>(n_ij_.at({y.sift_word, y.color_word}));
                    if (p.log_idf) {
                        idf = std::log(idf);
                    }
                    group += w * idf * idf;
                    ++matches;
                }
                if (matches > 0) {
                    numerator += p.enable_burst ? group / std::sqrt(static_cast<double>(matches)) : group;
                }
            }
            if (numerator > 0.0) {
                out.items.push_back({img.id, numerator / (qnorm * img.norm)});
            }
        }
        sort_ranked(out.items);
        return out;
    }

  private:
    struct DbFeature {
        WordId sift_word = 0;
        WordId color_word = 0;
        SiftSignature sift_sig;
        CnSignature cn_sig;
    };
    struct DbImage {
        ImageId id = 0;
        double norm = 0.0;
        std::vector<DbFeature> features;
    };

    const Codebook& sift_book_;
    const Codebook* color_book_;
    const HeModel* he_;
    std::vector<DbImage> images_;
    std::size_t n_images_ = 0;
    std::map<std::pair<WordId, WordId>, std::size_t> n_ij_;
};

inline RankedList brute_force_score(const ImageRecord& query, const Corpus& corpus, const Codebook& sift_book,
                                    const Codebook* color_book, const HeModel* he, const QueryParams& params) {
    return BruteForceScorer(corpus, sift_book, color_book, he).score(query, params);
}

}  // namespace cmi
