#pragma once

// Inverted files keyed by visual-word pairs.
//
// The coupled multi-index (c-MI) files every feature tuple under its
// (SIFT word, color word) pair; each posting keeps the image id and both
// binary signatures. The conventional 1-D index is the same structure with a
// degenerate color axis (color word always 0) and postings without a color
// signature, so both share one implementation.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cmi/codebook.hpp"
#include "cmi/detail/binary_io.hpp"
#include "cmi/error.hpp"
#include "cmi/features.hpp"
#include "cmi/signatures.hpp"

namespace cmi {

struct WordPair {
    WordId sift = 0;
    WordId color = 0;

    std::uint64_t packed() const { return (std::uint64_t{sift} << 32) | color; }

    friend auto operator<=>(const WordPair&, const WordPair&) = default;
};

// 1-D posting: image id plus SIFT signature.
struct SiftPosting {
    ImageId image_id = 0;
    SiftSignature sift_sig;

    friend bool operator==(const SiftPosting&, const SiftPosting&) = default;
};

// c-MI posting: image id plus SIFT and CN signatures.
struct Posting {
    ImageId image_id = 0;
    SiftSignature sift_sig;
    CnSignature cn_sig;

    friend bool operator==(const Posting&, const Posting&) = default;
};

template <class P>
concept HasColorSignature = requires(const P& p) { p.cn_sig; };

// Sparse 2-D term-frequency histogram of one image.
using WordHistogram = std::map<WordPair, std::uint32_t>;

// l2 norm of a TF histogram, summed in key order.
inline double image_norm(const WordHistogram& hist) {
    if (hist.empty()) {
        throw InvalidInput("zero-feature image has no histogram norm");
    }
    double sum = 0.0;
    for (const auto& [key, count] : hist) {
        if (count < 1) {
            throw InvalidInput("histogram counts must be >= 1");
        }
        sum += static_cast<double>(count) * static_cast<double>(count);
    }
    return std::sqrt(sum);
}

// Number of images N and, per word pair, the number of distinct images
// n_ij holding it.
class IdfTable {
  public:
    std::uint32_t image_count() const { return n_; }

    std::uint32_t images_with(WordPair key) const {
        auto it = counts_.find(key.packed());
        return it == counts_.end() ? 0 : it->second;
    }

    // N / n_ij, no logarithm.
    double idf(WordPair key) const {
        const std::uint32_t n_ij = images_with(key);
        if (n_ij == 0) {
            throw StateError("idf undefined for empty entry (" + std::to_string(key.sift) + ", " +
                             std::to_string(key.color) + ")");
        }
        return static_cast<double>(n_) / static_cast<double>(n_ij);
    }

    std::size_t size() const { return counts_.size(); }

    friend bool operator==(const IdfTable&, const IdfTable&) = default;

  private:
    template <class>
    friend class InvertedIndex;

    std::uint32_t n_ = 0;
    std::unordered_map<std::uint64_t, std::uint32_t> counts_;
};

// l2 norm of each image's TF histogram; 0 for images without features.
class NormTable {
  public:
    std::size_t size() const { return ids_.size(); }
    std::span<const ImageId> image_ids() const { return ids_; }
    std::span<const double> norms() const { return norms_; }

    std::optional<std::size_t> slot(ImageId id) const {
        auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
        if (it == ids_.end() || *it != id) {
            return std::nullopt;
        }
        return static_cast<std::size_t>(it - ids_.begin());
    }

    double norm(ImageId id) const {
        auto s = slot(id);
        if (!s) {
            throw InvalidInput("unknown image id " + std::to_string(id));
        }
        return norms_[*s];
    }

    friend bool operator==(const NormTable&, const NormTable&) = default;

  private:
    template <class>
    friend class InvertedIndex;

    std::vector<ImageId> ids_;  // ascending
    std::vector<double> norms_;
};

enum class MemoryProfile { Baseline, Cmi, He, CmiHe };

struct MemoryFootprint {
    double bytes_per_feature = 0.0;
    std::uint64_t total_bytes = 0;      // logical per-feature cost x indexed features, rounded up
    std::uint64_t directory_bytes = 0;  // entry keys and lengths, reported separately
    std::uint64_t features = 0;
};

inline constexpr unsigned logical_bits_per_feature(MemoryProfile p) {
    constexpr unsigned image_id = 32;
    switch (p) {
        case MemoryProfile::Baseline: return image_id;
        case MemoryProfile::Cmi: return image_id + kCnBits;
        case MemoryProfile::He: return image_id + kSiftBits;
        case MemoryProfile::CmiHe: return image_id + kSiftBits + kCnBits;
    }
    return image_id;
}

inline std::string to_string(MemoryProfile p) {
    switch (p) {
        case MemoryProfile::Baseline: return "baseline";
        case MemoryProfile::Cmi: return "cmi";
        case MemoryProfile::He: return "he";
        case MemoryProfile::CmiHe: return "cmi+he";
    }
    return "unknown";
}

template <class PostingT>
class InvertedIndex {
  public:
    static constexpr bool kHasColor = HasColorSignature<PostingT>;

    struct Entry {
        WordPair key;
        std::uint32_t begin = 0;
        std::uint32_t count = 0;
    };

    InvertedIndex() = default;
    InvertedIndex(std::size_t sift_words, std::size_t color_words, bool has_he)
        : sift_words_(sift_words), color_words_(kHasColor ? color_words : 1), has_he_(has_he) {}

    // Adds one image with its keyed postings. Zero features is allowed.
    void add_image(ImageId id, std::span<const std::pair<WordPair, PostingT>> features) {
        if (frozen_) {
            throw StateError("index is frozen");
        }
        if (!staged_images_.emplace(id, 0.0).second) {
            throw InvalidInput("duplicate image_id " + std::to_string(id));
        }
        WordHistogram hist;
        for (const auto& [key, posting] : features) {
            if (key.sift >= sift_words_ || key.color >= color_words_) {
                throw InvalidInput("word pair outside the index grid");
            }
            if (posting.image_id != id) {
                throw InvalidInput("posting image id does not match the image being added");
            }
            staged_[key].push_back(posting);
            ++hist[key];
        }
        staged_images_[id] = hist.empty() ? 0.0 : image_norm(hist);
    }

    // Sorts postings by image id, builds the idf and norm tables. Irreversible.
    void freeze() {
        if (frozen_) {
            throw StateError("index is already frozen");
        }
        for (auto& [key, list] : staged_) {
            std::stable_sort(list.begin(), list.end(),
                             [](const PostingT& a, const PostingT& b) { return a.image_id < b.image_id; });
        }
        std::map<ImageId, double> norms(staged_images_.begin(), staged_images_.end());
        std::vector<std::pair<WordPair, std::vector<PostingT>>> entries(std::make_move_iterator(staged_.begin()),
                                                                         std::make_move_iterator(staged_.end()));
        assemble(std::move(entries), norms);
        staged_.clear();
        staged_images_.clear();
    }

    bool frozen() const { return frozen_; }
    bool has_he() const { return has_he_; }
    std::size_t sift_words() const { return sift_words_; }
    std::size_t color_words() const { return color_words_; }

    std::uint32_t image_count() const { return idf_.image_count(); }
    std::size_t entry_count() const { return entries_.size(); }
    std::size_t posting_count() const { return postings_.size(); }

    std::span<const Entry> entries() const { return entries_; }

    std::span<const PostingT> postings(const Entry& e) const { return {postings_.data() + e.begin, e.count}; }

    // Dense image slots (indices into the norm table), aligned with postings.
    std::span<const std::uint32_t> slots(const Entry& e) const { return {slots_.data() + e.begin, e.count}; }

    const Entry* find(WordPair key) const {
        auto it = lookup_.find(key.packed());
        return it == lookup_.end() ? nullptr : &entries_[it->second];
    }

    std::span<const PostingT> postings(WordPair key) const {
        const Entry* e = find(key);
        return e ? postings(*e) : std::span<const PostingT>{};
    }

    const IdfTable& idf_table() const { return idf_; }
    const NormTable& norm_table() const { return norms_; }

    // Structural equality: entries, postings, idf and norms.
    bool same_content(const InvertedIndex& other) const {
        if (entries_.size() != other.entries_.size() || !(idf_ == other.idf_) || !(norms_ == other.norms_) ||
            has_he_ != other.has_he_) {
            return false;
        }
        for (std::size_t e = 0; e < entries_.size(); ++e) {
            if (entries_[e].key != other.entries_[e].key) {
                return false;
            }
            auto a = postings(entries_[e]);
            auto b = other.postings(other.entries_[e]);
            if (!std::equal(a.begin(), a.end(), b.begin(), b.end())) {
                return false;
            }
        }
        return true;
    }

    // Rebuilds a frozen index from already-sorted parts (used by the loader).
    static InvertedIndex from_parts(bool has_he, std::vector<std::pair<WordPair, std::vector<PostingT>>> entries,
                                    const std::map<ImageId, double>& norms) {
        InvertedIndex idx;
        idx.has_he_ = has_he;
        for (const auto& [key, list] : entries) {
            idx.sift_words_ = std::max<std::size_t>(idx.sift_words_, std::size_t{key.sift} + 1);
            idx.color_words_ = std::max<std::size_t>(idx.color_words_, std::size_t{key.color} + 1);
        }
        idx.assemble(std::move(entries), norms);
        return idx;
    }

  private:
    void assemble(std::vector<std::pair<WordPair, std::vector<PostingT>>> entries,
                  const std::map<ImageId, double>& norms) {
        norms_.ids_.clear();
        norms_.norms_.clear();
        for (const auto& [id, norm] : norms) {
            norms_.ids_.push_back(id);
            norms_.norms_.push_back(norm);
        }
        idf_.n_ = static_cast<std::uint32_t>(norms.size());

        std::size_t total = 0;
        for (const auto& [key, list] : entries) {
            total += list.size();
        }
        postings_.clear();
        postings_.reserve(total);
        slots_.clear();
        slots_.reserve(total);
        entries_.clear();
        entries_.reserve(entries.size());
        lookup_.clear();
        lookup_.reserve(entries.size());

        for (auto& [key, list] : entries) {
            Entry e{key, static_cast<std::uint32_t>(postings_.size()), static_cast<std::uint32_t>(list.size())};
            std::uint32_t distinct = 0;
            for (std::size_t p = 0; p < list.size(); ++p) {
                if (p == 0 || list[p].image_id != list[p - 1].image_id) {
                    ++distinct;
                }
                auto s = norms_.slot(list[p].image_id);
                if (!s) {
                    throw FormatError("posting refers to unknown image " + std::to_string(list[p].image_id));
                }
                slots_.push_back(static_cast<std::uint32_t>(*s));
                postings_.push_back(list[p]);
            }
            if (list.empty()) {
                continue;
            }
            lookup_.emplace(key.packed(), entries_.size());
            entries_.push_back(e);
            idf_.counts_.emplace(key.packed(), distinct);
        }
        frozen_ = true;
    }

    std::size_t sift_words_ = 0;
    std::size_t color_words_ = 1;
    bool has_he_ = false;
    bool frozen_ = false;

    // build phase
    std::map<WordPair, std::vector<PostingT>> staged_;
    std::unordered_map<ImageId, double> staged_images_;

    // frozen phase
    std::vector<Entry> entries_;  // ascending by key
    std::vector<PostingT> postings_;
    std::vector<std::uint32_t> slots_;
    std::unordered_map<std::uint64_t, std::size_t> lookup_;
    IdfTable idf_;
    NormTable norms_;
};

using MultiIndex = InvertedIndex<Posting>;
using BaselineIndex = InvertedIndex<SiftPosting>;

inline double idf(const MultiIndex& index, WordId i, WordId j) { return index.idf_table().idf({i, j}); }
inline double idf(const BaselineIndex& index, WordId i) { return index.idf_table().idf({i, 0}); }

namespace detail {

inline void check_he(const Codebook& sift_book, const HeModel* he) {
    if (he && he->word_count() != sift_book.size()) {
        throw ConfigError("HE model has thresholds for " + std::to_string(he->word_count()) +
                          " words but the SIFT codebook has " + std::to_string(sift_book.size()));
    }
}

inline void check_unique_ids(const Corpus& corpus) {
    std::unordered_map<ImageId, bool> seen;
    for (const ImageRecord& img : corpus) {
        if (!seen.emplace(img.image_id, true).second) {
            throw InvalidInput("duplicate image_id " + std::to_string(img.image_id));
        }
    }
}

}  // namespace detail

// Database side is single assignment: every tuple goes to its nearest
// (SIFT word, color word) pair.
inline MultiIndex build_multi_index(const Corpus& corpus, const Codebook& sift_book, const Codebook& color_book,
                                    const HeModel* he) {
    require_family(sift_book, Family::Sift);
    require_family(color_book, Family::Color);
    detail::check_he(sift_book, he);
    detail::check_unique_ids(corpus);
    MultiIndex index(sift_book.size(), color_book.size(), he != nullptr);
    std::vector<std::pair<WordPair, Posting>> keyed;
    for (const ImageRecord& img : corpus) {
        keyed.clear();
        for (const FeatureTuple& f : img.features) {
            const WordId i = quantize_nearest(f.sift.values, sift_book);
            const WordId j = quantize_nearest(f.color.values, color_book);
            Posting p{img.image_id, he ? sift_signature(f.sift.values, i, *he) : SiftSignature{}, cn_binarize(f.color)};
            keyed.emplace_back(WordPair{i, j}, p);
        }
        index.add_image(img.image_id, keyed);
    }
    index.freeze();
    return index;
}

inline BaselineIndex build_baseline_index(const Corpus& corpus, const Codebook& sift_book, const HeModel* he) {
    require_family(sift_book, Family::Sift);
    detail::check_he(sift_book, he);
    detail::check_unique_ids(corpus);
    BaselineIndex index(sift_book.size(), 1, he != nullptr);
    std::vector<std::pair<WordPair, SiftPosting>> keyed;
    for (const ImageRecord& img : corpus) {
        keyed.clear();
        for (const FeatureTuple& f : img.features) {
            const WordId i = quantize_nearest(f.sift.values, sift_book);
            SiftPosting p{img.image_id, he ? sift_signature(f.sift.values, i, *he) : SiftSignature{}};
            keyed.emplace_back(WordPair{i, 0}, p);
        }
        index.add_image(img.image_id, keyed);
    }
    index.freeze();
    return index;
}

template <class PostingT>
MemoryFootprint memory_footprint(const InvertedIndex<PostingT>& index, MemoryProfile profile) {
    if (!index.frozen()) {
        throw StateError("memory accounting needs a frozen index");
    }
    const std::uint64_t bits = logical_bits_per_feature(profile);
    MemoryFootprint m;
    m.features = index.posting_count();
    m.bytes_per_feature = static_cast<double>(bits) / 8.0;
    m.total_bytes = (bits * m.features + 7) / 8;
    m.directory_bytes = std::uint64_t{index.entry_count()} * 12;
    return m;
}

// ---------------------------------------------------------------------------
// Index file (little-endian): "CMIX", u16 version, u8 flags (bit 0: SIFT
// signatures present, bit 1: CN signatures present), u32 N, u64 entry count;
// per entry u32 i, u32 j, u32 posting count, then per posting u32 image_id,
// u64 sift_sig if present, u32 cn_sig (low 22 bits) if present; then the norm
// table: u32 image count, pairs of u32 id + f64 norm.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kIndexMagic = "CMIX";
inline constexpr std::uint16_t kIndexVersion = 1;
inline constexpr std::uint8_t kIndexFlagHe = 0x1;
inline constexpr std::uint8_t kIndexFlagCn = 0x2;

template <class PostingT>
void write_index(std::ostream& out, const InvertedIndex<PostingT>& index) {
    if (!index.frozen()) {
        throw StateError("only frozen indexes can be saved");
    }
    constexpr bool color = InvertedIndex<PostingT>::kHasColor;
    const bool he = index.has_he();
    detail::BinaryWriter w(out);
    w.put_magic(kIndexMagic);
    w.put(kIndexVersion);
    w.put(static_cast<std::uint8_t>((he ? kIndexFlagHe : 0) | (color ? kIndexFlagCn : 0)));
    w.put(index.image_count());
    w.put(static_cast<std::uint64_t>(index.entry_count()));
    for (const auto& e : index.entries()) {
        w.put(e.key.sift);
        w.put(e.key.color);
        w.put(e.count);
        for (const PostingT& p : index.postings(e)) {
            w.put(p.image_id);
            if (he) {
                w.put(p.sift_sig.bits);
            }
            if constexpr (color) {
                w.put(p.cn_sig.bits & static_cast<std::uint32_t>(width_mask(kCnBits)));
            }
        }
    }
    const NormTable& norms = index.norm_table();
    w.put(static_cast<std::uint32_t>(norms.size()));
    for (std::size_t s = 0; s < norms.size(); ++s) {
        w.put(norms.image_ids()[s]);
        w.put(norms.norms()[s]);
    }
    w.check("index");
}

struct IndexFileInfo {
    bool has_he = false;
    bool has_color = false;
};

inline IndexFileInfo peek_index(std::istream& in) {
    detail::BinaryReader r(in, "index file");
    r.expect_magic(kIndexMagic);
    const auto version = r.get<std::uint16_t>();
    if (version != kIndexVersion) {
        r.fail("unsupported version " + std::to_string(version));
    }
    const auto flags = r.get<std::uint8_t>();
    if (flags & ~(kIndexFlagHe | kIndexFlagCn)) {
        r.fail("unknown flags");
    }
    return {(flags & kIndexFlagHe) != 0, (flags & kIndexFlagCn) != 0};
}

template <class PostingT>
InvertedIndex<PostingT> read_index(std::istream& in) {
    constexpr bool color = InvertedIndex<PostingT>::kHasColor;
    const IndexFileInfo info = peek_index(in);
    detail::BinaryReader r(in, "index file");
    if (info.has_color != color) {
        r.fail(color ? "file holds a 1-D baseline index, expected c-MI" : "file holds a c-MI index, expected baseline");
    }
    const auto n_images = r.get<std::uint32_t>();
    const auto n_entries = r.get<std::uint64_t>();
    std::vector<std::pair<WordPair, std::vector<PostingT>>> entries;
    for (std::uint64_t e = 0; e < n_entries; ++e) {
        WordPair key{r.get<std::uint32_t>(), r.get<std::uint32_t>()};
        if (!entries.empty() && !(entries.back().first < key)) {
            r.fail("entries not in ascending key order");
        }
        if (!color && key.color != 0) {
            r.fail("baseline entry with nonzero color word");
        }
        const auto count = r.get<std::uint32_t>();
        if (count == 0) {
            r.fail("empty entry");
        }
        std::vector<PostingT> list(count);
        for (PostingT& p : list) {
            p.image_id = r.get<std::uint32_t>();
            if (info.has_he) {
                p.sift_sig.bits = r.get<std::uint64_t>();
            }
            if constexpr (color) {
                p.cn_sig.bits = r.get<std::uint32_t>();
                if (p.cn_sig.bits & ~static_cast<std::uint32_t>(width_mask(kCnBits))) {
                    r.fail("CN signature wider than 22 bits");
                }
            }
        }
        for (std::size_t p = 1; p < list.size(); ++p) {
            if (list[p].image_id < list[p - 1].image_id) {
                r.fail("postings not sorted by image id");
            }
        }
        entries.emplace_back(key, std::move(list));
    }
    const auto n_norms = r.get<std::uint32_t>();
    if (n_norms != n_images) {
        r.fail("norm table size differs from image count");
    }
    std::map<ImageId, double> norms;
    for (std::uint32_t s = 0; s < n_norms; ++s) {
        const auto id = r.get<std::uint32_t>();
        const auto norm = r.get<double>();
        if (!std::isfinite(norm) || norm < 0.0 || !norms.emplace(id, norm).second) {
            r.fail("bad norm table row for image " + std::to_string(id));
        }
    }
    r.expect_eof();
    try {
        return InvertedIndex<PostingT>::from_parts(info.has_he, std::move(entries), norms);
    } catch (const FormatError& e) {
        r.fail(e.what());
    }
}

template <class PostingT>
void save_index(const std::string& path, const InvertedIndex<PostingT>& index) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ConfigError("cannot open for writing: " + path);
    }
    write_index(out, index);
}

template <class PostingT>
InvertedIndex<PostingT> load_index(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot open index file: " + path);
    }
    return read_index<PostingT>(in);
}

inline IndexFileInfo peek_index_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot open index file: " + path);
    }
    return peek_index(in);
}

}  // namespace cmi
