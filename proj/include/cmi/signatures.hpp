#pragma once

// Binary signatures attached to every indexed feature:
//  - 64-bit Hamming Embedding of the rootSIFT descriptor (random orthonormal
//    projection, per-visual-word median thresholds);
//  - 22-bit binarization of the 11-D Color Names descriptor, where each
//    dimension maps to a bit pair by comparison with the 2nd and 5th largest
//    components.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cmi/codebook.hpp"
#include "cmi/detail/binary_io.hpp"
#include "cmi/error.hpp"
#include "cmi/features.hpp"

namespace cmi {

inline constexpr std::size_t kSiftBits = 64;
inline constexpr std::size_t kCnBits = 22;

struct SiftSignature {
    std::uint64_t bits = 0;

    friend bool operator==(const SiftSignature&, const SiftSignature&) = default;
};

// Bit i is b_i, bit 11 + i is b_{i+11}; bits 22..31 are always zero.
struct CnSignature {
    std::uint32_t bits = 0;

    friend bool operator==(const CnSignature&, const CnSignature&) = default;
};

inline constexpr std::uint64_t width_mask(unsigned width) {
    return width >= 64 ? ~std::uint64_t{0} : ((std::uint64_t{1} << width) - 1);
}

inline unsigned hamming_distance(std::uint64_t a, std::uint64_t b, unsigned width) {
    if (width < 1 || width > 64) {
        throw InvalidInput("hamming width must be in [1, 64], got " + std::to_string(width));
    }
    return static_cast<unsigned>(std::popcount((a ^ b) & width_mask(width)));
}

inline unsigned hamming_distance(SiftSignature a, SiftSignature b) {
    return static_cast<unsigned>(std::popcount(a.bits ^ b.bits));
}

inline unsigned hamming_distance(CnSignature a, CnSignature b) {
    return static_cast<unsigned>(std::popcount((a.bits ^ b.bits) & static_cast<std::uint32_t>(width_mask(kCnBits))));
}

// ---------------------------------------------------------------------------
// Color Names binarization
// ---------------------------------------------------------------------------

inline CnSignature cn_binarize(std::span<const float> f) {
    validate_cn(f);
    std::array<float, kCnDim> g{};
    std::copy(f.begin(), f.end(), g.begin());
    std::stable_sort(g.begin(), g.end(), std::greater<>());
    const float th1 = g[1];
    const float th2 = g[4];
    std::uint32_t bits = 0;
    for (std::size_t i = 0; i < kCnDim; ++i) {
        if (f[i] > th1) {
            bits |= (1U << i) | (1U << (i + kCnDim));
        } else if (f[i] > th2) {
            bits |= 1U << i;
        }
    }
    return CnSignature{bits};
}

inline CnSignature cn_binarize(const CnDescriptor& desc) { return cn_binarize(std::span<const float>(desc.values)); }

// ---------------------------------------------------------------------------
// Hamming Embedding for SIFT
// ---------------------------------------------------------------------------

class HeModel {
  public:
    HeModel() = default;
    HeModel(std::uint64_t seed, FloatMatrix projection, FloatMatrix thresholds)
        : seed_(seed), projection_(std::move(projection)), thresholds_(std::move(thresholds)) {
        if (projection_.rows() != kSiftBits || projection_.cols() != kSiftDim) {
            throw InvalidInput("HE projection must be 64 x 128");
        }
        if (thresholds_.cols() != kSiftBits && !thresholds_.empty()) {
            throw InvalidInput("HE thresholds must have 64 components per word");
        }
    }

    std::uint64_t seed() const { return seed_; }
    std::size_t word_count() const { return thresholds_.rows(); }
    const FloatMatrix& projection() const { return projection_; }
    const FloatMatrix& thresholds() const { return thresholds_; }
    std::span<const float> thresholds(WordId w) const { return thresholds_.row(w); }

    // Projected components are rounded to float so that thresholds and
    // signatures compare identical values.
    std::array<float, kSiftBits> project(std::span<const float> desc) const {
        if (desc.size() != kSiftDim) {
            throw InvalidInput("HE projection expects a 128-D descriptor");
        }
        std::array<float, kSiftBits> out{};
        for (std::size_t k = 0; k < kSiftBits; ++k) {
            auto row = projection_.row(k);
            double s = 0.0;
            for (std::size_t d = 0; d < kSiftDim; ++d) {
                s += static_cast<double>(row[d]) * static_cast<double>(desc[d]);
            }
            out[k] = static_cast<float>(s);
        }
        return out;
    }

    friend bool operator==(const HeModel&, const HeModel&) = default;

  private:
    std::uint64_t seed_ = 0;
    FloatMatrix projection_;
    FloatMatrix thresholds_;
};

struct HeTrainingReport {
    std::vector<std::size_t> samples_per_word;
    std::vector<WordId> words_without_samples;  // thresholds left at zero
};

// First 64 rows of a random orthonormal matrix: modified Gram-Schmidt (run
// twice) on standard-normal rows.
inline FloatMatrix random_orthonormal_projection(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<std::array<double, kSiftDim>> rows(kSiftBits);
    for (auto& r : rows) {
        for (double& v : r) {
            v = normal(rng);
        }
    }
    for (std::size_t k = 0; k < kSiftBits; ++k) {
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t j = 0; j < k; ++j) {
                double dot = 0.0;
                for (std::size_t d = 0; d < kSiftDim; ++d) {
                    dot += rows[k][d] * rows[j][d];
                }
                for (std::size_t d = 0; d < kSiftDim; ++d) {
                    rows[k][d] -= dot * rows[j][d];
                }
            }
        }
        double norm = 0.0;
        for (double v : rows[k]) {
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (double& v : rows[k]) {
            v /= norm;
        }
    }
    FloatMatrix p(kSiftBits, kSiftDim);
    for (std::size_t k = 0; k < kSiftBits; ++k) {
        auto out = p.row(k);
        for (std::size_t d = 0; d < kSiftDim; ++d) {
            out[d] = static_cast<float>(rows[k][d]);
        }
    }
    return p;
}

// Median of a non-empty set; mean of the middle pair for even sizes.
inline float median_of(std::vector<float>& v) {
    const std::size_t n = v.size();
    const std::size_t mid = n / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double hi = v[mid];
    if (n % 2 == 1) {
        return v[mid];
    }
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return static_cast<float>(0.5 * (lo + hi));
}

struct HeSample {
    SiftDescriptor desc;
    WordId word = 0;
};

inline HeModel train_he_model(std::span<const HeSample> samples, const Codebook& book, std::uint64_t seed,
                              HeTrainingReport* report = nullptr) {
    require_family(book, Family::Sift);
    FloatMatrix projection = random_orthonormal_projection(seed);
    HeModel proto(seed, projection, FloatMatrix{});

    const std::size_t words = book.size();
    std::vector<std::vector<std::array<float, kSiftBits>>> per_word(words);
    for (const HeSample& s : samples) {
        if (s.word >= words) {
            throw InvalidInput("HE training sample has word " + std::to_string(s.word) + " outside codebook of size " +
                               std::to_string(words));
        }
        per_word[s.word].push_back(proto.project(s.desc.values));
    }

    HeTrainingReport local;
    HeTrainingReport& rep = report ? *report : local;
    rep = HeTrainingReport{};
    rep.samples_per_word.resize(words);

    FloatMatrix thresholds(words, kSiftBits);
    std::vector<float> column;
    for (std::size_t w = 0; w < words; ++w) {
        const auto& projected = per_word[w];
        rep.samples_per_word[w] = projected.size();
        if (projected.empty()) {
            rep.words_without_samples.push_back(static_cast<WordId>(w));
            continue;
        }
        auto out = thresholds.row(w);
        for (std::size_t k = 0; k < kSiftBits; ++k) {
            column.clear();
            for (const auto& p : projected) {
                column.push_back(p[k]);
            }
            out[k] = median_of(column);
        }
    }
    return HeModel(seed, std::move(projection), std::move(thresholds));
}

// Samples for HE training: every descriptor of the corpus with its nearest
// SIFT word.
inline std::vector<HeSample> collect_he_samples(const Corpus& corpus, const Codebook& sift_book) {
    require_family(sift_book, Family::Sift);
    std::vector<HeSample> out;
    out.reserve(total_features(corpus));
    for (const ImageRecord& img : corpus) {
        for (const FeatureTuple& f : img.features) {
            out.push_back({f.sift, quantize_nearest(f.sift.values, sift_book)});
        }
    }
    return out;
}

inline SiftSignature sift_signature(std::span<const float> desc, WordId word, const HeModel& model) {
    if (word >= model.word_count()) {
        throw InvalidInput("word " + std::to_string(word) + " has no HE thresholds");
    }
    const auto projected = model.project(desc);
    const auto thr = model.thresholds(word);
    std::uint64_t bits = 0;
    for (std::size_t k = 0; k < kSiftBits; ++k) {
        if (projected[k] > thr[k]) {
            bits |= std::uint64_t{1} << k;
        }
    }
    return SiftSignature{bits};
}

// ---------------------------------------------------------------------------
// HE file: "CMIH", u64 seed, 64 x 128 f32 projection, u32 word count, then
// 64 f32 thresholds per word.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kHeMagic = "CMIH";

inline void write_he_model(std::ostream& out, const HeModel& model) {
    detail::BinaryWriter w(out);
    w.put_magic(kHeMagic);
    w.put(model.seed());
    for (float v : model.projection().data()) {
        w.put(v);
    }
    w.put(static_cast<std::uint32_t>(model.word_count()));
    for (float v : model.thresholds().data()) {
        w.put(v);
    }
    w.check("HE model");
}

inline HeModel read_he_model(std::istream& in) {
    detail::BinaryReader r(in, "HE model file");
    r.expect_magic(kHeMagic);
    const auto seed = r.get<std::uint64_t>();
    std::vector<float> proj(kSiftBits * kSiftDim);
    for (float& v : proj) {
        v = r.get<float>();
    }
    const auto words = r.get<std::uint32_t>();
    std::vector<float> thr(std::size_t{words} * kSiftBits);
    for (float& v : thr) {
        v = r.get<float>();
    }
    r.expect_eof();
    FloatMatrix thresholds = words == 0 ? FloatMatrix(0, kSiftBits) : FloatMatrix(kSiftBits, std::move(thr));
    return HeModel(seed, FloatMatrix(kSiftDim, std::move(proj)), std::move(thresholds));
}

inline void save_he_model(const std::string& path, const HeModel& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ConfigError("cannot open for writing: " + path);
    }
    write_he_model(out, model);
}

inline HeModel load_he_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot open HE model file: " + path);
    }
    return read_he_model(in);
}

}  // namespace cmi
