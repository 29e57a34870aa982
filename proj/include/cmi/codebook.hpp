#pragma once

// Visual-word codebooks: Lloyd k-means training, exact nearest-centroid
// quantization and query-side multiple assignment.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cmi/detail/binary_io.hpp"
#include "cmi/error.hpp"
#include "cmi/features.hpp"

namespace cmi {

using WordId = std::uint32_t;

enum class Family : std::uint8_t {
    Sift = 0,
    Color = 1,
    Generic = 0xFF,  // arbitrary dimension; not persistable
};

inline std::string to_string(Family f) {
    switch (f) {
        case Family::Sift: return "sift";
        case Family::Color: return "color";
        case Family::Generic: return "generic";
    }
    return "unknown";
}

inline constexpr std::size_t family_dimension(Family f) {
    switch (f) {
        case Family::Sift: return kSiftDim;
        case Family::Color: return kCnDim;
        case Family::Generic: return 0;
    }
    return 0;
}

// Row-major dense float matrix.
class FloatMatrix {
  public:
    FloatMatrix() = default;
    FloatMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0F) {}
    FloatMatrix(std::size_t cols, std::vector<float> data) : cols_(cols), data_(std::move(data)) {
        if (cols_ == 0 || data_.size() % cols_ != 0) {
            throw InvalidInput("matrix data size is not a multiple of the column count");
        }
        rows_ = data_.size() / cols_;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return rows_ == 0; }

    std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

    void push_row(std::span<const float> r) {
        if (cols_ == 0 && rows_ == 0) {
            cols_ = r.size();
        }
        if (r.size() != cols_ || cols_ == 0) {
            throw InvalidInput("row dimension mismatch: expected " + std::to_string(cols_) + ", got " +
                               std::to_string(r.size()));
        }
        data_.insert(data_.end(), r.begin(), r.end());
        ++rows_;
    }

    const std::vector<float>& data() const { return data_; }

    friend bool operator==(const FloatMatrix&, const FloatMatrix&) = default;

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

// Four interleaved partial sums, combined in a fixed order.
template <class A, class B>
inline double squared_distance(std::span<const A> a, std::span<const B> b) {
    double s0 = 0.0;
    double s1 = 0.0;
    double s2 = 0.0;
    double s3 = 0.0;
    const std::size_t n = a.size();
    std::size_t d = 0;
    for (; d + 4 <= n; d += 4) {
        const double x0 = static_cast<double>(a[d]) - static_cast<double>(b[d]);
        const double x1 = static_cast<double>(a[d + 1]) - static_cast<double>(b[d + 1]);
        const double x2 = static_cast<double>(a[d + 2]) - static_cast<double>(b[d + 2]);
        const double x3 = static_cast<double>(a[d + 3]) - static_cast<double>(b[d + 3]);
        s0 += x0 * x0;
        s1 += x1 * x1;
        s2 += x2 * x2;
        s3 += x3 * x3;
    }
    for (; d < n; ++d) {
        const double x = static_cast<double>(a[d]) - static_cast<double>(b[d]);
        s0 += x * x;
    }
    return (s0 + s1) + (s2 + s3);
}

class Codebook {
  public:
    Codebook() = default;
    Codebook(Family family, FloatMatrix centroids) : family_(family), centroids_(std::move(centroids)) {
        if (centroids_.rows() < 1) {
            throw InvalidInput("codebook needs at least one centroid");
        }
        if (family_ != Family::Generic && centroids_.cols() != family_dimension(family_)) {
            throw InvalidInput(to_string(family_) + " codebook must have dimension " +
                               std::to_string(family_dimension(family_)));
        }
        for (float v : centroids_.data()) {
            if (!std::isfinite(v)) {
                throw InvalidInput("codebook centroid has a non-finite entry");
            }
        }
    }

    Family family() const { return family_; }
    std::size_t size() const { return centroids_.rows(); }
    std::size_t dim() const { return centroids_.cols(); }
    std::span<const float> centroid(WordId w) const { return centroids_.row(w); }
    const FloatMatrix& centroids() const { return centroids_; }

    friend bool operator==(const Codebook&, const Codebook&) = default;

  private:
    Family family_ = Family::Generic;
    FloatMatrix centroids_;
};

inline void require_family(const Codebook& book, Family family) {
    if (book.family() != family || book.dim() != family_dimension(family)) {
        throw ConfigError("expected a " + to_string(family) + " codebook, got " + to_string(book.family()) +
                          " with dimension " + std::to_string(book.dim()));
    }
}

// Nearest centroids first; distances are squared Euclidean.
struct Assignment {
    std::vector<WordId> word_ids;
    std::vector<double> distances;
};

inline void check_dimension(std::span<const float> desc, const Codebook& book) {
    if (desc.size() != book.dim()) {
        throw InvalidInput("descriptor dimension " + std::to_string(desc.size()) + " does not match codebook dimension " +
                           std::to_string(book.dim()));
    }
}

// Ties go to the lowest index.
inline WordId quantize_nearest(std::span<const float> desc, const Codebook& book) {
    check_dimension(desc, book);
    WordId best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t w = 0; w < book.size(); ++w) {
        const double d = squared_distance(desc, book.centroid(static_cast<WordId>(w)));
        if (d < best_d) {
            best_d = d;
            best = static_cast<WordId>(w);
        }
    }
    return best;
}

inline Assignment quantize_multiple(std::span<const float> desc, const Codebook& book, std::size_t m) {
    check_dimension(desc, book);
    if (m < 1 || m > book.size()) {
        throw InvalidInput("multiple assignment count " + std::to_string(m) + " outside [1, " +
                           std::to_string(book.size()) + "]");
    }
    std::vector<std::pair<double, WordId>> all(book.size());
    for (std::size_t w = 0; w < book.size(); ++w) {
        all[w] = {squared_distance(desc, book.centroid(static_cast<WordId>(w))), static_cast<WordId>(w)};
    }
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(m), all.end());
    Assignment a;
    a.word_ids.reserve(m);
    a.distances.reserve(m);
    for (std::size_t r = 0; r < m; ++r) {
        a.distances.push_back(all[r].first);
        a.word_ids.push_back(all[r].second);
    }
    return a;
}

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

struct KMeansReport {
    // Sum of squared distances after each assignment step.
    std::vector<double> objective;
    std::size_t iterations = 0;
    std::size_t reseeded_clusters = 0;
    bool converged = false;
};

namespace detail {

inline std::size_t count_distinct_rows(const FloatMatrix& samples) {
    std::vector<std::size_t> order(samples.rows());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto less = [&](std::size_t a, std::size_t b) {
        auto ra = samples.row(a);
        auto rb = samples.row(b);
        return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
    };
    std::sort(order.begin(), order.end(), less);
    std::size_t distinct = order.empty() ? 0 : 1;
    for (std::size_t i = 1; i < order.size(); ++i) {
        if (less(order[i - 1], order[i])) {
            ++distinct;
        }
    }
    return distinct;
}

inline std::pair<std::size_t, double> nearest_row(std::span<const float> x, const std::vector<double>& centers,
                                                  std::size_t k, std::size_t dim) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
        const double d = squared_distance(x, std::span<const double>(centers.data() + c * dim, dim));
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return {best, best_d};
}

}  // namespace detail

// Lloyd iterations from a k-means++ seeding. Empty clusters are re-seeded
// from the samples farthest from their current centroid.
inline Codebook train_kmeans(const FloatMatrix& samples, std::size_t k, std::size_t iters, std::uint64_t seed,
                             Family family = Family::Generic, KMeansReport* report = nullptr) {
    if (samples.empty() || samples.cols() == 0) {
        throw TrainingError("k-means needs at least one sample");
    }
    if (family != Family::Generic && samples.cols() != family_dimension(family)) {
        throw TrainingError("sample dimension " + std::to_string(samples.cols()) + " does not match " +
                            to_string(family) + " dimension");
    }
    if (k < 1 || iters < 1) {
        throw TrainingError("k-means needs k >= 1 and iters >= 1");
    }
    for (float v : samples.data()) {
        if (!std::isfinite(v)) {
            throw TrainingError("k-means sample has a non-finite entry");
        }
    }
    const std::size_t distinct = detail::count_distinct_rows(samples);
    if (k > distinct) {
        throw TrainingError("k = " + std::to_string(k) + " exceeds the " + std::to_string(distinct) +
                            " distinct samples");
    }

    const std::size_t n = samples.rows();
    const std::size_t dim = samples.cols();
    std::mt19937_64 rng(seed);
    std::vector<double> centers(k * dim);

    // k-means++ seeding
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    std::size_t pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    for (std::size_t c = 0; c < k; ++c) {
        auto src = samples.row(pick);
        std::copy(src.begin(), src.end(), centers.begin() + static_cast<std::ptrdiff_t>(c * dim));
        if (c + 1 == k) {
            break;
        }
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], squared_distance(samples.row(i), std::span<const double>(&centers[c * dim], dim)));
            total += d2[i];
        }
        // total > 0 because fewer than `distinct` centers have been placed
        const double target = std::uniform_real_distribution<double>(0.0, total)(rng);
        double acc = 0.0;
        pick = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (d2[i] <= 0.0) {
                continue;
            }
            acc += d2[i];
            if (acc >= target) {
                pick = i;
                break;
            }
        }
        if (pick == n) {
            for (std::size_t i = n; i-- > 0;) {
                if (d2[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
        }
    }

    KMeansReport local;
    KMeansReport& rep = report ? *report : local;
    rep = KMeansReport{};

    std::vector<std::size_t> assign(n, k);
    std::vector<double> dist(n, 0.0);
    std::vector<double> sums(k * dim);
    std::vector<std::size_t> counts(k);

    for (std::size_t it = 0; it < iters; ++it) {
        bool changed = false;
        double objective = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            auto [c, d] = detail::nearest_row(samples.row(i), centers, k, dim);
            changed = changed || c != assign[i];
            assign[i] = c;
            dist[i] = d;
            objective += d;
        }
        rep.objective.push_back(objective);
        rep.iterations = it + 1;
        if (!changed) {
            rep.converged = true;
            break;
        }

        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            auto x = samples.row(i);
            double* s = &sums[assign[i] * dim];
            for (std::size_t d = 0; d < dim; ++d) {
                s[d] += x[d];
            }
            ++counts[assign[i]];
        }

        std::vector<std::size_t> far;  // samples by decreasing distance, built lazily
        std::size_t next_far = 0;
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] > 0) {
                for (std::size_t d = 0; d < dim; ++d) {
                    centers[c * dim + d] = sums[c * dim + d] / static_cast<double>(counts[c]);
                }
                continue;
            }
            if (far.empty()) {
                far.resize(n);
                std::iota(far.begin(), far.end(), std::size_t{0});
                std::stable_sort(far.begin(), far.end(), [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });
            }
            const std::size_t s = far[std::min(next_far++, n - 1)];
            auto x = samples.row(s);
            std::copy(x.begin(), x.end(), centers.begin() + static_cast<std::ptrdiff_t>(c * dim));
            ++rep.reseeded_clusters;
        }
    }

    std::vector<float> out(centers.size());
    std::transform(centers.begin(), centers.end(), out.begin(), [](double v) { return static_cast<float>(v); });
    return Codebook(family, FloatMatrix(dim, std::move(out)));
}

// Collects training samples of one family from a corpus. max_samples = 0
// keeps all; otherwise a seeded uniform subsample without replacement.
inline FloatMatrix collect_samples(const Corpus& corpus, Family family, std::size_t max_samples = 0,
                                   std::uint64_t seed = 0) {
    if (family == Family::Generic) {
        throw ConfigError("cannot collect samples for a generic codebook");
    }
    const std::size_t dim = family_dimension(family);
    std::vector<std::span<const float>> rows;
    for (const ImageRecord& img : corpus) {
        for (const FeatureTuple& f : img.features) {
            if (family == Family::Sift) {
                rows.emplace_back(f.sift.values);
            } else {
                rows.emplace_back(f.color.values);
            }
        }
    }
    if (max_samples > 0 && rows.size() > max_samples) {
        std::mt19937_64 rng(seed);
        std::shuffle(rows.begin(), rows.end(), rng);
        rows.resize(max_samples);
    }
    FloatMatrix m(0, dim);
    for (auto r : rows) {
        m.push_row(r);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Codebook file: "CMIC", u8 family, u32 k, u32 dim, k * dim f32.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kCodebookMagic = "CMIC";

inline void write_codebook(std::ostream& out, const Codebook& book) {
    if (book.family() == Family::Generic) {
        throw ConfigError("generic codebooks cannot be saved");
    }
    detail::BinaryWriter w(out);
    w.put_magic(kCodebookMagic);
    w.put(static_cast<std::uint8_t>(book.family()));
    w.put(static_cast<std::uint32_t>(book.size()));
    w.put(static_cast<std::uint32_t>(book.dim()));
    for (float v : book.centroids().data()) {
        w.put(v);
    }
    w.check("codebook");
}

inline Codebook read_codebook(std::istream& in) {
    detail::BinaryReader r(in, "codebook file");
    r.expect_magic(kCodebookMagic);
    const auto fam = r.get<std::uint8_t>();
    if (fam > 1) {
        r.fail("unknown family " + std::to_string(fam));
    }
    const auto family = static_cast<Family>(fam);
    const auto k = r.get<std::uint32_t>();
    const auto dim = r.get<std::uint32_t>();
    if (k < 1 || dim != family_dimension(family)) {
        r.fail("bad shape k=" + std::to_string(k) + " dim=" + std::to_string(dim));
    }
    std::vector<float> data(std::size_t{k} * dim);
    for (float& v : data) {
        v = r.get<float>();
    }
    r.expect_eof();
    try {
        return Codebook(family, FloatMatrix(dim, std::move(data)));
    } catch (const InvalidInput& e) {
        r.fail(e.what());
    }
}

inline void save_codebook(const std::string& path, const Codebook& book) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ConfigError("cannot open for writing: " + path);
    }
    write_codebook(out, book);
}

inline Codebook load_codebook(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot open codebook file: " + path);
    }
    return read_codebook(in);
}

}  // namespace cmi
