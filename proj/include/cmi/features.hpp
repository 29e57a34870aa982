#pragma once

// Local descriptors, their preprocessing, the descriptor file formats and a
// seeded synthetic corpus generator for desk-scale experiments.
//
// A FeatureTuple couples a rootSIFT descriptor with the patch-mean Color
// Names (CN) descriptor of the same keypoint. Descriptor files store tuples
// exactly as held in memory (post-rootSIFT); raw extractor output enters
// through make_feature_tuple().

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "cmi/detail/binary_io.hpp"
#include "cmi/error.hpp"

namespace cmi {

inline constexpr std::size_t kSiftDim = 128;
inline constexpr std::size_t kCnDim = 11;
inline constexpr double kSimplexTolerance = 1e-6;

using ImageId = std::uint32_t;
using GroupId = std::uint32_t;

using CnVector = std::array<double, kCnDim>;

struct SiftDescriptor {
    std::array<float, kSiftDim> values{};

    friend bool operator==(const SiftDescriptor&, const SiftDescriptor&) = default;
};

struct CnDescriptor {
    std::array<float, kCnDim> values{};

    friend bool operator==(const CnDescriptor&, const CnDescriptor&) = default;
};

struct Keypoint {
    float x = 0.0F;
    float y = 0.0F;
    float scale = 1.0F;

    friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

struct FeatureTuple {
    SiftDescriptor sift;
    CnDescriptor color;
    Keypoint keypoint;

    friend bool operator==(const FeatureTuple&, const FeatureTuple&) = default;
};

struct ImageRecord {
    ImageId image_id = 0;
    GroupId group_id = 0;
    std::vector<FeatureTuple> features;

    friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

using Corpus = std::vector<ImageRecord>;

namespace detail {

template <class T>
inline bool all_finite_nonnegative(std::span<const T> v) {
    return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x) && x >= T(0); });
}

template <class T>
inline bool on_simplex(std::span<const T> v, double tol = kSimplexTolerance) {
    double sum = 0.0;
    for (T x : v) {
        if (!std::isfinite(x) || x < T(0) || x > T(1)) {
            return false;
        }
        sum += static_cast<double>(x);
    }
    return std::abs(sum - 1.0) <= tol;
}

}  // namespace detail

inline void validate_sift(std::span<const float> values) {
    if (values.size() != kSiftDim) {
        throw InvalidInput("SIFT descriptor must have 128 entries, got " + std::to_string(values.size()));
    }
    if (!detail::all_finite_nonnegative(values)) {
        throw InvalidInput("SIFT descriptor has a negative or non-finite entry");
    }
}

inline void validate_cn(std::span<const float> values) {
    if (values.size() != kCnDim) {
        throw InvalidInput("CN descriptor must have 11 entries, got " + std::to_string(values.size()));
    }
    if (!detail::on_simplex(values)) {
        throw InvalidInput("CN descriptor is not on the probability simplex");
    }
}

inline void validate_feature(const FeatureTuple& f) {
    validate_sift(f.sift.values);
    validate_cn(f.color.values);
    if (!(f.keypoint.scale > 0.0F) || !std::isfinite(f.keypoint.scale) || !std::isfinite(f.keypoint.x) ||
        !std::isfinite(f.keypoint.y)) {
        throw InvalidInput("keypoint scale must be positive and coordinates finite");
    }
}

// Element-wise square root of the l1-normalized input. The zero vector maps
// to itself.
inline SiftDescriptor root_sift_transform(std::span<const float> raw) {
    validate_sift(raw);
    double l1 = 0.0;
    for (float x : raw) {
        l1 += x;
    }
    SiftDescriptor out;
    if (l1 == 0.0) {
        return out;
    }
    for (std::size_t d = 0; d < kSiftDim; ++d) {
        out.values[d] = static_cast<float>(std::sqrt(static_cast<double>(raw[d]) / l1));
    }
    return out;
}

inline CnDescriptor mean_cn_descriptor(std::span<const CnVector> pixels) {
    if (pixels.empty()) {
        throw InvalidInput("empty patch: no pixel CN vectors");
    }
    CnVector sum{};
    for (const CnVector& p : pixels) {
        if (!detail::on_simplex(std::span<const double>(p))) {
            throw InvalidInput("pixel CN vector is not on the probability simplex");
        }
        for (std::size_t d = 0; d < kCnDim; ++d) {
            sum[d] += p[d];
        }
    }
    CnDescriptor out;
    const double n = static_cast<double>(pixels.size());
    for (std::size_t d = 0; d < kCnDim; ++d) {
        out.values[d] = static_cast<float>(sum[d] / n);
    }
    return out;
}

// Raw extractor output (unnormalized SIFT, per-pixel CN vectors of the
// patch around the keypoint) to an indexable tuple.
inline FeatureTuple make_feature_tuple(std::span<const float> raw_sift, std::span<const CnVector> patch_pixels,
                                       Keypoint keypoint) {
    FeatureTuple f{root_sift_transform(raw_sift), mean_cn_descriptor(patch_pixels), keypoint};
    validate_feature(f);
    return f;
}

inline void validate_corpus(const Corpus& corpus) {
    std::unordered_set<ImageId> seen;
    seen.reserve(corpus.size());
    for (const ImageRecord& img : corpus) {
        if (!seen.insert(img.image_id).second) {
            throw InvalidInput("duplicate image_id " + std::to_string(img.image_id));
        }
        for (const FeatureTuple& f : img.features) {
            validate_feature(f);
        }
    }
}

inline std::size_t total_features(const Corpus& corpus) {
    std::size_t n = 0;
    for (const ImageRecord& img : corpus) {
        n += img.features.size();
    }
    return n;
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

// Grouped corpus in the style of Ukbench: every image of a group observes the
// same latent keypoints. Latent SIFT centers are either private to the group
// or drawn from a pool shared by all groups (sift_share), so SIFT words can
// collide across groups while color palettes stay group-specific.
struct SynthConfig {
    std::uint32_t groups = 100;
    std::uint32_t images_per_group = 4;
    std::uint32_t features_per_image = 50;
    double noise = 0.1;   // per-feature perturbation strength
    double illum = 0.1;   // per-image multiplicative CN shift (log-normal sigma)
    double sift_share = 0.0;
    std::uint32_t shared_sift_centers = 64;
    std::uint32_t colors_per_group = 3;
    std::uint32_t pixels_per_patch = 4;
    ImageId first_image_id = 0;
};

inline void validate(const SynthConfig& cfg) {
    if (cfg.groups < 1 || cfg.images_per_group < 2 || cfg.features_per_image < 1) {
        throw ConfigError("synthetic corpus needs groups >= 1, images_per_group >= 2, features_per_image >= 1");
    }
    if (cfg.colors_per_group < 1 || cfg.pixels_per_patch < 1) {
        throw ConfigError("synthetic corpus needs colors_per_group >= 1 and pixels_per_patch >= 1");
    }
    if (!(cfg.noise >= 0.0) || !(cfg.illum >= 0.0) || !(cfg.sift_share >= 0.0 && cfg.sift_share <= 1.0)) {
        throw ConfigError("synthetic corpus needs noise >= 0, illum >= 0 and sift_share in [0, 1]");
    }
    if (cfg.sift_share > 0.0 && cfg.shared_sift_centers < 1) {
        throw ConfigError("sift_share > 0 requires shared_sift_centers >= 1");
    }
    const std::uint64_t images = std::uint64_t{cfg.groups} * cfg.images_per_group;
    if (images + cfg.first_image_id > std::numeric_limits<ImageId>::max()) {
        throw ConfigError("synthetic corpus image ids overflow 32 bits");
    }
}

namespace detail {

using Rng = std::mt19937_64;

inline std::array<float, kSiftDim> random_sift_center(Rng& rng) {
    std::gamma_distribution<double> gamma(0.6, 1.0);
    std::array<float, kSiftDim> c{};
    for (float& v : c) {
        v = static_cast<float>(gamma(rng));
    }
    return c;
}

inline CnVector random_palette_color(Rng& rng) {
    std::gamma_distribution<double> gamma(0.3, 1.0);
    CnVector c{};
    double sum = 0.0;
    for (double& v : c) {
        v = gamma(rng);
        sum += v;
    }
    if (sum <= 0.0) {
        c.fill(1.0 / kCnDim);
        return c;
    }
    for (double& v : c) {
        v /= sum;
    }
    return c;
}

inline void normalize_simplex(CnVector& v) {
    double sum = 0.0;
    for (double& x : v) {
        x = std::max(x, 0.0);
        sum += x;
    }
    if (sum <= 0.0) {
        v.fill(1.0 / kCnDim);
        return;
    }
    for (double& x : v) {
        x /= sum;
    }
}

struct LatentKeypoint {
    std::array<float, kSiftDim> sift_center;
    CnVector color;
    Keypoint keypoint;
};

}  // namespace detail

inline Corpus generate_synthetic_corpus(const SynthConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    detail::Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::vector<std::array<float, kSiftDim>> shared;
    if (cfg.sift_share > 0.0) {
        shared.reserve(cfg.shared_sift_centers);
        for (std::uint32_t s = 0; s < cfg.shared_sift_centers; ++s) {
            shared.push_back(detail::random_sift_center(rng));
        }
    }

    Corpus corpus;
    corpus.reserve(std::size_t{cfg.groups} * cfg.images_per_group);
    std::vector<detail::LatentKeypoint> latent(cfg.features_per_image);
    std::vector<CnVector> palette(cfg.colors_per_group);
    std::vector<CnVector> pixels(cfg.pixels_per_patch);
    std::array<float, kSiftDim> raw{};

    for (std::uint32_t g = 0; g < cfg.groups; ++g) {
        for (CnVector& c : palette) {
            c = detail::random_palette_color(rng);
        }
        std::uniform_int_distribution<std::uint32_t> pick_color(0, cfg.colors_per_group - 1);
        for (detail::LatentKeypoint& lk : latent) {
            if (!shared.empty() && unit(rng) < cfg.sift_share) {
                std::uniform_int_distribution<std::size_t> pick(0, shared.size() - 1);
                lk.sift_center = shared[pick(rng)];
            } else {
                lk.sift_center = detail::random_sift_center(rng);
            }
            lk.color = palette[pick_color(rng)];
            lk.keypoint.x = static_cast<float>(640.0 * unit(rng));
            lk.keypoint.y = static_cast<float>(480.0 * unit(rng));
            lk.keypoint.scale = static_cast<float>(1.5 + 10.5 * unit(rng));
        }

        for (std::uint32_t k = 0; k < cfg.images_per_group; ++k) {
            ImageRecord img;
            img.image_id = cfg.first_image_id + g * cfg.images_per_group + k;
            img.group_id = g;
            img.features.reserve(latent.size());

            CnVector illum{};
            for (double& m : illum) {
                m = std::exp(cfg.illum * normal(rng));
            }

            for (const detail::LatentKeypoint& lk : latent) {
                double rms = 0.0;
                for (float v : lk.sift_center) {
                    rms += double{v} * v;
                }
                rms = std::sqrt(rms / kSiftDim);
                for (std::size_t d = 0; d < kSiftDim; ++d) {
                    const double v = lk.sift_center[d] + cfg.noise * rms * normal(rng);
                    raw[d] = static_cast<float>(std::max(v, 0.0));
                }

                CnVector lit = lk.color;
                for (std::size_t d = 0; d < kCnDim; ++d) {
                    lit[d] *= illum[d];
                }
                detail::normalize_simplex(lit);
                for (CnVector& p : pixels) {
                    p = lit;
                    for (double& x : p) {
                        x += 0.1 * cfg.noise * normal(rng);
                    }
                    detail::normalize_simplex(p);
                }

                Keypoint kp = lk.keypoint;
                kp.x += static_cast<float>(2.0 * cfg.noise * normal(rng));
                kp.y += static_cast<float>(2.0 * cfg.noise * normal(rng));
                kp.scale *= static_cast<float>(std::exp(0.1 * cfg.noise * normal(rng)));

                img.features.push_back(make_feature_tuple(raw, pixels, kp));
            }
            corpus.push_back(std::move(img));
        }
    }
    return corpus;
}

// ---------------------------------------------------------------------------
// Descriptor files
//
// Binary (little-endian): "CMID", u16 version = 1, u32 image count; per image
// u32 image_id, u32 group_id, u32 feature count; per feature f32 x, y, scale,
// 128 f32 SIFT, 11 f32 CN.
//
// Text: first line "CMID-TEXT 1"; per image a line "image <id> <group> <n>"
// followed by n lines of 3 + 128 + 11 whitespace-separated numbers. Blank
// lines and lines starting with '#' are ignored.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kDescriptorMagic = "CMID";
inline constexpr std::uint16_t kDescriptorVersion = 1;
inline constexpr std::string_view kDescriptorTextHeader = "CMID-TEXT 1";

inline void write_descriptors(std::ostream& out, const Corpus& corpus) {
    detail::BinaryWriter w(out);
    w.put_magic(kDescriptorMagic);
    w.put(kDescriptorVersion);
    w.put(static_cast<std::uint32_t>(corpus.size()));
    for (const ImageRecord& img : corpus) {
        w.put(img.image_id);
        w.put(img.group_id);
        w.put(static_cast<std::uint32_t>(img.features.size()));
        for (const FeatureTuple& f : img.features) {
            w.put(f.keypoint.x);
            w.put(f.keypoint.y);
            w.put(f.keypoint.scale);
            for (float v : f.sift.values) {
                w.put(v);
            }
            for (float v : f.color.values) {
                w.put(v);
            }
        }
    }
    w.check("descriptor file");
}

inline void write_descriptors_text(std::ostream& out, const Corpus& corpus) {
    out << kDescriptorTextHeader << '\n';
    out << std::setprecision(std::numeric_limits<float>::max_digits10);
    for (const ImageRecord& img : corpus) {
        out << "image " << img.image_id << ' ' << img.group_id << ' ' << img.features.size() << '\n';
        for (const FeatureTuple& f : img.features) {
            out << f.keypoint.x << ' ' << f.keypoint.y << ' ' << f.keypoint.scale;
            for (float v : f.sift.values) {
                out << ' ' << v;
            }
            for (float v : f.color.values) {
                out << ' ' << v;
            }
            out << '\n';
        }
    }
}

namespace detail {

inline Corpus read_descriptors_binary(std::istream& in) {
    BinaryReader r(in, "descriptor file");
    r.expect_magic(kDescriptorMagic);
    const auto version = r.get<std::uint16_t>();
    if (version != kDescriptorVersion) {
        r.fail("unsupported version " + std::to_string(version));
    }
    const auto n_images = r.get<std::uint32_t>();
    Corpus corpus;
    for (std::uint32_t i = 0; i < n_images; ++i) {
        ImageRecord img;
        img.image_id = r.get<std::uint32_t>();
        img.group_id = r.get<std::uint32_t>();
        const auto n_features = r.get<std::uint32_t>();
        for (std::uint32_t k = 0; k < n_features; ++k) {
            FeatureTuple f;
            f.keypoint.x = r.get<float>();
            f.keypoint.y = r.get<float>();
            f.keypoint.scale = r.get<float>();
            for (float& v : f.sift.values) {
                v = r.get<float>();
            }
            for (float& v : f.color.values) {
                v = r.get<float>();
            }
            img.features.push_back(f);
        }
        corpus.push_back(std::move(img));
    }
    r.expect_eof();
    return corpus;
}

inline bool next_content_line(std::istream& in, std::string& line, std::size_t& line_no) {
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') {
            continue;
        }
        return true;
    }
    return false;
}

inline Corpus read_descriptors_text(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& msg) -> FormatError {
        return FormatError("descriptor text line " + std::to_string(line_no) + ": " + msg);
    };
    if (!next_content_line(in, line, line_no) || line.rfind(kDescriptorTextHeader, 0) != 0) {
        throw fail("missing \"CMID-TEXT 1\" header");
    }
    Corpus corpus;
    while (next_content_line(in, line, line_no)) {
        std::istringstream head(line);
        std::string tag;
        ImageRecord img;
        std::size_t n = 0;
        if (!(head >> tag >> img.image_id >> img.group_id >> n) || tag != "image") {
            throw fail("expected \"image <id> <group> <count>\"");
        }
        for (std::size_t k = 0; k < n; ++k) {
            if (!next_content_line(in, line, line_no)) {
                throw fail("truncated feature list");
            }
            std::istringstream row(line);
            FeatureTuple f;
            bool ok = static_cast<bool>(row >> f.keypoint.x >> f.keypoint.y >> f.keypoint.scale);
            for (float& v : f.sift.values) {
                ok = ok && static_cast<bool>(row >> v);
            }
            for (float& v : f.color.values) {
                ok = ok && static_cast<bool>(row >> v);
            }
            std::string extra;
            if (!ok || (row >> extra)) {
                throw fail("expected 142 numbers per feature row");
            }
            img.features.push_back(f);
        }
        corpus.push_back(std::move(img));
    }
    return corpus;
}

}  // namespace detail

// Reads either variant, detected from the first bytes. Validates every
// descriptor and image-id uniqueness.
inline Corpus read_descriptors(std::istream& in) {
    char head[9] = {};
    in.read(head, 9);
    const std::string_view got(head, static_cast<std::size_t>(in.gcount()));
    in.clear();
    in.seekg(0);
    Corpus corpus;
    if (got.substr(0, 4) == kDescriptorMagic && got != kDescriptorTextHeader.substr(0, 9)) {
        corpus = detail::read_descriptors_binary(in);
    } else {
        corpus = detail::read_descriptors_text(in);
    }
    try {
        validate_corpus(corpus);
    } catch (const InvalidInput& e) {
        throw FormatError(std::string("descriptor file: ") + e.what());
    }
    return corpus;
}

inline void save_descriptors(const std::string& path, const Corpus& corpus, bool text = false) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ConfigError("cannot open for writing: " + path);
    }
    if (text) {
        write_descriptors_text(out, corpus);
    } else {
        write_descriptors(out, corpus);
    }
    if (!out) {
        throw FormatError("write failed: " + path);
    }
}

inline Corpus load_descriptors(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot open descriptor file: " + path);
    }
    return read_descriptors(in);
}

}  // namespace cmi
