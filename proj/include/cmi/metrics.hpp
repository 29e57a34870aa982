#pragma once

// Retrieval metrics: Ukbench N-S score, average precision / mAP and top-k
// hit rate, with group-based ground truth.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "cmi/error.hpp"
#include "cmi/features.hpp"
#include "cmi/query.hpp"

namespace cmi {

// Relevance by shared group id.
class GroundTruth {
  public:
    GroundTruth() = default;

    static GroundTruth from_corpus(const Corpus& corpus) {
        GroundTruth t;
        for (const ImageRecord& img : corpus) {
            t.add(img.image_id, img.group_id);
        }
        return t;
    }

    void add(ImageId image, GroupId group) {
        if (!group_of_.emplace(image, group).second) {
            throw InvalidInput("ground truth lists image " + std::to_string(image) + " twice");
        }
        members_[group].push_back(image);
    }

    bool contains(ImageId image) const { return group_of_.count(image) != 0; }

    GroupId group_of(ImageId image) const {
        auto it = group_of_.find(image);
        if (it == group_of_.end()) {
            throw InvalidInput("no ground truth for image " + std::to_string(image));
        }
        return it->second;
    }

    bool relevant(ImageId query, ImageId candidate) const {
        auto it = group_of_.find(candidate);
        return it != group_of_.end() && it->second == group_of(query);
    }

    // Group size including the query itself.
    std::size_t group_size(ImageId query) const { return members_.at(group_of(query)).size(); }

    std::size_t size() const { return group_of_.size(); }

  private:
    std::unordered_map<ImageId, GroupId> group_of_;
    std::map<GroupId, std::vector<ImageId>> members_;
};

// Text truth file: one "image_id group_id" pair per line; '#' comments.
inline GroundTruth read_ground_truth(std::istream& in) {
    GroundTruth t;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') {
            continue;
        }
        std::istringstream row(line);
        ImageId image = 0;
        GroupId group = 0;
        std::string extra;
        if (!(row >> image >> group) || (row >> extra)) {
            throw FormatError("truth line " + std::to_string(line_no) + ": expected \"<image_id> <group_id>\"");
        }
        try {
            t.add(image, group);
        } catch (const InvalidInput& e) {
            throw FormatError("truth line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return t;
}

inline void write_ground_truth(std::ostream& out, const Corpus& corpus) {
    out << "# image_id group_id\n";
    for (const ImageRecord& img : corpus) {
        out << img.image_id << ' ' << img.group_id << '\n';
    }
}

// Relevant images among the first four results; the ranked list is expected
// to include the query itself. Needs groups of exactly four images.
inline double ns_score(const RankedList& ranked, const GroundTruth& truth) {
    if (truth.group_size(ranked.query_id) != 4) {
        throw InvalidInput("N-S score needs groups of exactly 4 images; image " + std::to_string(ranked.query_id) +
                           " has " + std::to_string(truth.group_size(ranked.query_id)));
    }
    double hits = 0.0;
    const std::size_t top = std::min<std::size_t>(4, ranked.items.size());
    for (std::size_t r = 0; r < top; ++r) {
        if (truth.relevant(ranked.query_id, ranked.items[r].image_id)) {
            hits += 1.0;
        }
    }
    return hits;
}

// Precision at each relevant hit, averaged over all relevant images (the
// query itself is never relevant and is skipped if present). Unretrieved
// relevant images contribute zero. nullopt when nothing is relevant.
inline std::optional<double> average_precision(const RankedList& ranked, const GroundTruth& truth) {
    const std::size_t relevant = truth.group_size(ranked.query_id) - 1;
    if (relevant == 0) {
        return std::nullopt;
    }
    double sum = 0.0;
    std::size_t hits = 0;
    std::size_t rank = 0;
    for (const ScoredImage& item : ranked.items) {
        if (item.image_id == ranked.query_id) {
            continue;
        }
        ++rank;
        if (truth.relevant(ranked.query_id, item.image_id)) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(rank);
        }
    }
    return sum / static_cast<double>(relevant);
}

inline double mean_average_precision(const std::vector<std::optional<double>>& aps, std::size_t* skipped = nullptr) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& ap : aps) {
        if (ap) {
            sum += *ap;
            ++n;
        }
    }
    if (skipped) {
        *skipped = aps.size() - n;
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

// Hit rate: 1 if any relevant image (other than the query) is within the
// first k results.
inline double top_k_precision(const RankedList& ranked, const GroundTruth& truth, std::size_t k) {
    if (k < 1) {
        throw InvalidInput("top-k precision needs k >= 1");
    }
    std::size_t rank = 0;
    for (const ScoredImage& item : ranked.items) {
        if (item.image_id == ranked.query_id) {
            continue;
        }
        if (++rank > k) {
            break;
        }
        if (truth.relevant(ranked.query_id, item.image_id)) {
            return 1.0;
        }
    }
    return 0.0;
}

}  // namespace cmi
