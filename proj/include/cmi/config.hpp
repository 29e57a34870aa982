#pragma once

// Line-oriented "key = value" configuration files.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cmi/error.hpp"
#include "cmi/query.hpp"

namespace cmi {

class KeyValueConfig {
  public:
    KeyValueConfig() = default;

    static KeyValueConfig parse(std::istream& in, const std::string& origin = "config") {
        KeyValueConfig cfg;
        cfg.origin_ = origin;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (auto hash = line.find('#'); hash != std::string::npos) {
                line.erase(hash);
            }
            const std::string trimmed = trim(line);
            if (trimmed.empty()) {
                continue;
            }
            const auto eq = trimmed.find('=');
            if (eq == std::string::npos) {
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected \"key = value\"");
            }
            std::string key = trim(trimmed.substr(0, eq));
            std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty()) {
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
            }
            if (!cfg.values_.emplace(key, value).second) {
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key \"" + key + "\"");
            }
        }
        return cfg;
    }

    static KeyValueConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) {
            throw ConfigError("cannot open config file: " + path);
        }
        return parse(in, path);
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::optional<std::string> get_string(const std::string& key) const {
        used_.insert(key);
        auto it = values_.find(key);
        if (it == values_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    template <class T>
    std::optional<T> get(const std::string& key) const {
        auto s = get_string(key);
        if (!s) {
            return std::nullopt;
        }
        return convert<T>(key, *s);
    }

    template <class T>
    T get_or(const std::string& key, T fallback) const {
        return get<T>(key).value_or(fallback);
    }

    // Keys present in the file that nothing asked for.
    std::vector<std::string> unused_keys() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : values_) {
            if (!used_.count(k)) {
                out.push_back(k);
            }
        }
        return out;
    }

    void reject_unused() const {
        auto unused = unused_keys();
        if (!unused.empty()) {
            throw ConfigError(origin_ + ": unknown key \"" + unused.front() + "\"");
        }
    }

    const std::map<std::string, std::string>& values() const { return values_; }
    const std::string& origin() const { return origin_; }

  private:
    static std::string trim(std::string_view s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string_view::npos) {
            return {};
        }
        const auto e = s.find_last_not_of(" \t\r\n");
        return std::string(s.substr(b, e - b + 1));
    }

    template <class T>
    T convert(const std::string& key, const std::string& s) const {
        auto bad = [&](const char* what) {
            return ConfigError(origin_ + ": key \"" + key + "\" expects " + what + ", got \"" + s + "\"");
        };
        if constexpr (std::is_same_v<T, std::string>) {
            return s;
        } else if constexpr (std::is_same_v<T, bool>) {
            if (s == "true" || s == "1" || s == "on" || s == "yes") {
                return true;
            }
            if (s == "false" || s == "0" || s == "off" || s == "no") {
                return false;
            }
            throw bad("a boolean");
        } else if constexpr (std::is_integral_v<T>) {
            T v{};
            auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc{} || ptr != s.data() + s.size()) {
                throw bad("an integer");
            }
            return v;
        } else {
            static_assert(std::is_floating_point_v<T>);
            std::istringstream in(s);
            in.imbue(std::locale::classic());
            T v{};
            std::string rest;
            if (!(in >> v) || (in >> rest)) {
                throw bad("a number");
            }
            return v;
        }
    }

    std::string origin_ = "config";
    std::map<std::string, std::string> values_;
    mutable std::set<std::string> used_;
};

// Reads QueryParams fields by name; absent keys keep their current value.
// "ma_color = auto" selects ceil(K_c / 2).
inline void read_query_params(const KeyValueConfig& cfg, QueryParams& p) {
    p.ma_sift = cfg.get_or("ma_sift", p.ma_sift);
    if (auto mc = cfg.get_string("ma_color")) {
        if (*mc == "auto") {
            p.ma_color.reset();
        } else {
            p.ma_color = cfg.get<std::uint32_t>("ma_color");
        }
    }
    p.kappa_color = cfg.get_or("kappa_color", p.kappa_color);
    p.sigma_color = cfg.get_or("sigma_color", p.sigma_color);
    p.tau_sift = cfg.get_or("tau_sift", p.tau_sift);
    p.sigma_sift = cfg.get_or("sigma_sift", p.sigma_sift);
    p.enable_sift_he = cfg.get_or("enable_sift_he", p.enable_sift_he);
    p.enable_color_he = cfg.get_or("enable_color_he", p.enable_color_he);
    p.enable_burst = cfg.get_or("enable_burst", p.enable_burst);
    p.log_idf = cfg.get_or("log_idf", p.log_idf);
}

inline std::string format_query_params(const QueryParams& p) {
    std::ostringstream out;
    out << "ma_sift = " << p.ma_sift << '\n';
    out << "ma_color = " << (p.ma_color ? std::to_string(*p.ma_color) : std::string("auto")) << '\n';
    out << "kappa_color = " << p.kappa_color << '\n';
    out << "sigma_color = " << p.sigma_color << '\n';
    out << "tau_sift = " << p.tau_sift << '\n';
    out << "sigma_sift = " << p.sigma_sift << '\n';
    out << "enable_sift_he = " << (p.enable_sift_he ? "true" : "false") << '\n';
    out << "enable_color_he = " << (p.enable_color_he ? "true" : "false") << '\n';
    out << "enable_burst = " << (p.enable_burst ? "true" : "false") << '\n';
    out << "log_idf = " << (p.log_idf ? "true" : "false") << '\n';
    return out.str();
}

}  // namespace cmi
