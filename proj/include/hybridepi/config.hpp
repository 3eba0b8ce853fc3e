#pragma once

// Flat `key=value` text files for parameters and run configuration.

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>

#include "model.hpp"

namespace hybridepi {

/// Raised for malformed or unknown configuration entries.
class config_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using KeyValues = std::map<std::string, std::string>;

/// Lines are `key=value`; `#` starts a comment; blank lines are skipped.
inline KeyValues parse_key_values(std::istream& in, const std::string& origin = "config") {
    KeyValues kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error(origin + ":" + std::to_string(lineno) + ": expected key=value");
        auto strip = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        std::string key = strip(line.substr(0, eq));
        std::string value = strip(line.substr(eq + 1));
        if (key.empty()) throw config_error(origin + ":" + std::to_string(lineno) + ": empty key");
        if (kv.contains(key)) throw config_error(origin + ":" + std::to_string(lineno) + ": duplicate key " + key);
        kv.emplace(std::move(key), std::move(value));
    }
    return kv;
}

inline KeyValues load_key_values(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open " + path);
    return parse_key_values(in, path);
}

inline void reject_unknown(const KeyValues& kv, const std::set<std::string>& allowed, const std::string& origin) {
    for (const auto& [key, value] : kv)
        if (!allowed.contains(key)) throw config_error(origin + ": unknown key '" + key + "'");
}

inline double to_double(const std::string& key, const std::string& text) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(v))
        throw config_error("key '" + key + "': not a number: " + text);
    return v;
}

inline long to_long(const std::string& key, const std::string& text) {
    long v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size())
        throw config_error("key '" + key + "': not an integer: " + text);
    return v;
}

inline const std::set<std::string>& param_keys() {
    static const std::set<std::string> keys{"alpha_g", "alpha_l", "alpha_n", "beta_g", "beta_l",
                                            "beta_n",  "gamma",   "lambda",  "tau_minutes"};
    return keys;
}

/// Overlays parameter keys from `kv` onto `p`. tau_minutes sets gamma only when gamma is absent.
inline void apply_params(const KeyValues& kv, ModelParams& p) {
    const std::pair<const char*, double ModelParams::*> fields[] = {
        {"alpha_g", &ModelParams::alpha_g}, {"alpha_l", &ModelParams::alpha_l}, {"alpha_n", &ModelParams::alpha_n},
        {"beta_g", &ModelParams::beta_g},   {"beta_l", &ModelParams::beta_l},   {"beta_n", &ModelParams::beta_n},
        {"gamma", &ModelParams::gamma},     {"lambda", &ModelParams::lambda},
    };
    for (const auto& [key, member] : fields)
        if (auto it = kv.find(key); it != kv.end()) p.*member = to_double(key, it->second);
    if (auto it = kv.find("tau_minutes"); it != kv.end() && !kv.contains("gamma")) {
        const double tau = to_double("tau_minutes", it->second);
        if (!(tau > 0.0)) throw config_error("tau_minutes must be positive");
        p.gamma = 10.0 / tau;
    }
}

/// Named parameter presets.
inline ModelParams preset(const std::string& name) {
    if (name == "conficker-2008") return conficker_2008();
    throw config_error("unknown preset '" + name + "'");
}

} // namespace hybridepi
