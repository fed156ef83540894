#ifndef ELF_RUN_CONFIG_HPP
#define ELF_RUN_CONFIG_HPP

// INI run configuration. Sections: [model], [optim], [train], [rain], [data].
// `model.variant` selects the defaults (ELF, ELF-LW, desk) that every other
// key then overrides; unknown sections or keys are rejected.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "config.hpp"
#include "data.hpp"
#include "optim.hpp"
#include "train.hpp"

namespace elf {

struct RunConfig {
    ModelConfig model = ModelConfig::elf();
    AdamOptions optim;
    TrainOptions train;
    RainParams rain;
    std::size_t image_size = 64;  // synthetic data
    std::vector<CleanKind> kinds{CleanKind::Blobs};

    // Variant defaults. The 65-of-600 decay interval is scaled to the epoch
    // budget unless set explicitly.
    static RunConfig for_variant(const std::string& variant) {
        RunConfig r;
        r.model = ModelConfig::from_variant(variant);
        if (variant == "desk") {
            r.train.epochs = 60;
            r.train.batch = 2;
            r.train.patch = 32;
        }
        r.optim.decay_every = scaled_decay(r.train.epochs);
        return r;
    }

    static std::size_t scaled_decay(std::size_t epochs) {
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(65.0 * static_cast<double>(epochs) / 600.0)));
    }
};

namespace detail {

template <class V>
V parse_value(const std::string& key, const std::string& s);

template <>
inline std::string parse_value<std::string>(const std::string&, const std::string& s) {
    return s;
}

template <>
inline bool parse_value<bool>(const std::string& key, const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw Error("config: " + key + " expects true/false, got '" + s + "'");
}

template <>
inline double parse_value<double>(const std::string& key, const std::string& s) {
    std::size_t pos = 0;
    double v = 0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != s.size() || s.empty() || !std::isfinite(v))
        throw Error("config: " + key + " expects a number, got '" + s + "'");
    return v;
}

template <>
inline std::size_t parse_value<std::size_t>(const std::string& key, const std::string& s) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
        if (!s.empty() && s[0] != '-') v = std::stoull(s, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != s.size() || s.empty()) throw Error("config: " + key + " expects a non-negative integer, got '" + s + "'");
    return static_cast<std::size_t>(v);
}

template <class V>
std::string format_value(const V& v) {
    std::ostringstream ss;
    if constexpr (std::is_same_v<V, bool>) ss << (v ? "true" : "false");
    else if constexpr (std::is_same_v<V, double>) {
        ss.precision(17);
        ss << v;
    } else ss << v;
    return ss.str();
}

struct KeyBinding {
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

// Table of every recognised "section.key".
inline const std::vector<std::pair<std::string, KeyBinding>>& config_keys() {
    static const std::vector<std::pair<std::string, KeyBinding>> keys = [] {
        std::vector<std::pair<std::string, KeyBinding>> k;
        auto add = [&k](const std::string& name, auto accessor) {
            using V = std::remove_cvref_t<decltype(accessor(std::declval<RunConfig&>()))>;
            k.emplace_back(name, KeyBinding{
                                     [name, accessor](RunConfig& r, const std::string& s) {
                                         accessor(r) = parse_value<V>(name, s);
                                     },
                                     [accessor](const RunConfig& r) {
                                         return format_value(accessor(const_cast<RunConfig&>(r)));
                                     }});
        };
        add("model.channels", [](RunConfig& r) -> auto& { return r.model.channels; });
        add("model.rtb_depth", [](RunConfig& r) -> auto& { return r.model.rtb_depth; });
        add("model.heads", [](RunConfig& r) -> auto& { return r.model.heads; });
        add("model.sample_factor", [](RunConfig& r) -> auto& { return r.model.sample_factor; });
        add("model.rcab_per_stage", [](RunConfig& r) -> auto& { return r.model.rcab_per_stage; });
        add("model.edb_stages", [](RunConfig& r) -> auto& { return r.model.edb_stages; });
        add("model.ca_reduction", [](RunConfig& r) -> auto& { return r.model.ca_reduction; });
        add("model.ffn_expansion", [](RunConfig& r) -> auto& { return r.model.ffn_expansion; });
        add("model.dsc_encoder", [](RunConfig& r) -> auto& { return r.model.dsc_encoder; });
        add("model.swap_qk", [](RunConfig& r) -> auto& { return r.model.swap_qk; });
        add("model.tie_backbones", [](RunConfig& r) -> auto& { return r.model.tie_backbones; });
        add("model.alpha", [](RunConfig& r) -> auto& { return r.model.alpha; });
        add("model.lambda", [](RunConfig& r) -> auto& { return r.model.lambda; });
        add("model.epsilon", [](RunConfig& r) -> auto& { return r.model.epsilon; });
        add("optim.base_lr", [](RunConfig& r) -> auto& { return r.optim.base_lr; });
        add("optim.decay", [](RunConfig& r) -> auto& { return r.optim.decay; });
        add("optim.decay_every", [](RunConfig& r) -> auto& { return r.optim.decay_every; });
        add("optim.beta1", [](RunConfig& r) -> auto& { return r.optim.beta1; });
        add("optim.beta2", [](RunConfig& r) -> auto& { return r.optim.beta2; });
        add("optim.eps", [](RunConfig& r) -> auto& { return r.optim.eps; });
        add("train.epochs", [](RunConfig& r) -> auto& { return r.train.epochs; });
        add("train.max_steps", [](RunConfig& r) -> auto& { return r.train.max_steps; });
        add("train.batch", [](RunConfig& r) -> auto& { return r.train.batch; });
        add("train.patch", [](RunConfig& r) -> auto& { return r.train.patch; });
        add("train.save_every", [](RunConfig& r) -> auto& { return r.train.save_every; });
        add("train.diverge_window", [](RunConfig& r) -> auto& { return r.train.diverge_window; });
        add("train.diverge_factor", [](RunConfig& r) -> auto& { return r.train.diverge_factor; });
        add("rain.density", [](RunConfig& r) -> auto& { return r.rain.density; });
        add("rain.angle_min", [](RunConfig& r) -> auto& { return r.rain.angle_deg.lo; });
        add("rain.angle_max", [](RunConfig& r) -> auto& { return r.rain.angle_deg.hi; });
        add("rain.length_min", [](RunConfig& r) -> auto& { return r.rain.length_px.lo; });
        add("rain.length_max", [](RunConfig& r) -> auto& { return r.rain.length_px.hi; });
        add("rain.width_min", [](RunConfig& r) -> auto& { return r.rain.width_px.lo; });
        add("rain.width_max", [](RunConfig& r) -> auto& { return r.rain.width_px.hi; });
        add("rain.intensity_min", [](RunConfig& r) -> auto& { return r.rain.intensity.lo; });
        add("rain.intensity_max", [](RunConfig& r) -> auto& { return r.rain.intensity.hi; });
        add("data.size", [](RunConfig& r) -> auto& { return r.image_size; });
        return k;
    }();
    return keys;
}

inline std::string kinds_to_string(const std::vector<CleanKind>& ks) {
    std::string s;
    for (std::size_t i = 0; i < ks.size(); ++i) s += (i ? "," : "") + to_string(ks[i]);
    return s;
}

inline std::vector<CleanKind> parse_kinds(const std::string& s) {
    std::vector<CleanKind> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_clean_kind(item));
    if (out.empty()) throw Error("config: data.kinds is empty");
    return out;
}

}  // namespace detail

// Applies "section.key" = value pairs in order; `model.variant` first resets
// everything to that variant's defaults.
inline RunConfig resolve_config(const std::vector<std::pair<std::string, std::string>>& kv) {
    std::string variant = "ELF";
    for (const auto& [k, v] : kv)
        if (k == "model.variant") variant = v;
    RunConfig r = RunConfig::for_variant(variant);
    bool decay_set = false;
    std::optional<std::size_t> streaks;
    for (const auto& [k, v] : kv) {
        if (k == "model.variant") continue;
        if (k == "train.seed") {
            r.train.seed = detail::parse_value<std::size_t>(k, v);
            continue;
        }
        if (k == "rain.streaks") {
            streaks = detail::parse_value<std::size_t>(k, v);
            continue;
        }
        if (k == "data.kinds") {
            r.kinds = detail::parse_kinds(v);
            continue;
        }
        const auto& keys = detail::config_keys();
        auto it = std::find_if(keys.begin(), keys.end(), [&](const auto& e) { return e.first == k; });
        if (it == keys.end()) throw Error("config: unknown key '" + k + "'");
        it->second.set(r, v);
        if (k == "optim.decay_every") decay_set = true;
    }
    if (!decay_set) r.optim.decay_every = RunConfig::scaled_decay(r.train.epochs);
    r.rain.streaks = streaks;
    r.model.validate();
    r.rain.validate();
    return r;
}

// Flattens an INI text into ordered "section.key" pairs.
inline std::vector<std::pair<std::string, std::string>> parse_ini(std::istream& in, const std::string& origin) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw Error("config " + origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [section, body] : tree) {
        if (body.empty()) throw Error("config " + origin + ": key '" + section + "' outside a section");
        for (const auto& [key, value] : body) out.emplace_back(section + "." + key, value.data());
    }
    return out;
}

inline std::vector<std::pair<std::string, std::string>> read_ini_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open config " + path);
    return parse_ini(f, path);
}

// The complete resolved configuration as INI text; parsing it back yields the
// same RunConfig.
inline std::string to_ini(const RunConfig& r) {
    std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
    sections["model"].emplace_back("variant", r.model.variant);
    for (const auto& [name, b] : detail::config_keys()) {
        const auto dot = name.find('.');
        sections[name.substr(0, dot)].emplace_back(name.substr(dot + 1), b.get(r));
    }
    sections["train"].emplace_back("seed", std::to_string(r.train.seed));
    if (r.rain.streaks) sections["rain"].emplace_back("streaks", std::to_string(*r.rain.streaks));
    sections["data"].emplace_back("kinds", detail::kinds_to_string(r.kinds));
    std::string out;
    for (const char* s : {"model", "optim", "train", "rain", "data"}) {
        out += "[" + std::string(s) + "]\n";
        for (const auto& [k, v] : sections[s]) out += k + " = " + v + "\n";
        out += "\n";
    }
    return out;
}

}  // namespace elf

#endif  // ELF_RUN_CONFIG_HPP
