#include "mvc/config.hpp"

#include <cstdlib>
#include <fstream>

#include "mvc/errors.hpp"

namespace mvc {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

} // namespace

ConfigMap ConfigMap::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file " + path);
    ConfigMap cfg;
    std::string line, section;
    int64_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError(path + ":" + std::to_string(lineno) +
                                  ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty())
                throw ConfigError(path + ":" + std::to_string(lineno) + ": empty section name");
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) +
                              ": expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
        cfg.set(section.empty() ? key : section + "." + key, value);
    }
    return cfg;
}

void ConfigMap::set(const std::string& dotted_key, const std::string& value) {
    values_[dotted_key] = value;
}

bool ConfigMap::has(const std::string& dotted_key) const {
    return values_.count(dotted_key) != 0;
}

std::string ConfigMap::get_str(const std::string& key, const std::string& fallback) const {
    consumed_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

int64_t ConfigMap::get_int(const std::string& key, int64_t fallback) const {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        size_t used = 0;
        const int64_t v = std::stoll(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("setting " + key + " expects an integer, got '" + it->second + "'");
    }
}

uint64_t ConfigMap::get_u64(const std::string& key, uint64_t fallback) const {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        size_t used = 0;
        const uint64_t v = std::stoull(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("setting " + key + " expects an unsigned integer, got '" +
                          it->second + "'");
    }
}

double ConfigMap::get_double(const std::string& key, double fallback) const {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        size_t used = 0;
        const double v = std::stod(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("setting " + key + " expects a number, got '" + it->second + "'");
    }
}

bool ConfigMap::get_bool(const std::string& key, bool fallback) const {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("setting " + key + " expects a boolean, got '" + v + "'");
}

std::vector<std::string> ConfigMap::unused() const {
    std::vector<std::string> out;
    for (const auto& [key, value] : values_)
        if (!consumed_.count(key)) out.push_back(key);
    return out;
}

uint64_t resolve_seed(const ConfigMap& cfg, const std::string& key, uint64_t builtin) {
    uint64_t fallback = builtin;
    if (const char* env = std::getenv("MVC_SEED")) {
        try {
            size_t used = 0;
            fallback = std::stoull(env, &used);
            if (used != std::string(env).size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
            throw ConfigError("MVC_SEED must be an unsigned integer, got '" +
                              std::string(env) + "'");
        }
    }
    return cfg.get_u64(key, fallback);
}

BackboneConfig backbone_from_config(const ConfigMap& cfg) {
    BackboneConfig b;
    b.dim = cfg.get_int("backbone.dim", b.dim);
    b.n_heads = cfg.get_int("backbone.heads", b.n_heads);
    b.n_blocks = cfg.get_int("backbone.blocks", b.n_blocks);
    b.patch_size = cfg.get_int("backbone.patch_size", b.patch_size);
    b.mlp_ratio = cfg.get_int("backbone.mlp_ratio", b.mlp_ratio);
    b.rope_base = cfg.get_double("backbone.rope_base", b.rope_base);
    b.validate();
    return b;
}

MaskConfig mask_from_config(const ConfigMap& cfg) {
    MaskConfig m;
    m.random_ratio = cfg.get_double("mask.random_ratio", m.random_ratio);
    m.block_ratio = cfg.get_double("mask.block_ratio", m.block_ratio);
    m.block_tolerance = cfg.get_double("mask.block_tolerance", m.block_tolerance);
    m.max_block_resamples =
        static_cast<int>(cfg.get_int("mask.max_block_resamples", m.max_block_resamples));
    m.mix_random = cfg.get_double("mask.mix_random", m.mix_random);
    m.mix_rectangle = cfg.get_double("mask.mix_rectangle", m.mix_rectangle);
    m.mix_ellipse = cfg.get_double("mask.mix_ellipse", m.mix_ellipse);
    m.n_reference = static_cast<int>(cfg.get_int("mask.n_reference", m.n_reference));
    return m;
}

StreamConfig stream_from_config(const ConfigMap& cfg) {
    StreamConfig s;
    s.min_views = cfg.get_int("stream.min_views", s.min_views);
    s.max_views = cfg.get_int("stream.max_views", s.max_views);
    s.image_h = cfg.get_int("stream.image_h", s.image_h);
    s.image_w = cfg.get_int("stream.image_w", s.image_w);
    s.extent = cfg.get_double("stream.extent", s.extent);
    s.arc_radius = cfg.get_double("stream.arc_radius", s.arc_radius);
    s.min_step_deg = cfg.get_double("stream.min_step_deg", s.min_step_deg);
    s.max_step_deg = cfg.get_double("stream.max_step_deg", s.max_step_deg);
    s.w_plane = cfg.get_double("stream.w_plane", s.w_plane);
    s.w_two_plane = cfg.get_double("stream.w_two_plane", s.w_two_plane);
    s.w_height_field = cfg.get_double("stream.w_height_field", s.w_height_field);
    s.w_checker = cfg.get_double("stream.w_checker", s.w_checker);
    s.w_wide_arc = cfg.get_double("stream.w_wide_arc", s.w_wide_arc);
    return s;
}

OptimConfig optim_from_config(const ConfigMap& cfg) {
    OptimConfig o;
    o.lr_peak = cfg.get_double("optim.lr_peak", o.lr_peak);
    o.beta1 = cfg.get_double("optim.beta1", o.beta1);
    o.beta2 = cfg.get_double("optim.beta2", o.beta2);
    o.eps = cfg.get_double("optim.eps", o.eps);
    o.weight_decay = cfg.get_double("optim.weight_decay", o.weight_decay);
    o.grad_clip = cfg.get_double("optim.grad_clip", o.grad_clip);
    o.warmup_frac = cfg.get_double("optim.warmup_frac", o.warmup_frac);
    return o;
}

} // namespace mvc
