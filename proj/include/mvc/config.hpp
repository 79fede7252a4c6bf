#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mvc/backbone.hpp"
#include "mvc/masking.hpp"
#include "mvc/optimizer.hpp"
#include "mvc/synthdata.hpp"

namespace mvc {

// Flat key-value configuration: "key = value" lines grouped by [section]
// headers, addressed as "section.key". Command-line overrides use the same
// dotted names. Getters track which keys were consumed so typos in a config
// file or flag can be reported instead of silently ignored.
class ConfigMap {
public:
    ConfigMap() = default;

    static ConfigMap from_file(const std::string& path);

    void set(const std::string& dotted_key, const std::string& value);
    bool has(const std::string& dotted_key) const;

    std::string get_str(const std::string& key, const std::string& fallback) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    uint64_t get_u64(const std::string& key, uint64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    // Keys never touched by any getter; non-empty means a misspelled or
    // misplaced setting.
    std::vector<std::string> unused() const;

private:
    std::map<std::string, std::string> values_;
    mutable std::set<std::string> consumed_;
};

// Seed resolution: an explicit config value wins, then the MVC_SEED
// environment variable, then the built-in default.
uint64_t resolve_seed(const ConfigMap& cfg, const std::string& key, uint64_t builtin);

// Section loaders. Each starts from defaults and applies overrides from its
// section of the map.
BackboneConfig backbone_from_config(const ConfigMap& cfg);
MaskConfig mask_from_config(const ConfigMap& cfg);
StreamConfig stream_from_config(const ConfigMap& cfg);
OptimConfig optim_from_config(const ConfigMap& cfg);

} // namespace mvc
