#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace psinger {

// Single nested config for every module. Loaded from JSON, validated against
// the default tree (unknown keys rejected), CLI overrides via dotted paths.
struct Config {
    nlohmann::json j;

    static Config defaults();
    static Config from_file(const std::string& path);
    static Config from_json(const nlohmann::json& in);  // validates + fills defaults

    void set_override(const std::string& dotted, const std::string& value);

    double num(const std::string& dotted) const;
    int64_t integer(const std::string& dotted) const;
    bool flag(const std::string& dotted) const;
    std::string str(const std::string& dotted) const;

    uint64_t hash() const;
    std::string dump(int indent = 2) const { return j.dump(indent); }

    // frequently used values
    size_t hidden() const { return size_t(integer("model.hidden")); }
};

}  // namespace psinger
