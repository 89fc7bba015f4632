#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace psinger {

struct TgInterval {
    double xmin = 0.0, xmax = 0.0;
    std::string label;
};

struct TgTier {
    std::string name;
    double xmin = 0.0, xmax = 0.0;
    std::vector<TgInterval> intervals;
};

struct TextGrid {
    double xmin = 0.0, xmax = 0.0;
    std::vector<TgTier> tiers;

    const TgTier* tier(const std::string& name) const;
};

class TextGridError : public std::runtime_error {
public:
    TextGridError(const std::string& msg, int line)
        : std::runtime_error(msg + " (line " + std::to_string(line) + ")"), line(line) {}
    int line;
};

// Parses Praat long or short text format. Accepts UTF-8 (with or without BOM)
// and UTF-16 (both endians, per BOM). Interval tiers only.
TextGrid parse_textgrid(const std::string& text);

// Canonical long-format serialization; round-trips through parse_textgrid.
std::string serialize_textgrid(const TextGrid& tg);

}  // namespace psinger
