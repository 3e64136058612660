#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "nsdf/trainer.hpp"

namespace nsdf {

/// Everything a run can be configured with. Defaults are the full-scale
/// settings; desk-scale runs override them in a config file.
struct RunConfig {
    TrainConfig train;
    std::uint64_t sample_points = 500000;
    int resolution = 256;
    double grid_halfwidth = 1.1;
    std::uint64_t eval_points = 30000;

    bool operator==(const RunConfig&) const = default;
};

/// `key = value` per line; `#` starts a comment; blank lines ignored.
/// Throws UnknownKey (naming the key) or BadValue (key and offending text).
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::string& path);

/// Canonical text form listing every key; parse_config(render_config(c)) == c.
std::string render_config(const RunConfig& config);

/// Recognized keys in canonical order.
const std::vector<std::string>& config_keys();

}  // namespace nsdf
