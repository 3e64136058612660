#include "nsdf/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <set>

#include <fmt/format.h>

namespace nsdf {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view text, std::string_view why) {
    fail(ErrorCode::BadValue, fmt::format("{} = '{}': {}", key, text, why));
}

template <class T>
T parse_integer(std::string_view key, std::string_view text) {
    T v{};
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
        bad_value(key, text, "expected a non-negative integer");
    return v;
}

double parse_real(std::string_view key, std::string_view text) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size() || text.empty() || !std::isfinite(v))
        bad_value(key, text, "expected a finite number");
    return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    bad_value(key, text, "expected true or false");
}

int parse_int(std::string_view key, std::string_view text) {
    const auto v = parse_integer<std::uint32_t>(key, text);
    if (v > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) bad_value(key, text, "out of range");
    return static_cast<int>(v);
}

std::string real(double v) { return fmt::format("{:.17g}", v); }

struct Field {
    std::string key;
    std::function<void(RunConfig&, std::string_view)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define NSDF_U64(name, member)                                                                     \
    Field {                                                                                        \
        name, [](RunConfig& c, std::string_view t) { c.member = parse_integer<std::uint64_t>(name, t); }, \
            [](const RunConfig& c) { return std::to_string(c.member); }                           \
    }
#define NSDF_INT(name, member)                                                        \
    Field {                                                                           \
        name, [](RunConfig& c, std::string_view t) { c.member = parse_int(name, t); }, \
            [](const RunConfig& c) { return std::to_string(c.member); }              \
    }
#define NSDF_REAL(name, member)                                                        \
    Field {                                                                            \
        name, [](RunConfig& c, std::string_view t) { c.member = parse_real(name, t); }, \
            [](const RunConfig& c) { return real(c.member); }                         \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        NSDF_INT("layer_count", train.arch.layer_count),
        NSDF_INT("hidden_width", train.arch.hidden_width),
        NSDF_INT("latent_dim", train.arch.latent_dim),
        NSDF_INT("skip_layer", train.arch.skip_layer),
        NSDF_REAL("softplus_beta", train.arch.softplus_beta),
        Field{"init_scheme",
              [](RunConfig& c, std::string_view t) {
                  if (t == "geometric")
                      c.train.init_scheme = InitScheme::Geometric;
                  else if (t == "xavier")
                      c.train.init_scheme = InitScheme::Xavier;
                  else
                      bad_value("init_scheme", t, "expected geometric or xavier");
              },
              [](const RunConfig& c) {
                  return std::string(c.train.init_scheme == InitScheme::Geometric ? "geometric" : "xavier");
              }},
        NSDF_U64("epochs", train.epochs),
        NSDF_REAL("initial_lr", train.initial_lr),
        NSDF_U64("lr_halving_period", train.lr_halving_period),
        NSDF_REAL("tau", train.tau),
        NSDF_REAL("lambda", train.lambda),
        Field{"squared_code_norm",
              [](RunConfig& c, std::string_view t) { c.train.squared_code_norm = parse_bool("squared_code_norm", t); },
              [](const RunConfig& c) { return std::string(c.train.squared_code_norm ? "true" : "false"); }},
        NSDF_REAL("code_init_std", train.code_init_std),
        NSDF_U64("surface_batch_size", train.surface_batch_size),
        NSDF_REAL("offsurface_ratio", train.offsurface_ratio),
        NSDF_REAL("adam_beta1", train.adam_beta1),
        NSDF_REAL("adam_beta2", train.adam_beta2),
        NSDF_REAL("adam_epsilon", train.adam_epsilon),
        NSDF_U64("knn_k", train.knn_k),
        NSDF_REAL("uniform_halfwidth", train.uniform_halfwidth),
        NSDF_U64("seed", train.seed),
        NSDF_U64("sample_points", sample_points),
        NSDF_INT("resolution", resolution),
        NSDF_REAL("grid_halfwidth", grid_halfwidth),
        NSDF_U64("eval_points", eval_points),
    };
    return table;
}

#undef NSDF_U64
#undef NSDF_INT
#undef NSDF_REAL

}  // namespace

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const Field& f : fields()) k.push_back(f.key);
        return k;
    }();
    return keys;
}

RunConfig parse_config(std::string_view text) {
    std::map<std::string_view, const Field*> by_key;
    for (const Field& f : fields()) by_key.emplace(f.key, &f);

    RunConfig config;
    std::set<std::string, std::less<>> seen;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const std::size_t nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            fail(ErrorCode::BadValue, fmt::format("line {}: expected 'key = value', got '{}'", line_no, line));
        const std::string_view key = trim(line.substr(0, eq));
        const std::string_view value = trim(line.substr(eq + 1));
        const auto it = by_key.find(key);
        if (it == by_key.end()) fail(ErrorCode::UnknownKey, fmt::format("unknown key '{}' on line {}", key, line_no));
        if (!seen.emplace(key).second) bad_value(key, value, fmt::format("key set twice (line {})", line_no));
        it->second->set(config, value);
    }
    try {
        config.train.validate();
    } catch (const Error& e) {
        fail(ErrorCode::BadValue, e.detail());
    }
    if (config.sample_points == 0) fail(ErrorCode::BadValue, "sample_points must be positive");
    if (config.resolution < 2) fail(ErrorCode::BadValue, "resolution must be at least 2");
    if (!(config.grid_halfwidth > 0.0)) fail(ErrorCode::BadValue, "grid_halfwidth must be positive");
    if (config.eval_points == 0) fail(ErrorCode::BadValue, "eval_points must be positive");
    return config;
}

RunConfig load_config(const std::string& path) {
    try {
        return parse_config(read_file(path));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::FileNotFound) throw;
        fail(e.code(), fmt::format("{}: {}", path, e.detail()));
    }
}

std::string render_config(const RunConfig& config) {
    std::string out;
    for (const Field& f : fields()) out += fmt::format("{} = {}\n", f.key, f.get(config));
    return out;
}

}  // namespace nsdf
