#include "nsdf/cohort.hpp"

#include <algorithm>
#include <charconv>
#include <memory>
#include <cmath>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "nsdf/checkpoint.hpp"
#include "nsdf/kdtree.hpp"

namespace nsdf {

namespace {

enum Stream : std::uint64_t { kShapeSeed = 0xc0, kTruthSample = 0xc1, kReconSample = 0xc2, kPairSample = 0xc3 };

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t id) {
    Rng rng = make_rng(seed, {stream, id});
    return rng();
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = s.find(sep, start);
        out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

template <class T>
T parse_number(std::string_view text, std::string_view what) {
    T value{};
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end || text.empty())
        fail(ErrorCode::ParseError, fmt::format("bad {} '{}'", what, text));
    return value;
}

std::string_view trim_cr(std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    return line;
}

std::vector<std::string_view> lines_of(std::string_view text) {
    std::vector<std::string_view> out;
    for (std::string_view line : split(text, '\n')) {
        line = trim_cr(line);
        if (!line.empty()) out.push_back(line);
    }
    return out;
}

double mean_of_nearest(const std::vector<Vec3>& from, const KdTree& to) {
    double sum = 0.0;
    for (const Vec3& p : from) sum += to.nearest(p).dist2;
    return sum / static_cast<double>(from.size());
}

std::vector<Vec3> subsample(const std::vector<Vec3>& points, std::size_t count, std::uint64_t seed) {
    if (points.size() <= count) return points;
    // partial Fisher-Yates: a uniform subset without replacement
    std::vector<std::size_t> idx(points.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng = make_rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    std::vector<Vec3> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = points[idx[i]];
    return out;
}

}  // namespace

void validate_weights(const CombinationWeights& weights, std::size_t codebook_rows) {
    if (weights.indices.size() != weights.alphas.size())
        fail(ErrorCode::ShapeMismatch, fmt::format("{} indices but {} alphas", weights.indices.size(),
                                                   weights.alphas.size()));
    if (weights.indices.empty()) fail(ErrorCode::NotConvex, "no weights given");
    double sum = 0.0;
    for (double a : weights.alphas) {
        if (!(a >= 0.0) || !std::isfinite(a)) fail(ErrorCode::NotConvex, fmt::format("alpha {} is negative", a));
        sum += a;
    }
    if (std::abs(sum - 1.0) > 1e-9) fail(ErrorCode::NotConvex, fmt::format("alphas sum to {:.17g}, not 1", sum));
    std::vector<std::size_t> sorted = weights.indices;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (sorted[i] >= codebook_rows)
            fail(ErrorCode::IndexOutOfRange,
                 fmt::format("code index {} out of range (codebook has {} rows)", sorted[i], codebook_rows));
        if (i > 0 && sorted[i] == sorted[i - 1])
            fail(ErrorCode::DuplicateIndex, fmt::format("code index {} listed twice", sorted[i]));
    }
}

LatentCode combine_codes(const LatentCodebook& codebook, const CombinationWeights& weights) {
    validate_weights(weights, static_cast<std::size_t>(codebook.rows()));
    std::vector<std::size_t> order(weights.indices.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return weights.indices[a] < weights.indices[b];
    });
    LatentCode z = LatentCode::Zero(codebook.cols());
    for (std::size_t o : order) {
        const auto row = static_cast<Eigen::Index>(weights.indices[o]);
        const double a = weights.alphas[o];
        for (Eigen::Index c = 0; c < z.size(); ++c) z[c] += a * codebook(row, c);
    }
    return z;
}

CombinationWeights draw_weights(std::size_t codebook_rows, std::size_t interp_count, std::uint64_t seed,
                                std::size_t shape_id) {
    if (interp_count == 0) fail(ErrorCode::InvalidArgument, "interp_count must be at least 1");
    if (interp_count > codebook_rows)
        fail(ErrorCode::InterpCountTooLarge,
             fmt::format("cannot interpolate {} codes from a codebook of {}", interp_count, codebook_rows));
    Rng rng = make_rng(derived_seed(seed, kShapeSeed, shape_id));
    std::vector<std::size_t> pool(codebook_rows);
    std::iota(pool.begin(), pool.end(), 0);
    CombinationWeights w;
    for (std::size_t i = 0; i < interp_count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
        w.indices.push_back(pool[i]);
    }
    std::exponential_distribution<double> expo(1.0);
    double sum = 0.0;
    for (std::size_t i = 0; i < interp_count; ++i) {
        double e = expo(rng);
        while (e <= 0.0) e = expo(rng);
        w.alphas.push_back(e);
        sum += e;
    }
    for (double& a : w.alphas) a /= sum;
    return w;
}

Cohort generate_cohort(const Checkpoint& checkpoint, std::size_t count, std::size_t interp_count, std::uint64_t seed,
                       int resolution, const GridOptions& options) {
    if (count == 0) fail(ErrorCode::InvalidCount, "cohort size must be at least 1");
    if (resolution < 2) fail(ErrorCode::InvalidResolution, fmt::format("resolution {} is below 2", resolution));
    const std::size_t n = checkpoint.shape_count();
    if (interp_count > n)
        fail(ErrorCode::InterpCountTooLarge,
             fmt::format("cannot interpolate {} codes from a codebook of {}", interp_count, n));
    Cohort cohort;
    cohort.manifest.checkpoint_id = checkpoint_fingerprint(checkpoint);
    cohort.manifest.interp_count = interp_count;
    cohort.manifest.resolution = resolution;
    for (std::size_t s = 0; s < count; ++s) {
        ManifestEntry entry;
        entry.shape_id = s;
        entry.seed = derived_seed(seed, kShapeSeed, s);
        entry.weights = draw_weights(n, interp_count, seed, s);
        const LatentCode z = combine_codes(checkpoint.codes, entry.weights);
        cohort.meshes.push_back(reconstruct_shape(checkpoint, z, resolution, options));
        cohort.manifest.entries.push_back(std::move(entry));
    }
    return cohort;
}

std::string render_manifest(const CohortManifest& manifest) {
    std::string out = fmt::format("# checkpoint_id={:016x}\n# interp_count={}\n# resolution={}\n",
                                  manifest.checkpoint_id, manifest.interp_count, manifest.resolution);
    out += "shape_id,seed,indices,alphas,mesh_path\n";
    for (const ManifestEntry& e : manifest.entries) {
        out += fmt::format("{},{},{},{:.17g},{}\n", e.shape_id, e.seed, fmt::join(e.weights.indices, ";"),
                           fmt::join(e.weights.alphas, ";"), e.mesh_path);
    }
    return out;
}

CohortManifest parse_manifest(std::string_view text) {
    CohortManifest m;
    bool header = false;
    for (std::string_view line : lines_of(text)) {
        if (line.front() == '#') {
            line.remove_prefix(1);
            while (!line.empty() && line.front() == ' ') line.remove_prefix(1);
            const std::size_t eq = line.find('=');
            if (eq == std::string_view::npos) continue;
            const std::string_view key = line.substr(0, eq), value = line.substr(eq + 1);
            if (key == "checkpoint_id") {
                std::uint64_t id = 0;
                auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), id, 16);
                if (ec != std::errc() || ptr != value.data() + value.size())
                    fail(ErrorCode::ParseError, fmt::format("bad checkpoint_id '{}'", value));
                m.checkpoint_id = id;
            } else if (key == "interp_count") {
                m.interp_count = parse_number<std::size_t>(value, "interp_count");
            } else if (key == "resolution") {
                m.resolution = parse_number<int>(value, "resolution");
            }
            continue;
        }
        if (!header) {
            if (line != "shape_id,seed,indices,alphas,mesh_path")
                fail(ErrorCode::ParseError, fmt::format("unexpected manifest header '{}'", line));
            header = true;
            continue;
        }
        const auto fields = split(line, ',');
        if (fields.size() != 5) fail(ErrorCode::ParseError, fmt::format("manifest row '{}' needs 5 fields", line));
        ManifestEntry e;
        e.shape_id = parse_number<std::size_t>(fields[0], "shape_id");
        e.seed = parse_number<std::uint64_t>(fields[1], "seed");
        for (auto s : split(fields[2], ';')) e.weights.indices.push_back(parse_number<std::size_t>(s, "index"));
        for (auto s : split(fields[3], ';')) e.weights.alphas.push_back(parse_number<double>(s, "alpha"));
        e.mesh_path = std::string(fields[4]);
        m.entries.push_back(std::move(e));
    }
    if (!header) fail(ErrorCode::ParseError, "manifest has no header row");
    return m;
}

double chamfer_distance(std::span<const Vec3> a, std::span<const Vec3> b) {
    if (a.empty() || b.empty()) fail(ErrorCode::EmptySet, "chamfer distance of an empty point set");
    const std::vector<Vec3> va(a.begin(), a.end()), vb(b.begin(), b.end());
    const KdTree ta(a), tb(b);
    return mean_of_nearest(va, tb) + mean_of_nearest(vb, ta);
}

DistanceSummary summarize(std::span<const double> values, std::size_t bins) {
    DistanceSummary s;
    s.count = values.size();
    if (values.empty() || bins == 0) return s;
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(s.count);
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(sq / static_cast<double>(s.count));
    auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    s.min = *lo;
    s.max = *hi;
    const double width = (s.max - s.min) / static_cast<double>(bins);
    s.bin_edges.resize(bins + 1);
    for (std::size_t b = 0; b <= bins; ++b) s.bin_edges[b] = s.min + width * static_cast<double>(b);
    s.bin_edges.back() = s.max;
    s.bin_counts.assign(bins, 0);
    for (double v : values) {
        std::size_t b = 0;
        if (width > 0.0) b = std::min(bins - 1, static_cast<std::size_t>((v - s.min) / width));
        ++s.bin_counts[b];
    }
    return s;
}

DistanceReport make_report(std::vector<std::string> labels, std::vector<double> distances) {
    if (labels.size() != distances.size()) fail(ErrorCode::ShapeMismatch, "labels and distances differ in length");
    DistanceReport r;
    r.labels = std::move(labels);
    r.distances = std::move(distances);
    r.summary = summarize(r.distances);
    return r;
}

std::string render_report(const DistanceReport& report) {
    std::string out = "label,chamfer_sq\n";
    for (std::size_t i = 0; i < report.distances.size(); ++i)
        out += fmt::format("{},{:.17g}\n", report.labels[i], report.distances[i]);
    return out;
}

std::string render_summary(const DistanceSummary& s) {
    std::string out = "count,mean,std,min,max\n";
    out += fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g}\n", s.count, s.mean, s.stddev, s.min, s.max);
    out += "bin_lo,bin_hi,count\n";
    for (std::size_t b = 0; b < s.bin_counts.size(); ++b)
        out += fmt::format("{:.17g},{:.17g},{}\n", s.bin_edges[b], s.bin_edges[b + 1], s.bin_counts[b]);
    return out;
}

DistanceReport parse_report(std::string_view text) {
    const auto lines = lines_of(text);
    if (lines.empty() || lines.front() != "label,chamfer_sq")
        fail(ErrorCode::ParseError, "report must start with 'label,chamfer_sq'");
    std::vector<std::string> labels;
    std::vector<double> distances;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const std::size_t comma = lines[i].rfind(',');
        if (comma == std::string_view::npos)
            fail(ErrorCode::ParseError, fmt::format("report line {} has no comma", i + 1));
        labels.emplace_back(lines[i].substr(0, comma));
        distances.push_back(parse_number<double>(lines[i].substr(comma + 1), "distance"));
    }
    return make_report(std::move(labels), std::move(distances));
}

std::string summary_path_for(const std::string& report_path) {
    const std::size_t slash = report_path.find_last_of('/');
    const std::size_t dot = report_path.find_last_of('.');
    const bool has_ext = dot != std::string::npos && (slash == std::string::npos || dot > slash);
    return (has_ext ? report_path.substr(0, dot) : report_path) + ".summary.csv";
}

void save_report(const DistanceReport& report, const std::string& path) {
    write_file_atomic(path, render_report(report));
    write_file_atomic(summary_path_for(path), render_summary(report.summary));
}

DistanceReport reconstruction_report(const Checkpoint& checkpoint, const SurfaceSampleSet& samples, int resolution,
                                     std::size_t eval_points, std::uint64_t seed, const GridOptions& options) {
    const std::size_t n = checkpoint.shape_count();
    if (samples.shape_count() != n)
        fail(ErrorCode::ShapeMismatch,
             fmt::format("sample set has {} shapes, checkpoint has {} codes", samples.shape_count(), n));
    if (eval_points == 0) fail(ErrorCode::InvalidCount, "eval_points must be positive");
    std::vector<std::string> labels;
    std::vector<double> distances;
    for (std::size_t k = 0; k < n; ++k) {
        const TriangleMesh mesh = reconstruct_shape(checkpoint, checkpoint.code(k), resolution, options);
        if (mesh.faces.empty())
            fail(ErrorCode::ZeroArea, fmt::format("shape {}: reconstruction has no surface", k));
        const std::vector<Vec3> truth =
            subsample(samples.shapes[k].points, eval_points, derived_seed(seed, kTruthSample, k));
        const ShapeSamples recon = sample_surface(mesh, eval_points, derived_seed(seed, kReconSample, k));
        labels.push_back(fmt::format("{}", k));
        distances.push_back(chamfer_distance(truth, recon.points));
    }
    return make_report(std::move(labels), std::move(distances));
}

DistanceReport pairwise_report(std::span<const TriangleMesh> meshes, std::size_t eval_points, std::uint64_t seed,
                               unsigned threads) {
    const std::size_t q = meshes.size();
    if (q < 2) fail(ErrorCode::TooFewMeshes, fmt::format("pairwise report needs at least 2 meshes, got {}", q));
    if (eval_points == 0) fail(ErrorCode::InvalidCount, "eval_points must be positive");
    std::vector<std::vector<Vec3>> points(q);
    std::vector<std::unique_ptr<KdTree>> trees(q);
    parallel_for(q, resolve_threads(threads), [&](std::size_t i) {
        points[i] = sample_surface(meshes[i], eval_points, derived_seed(seed, kPairSample, i)).points;
        trees[i] = std::make_unique<KdTree>(points[i]);
    });
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < q; ++i)
        for (std::size_t j = i + 1; j < q; ++j) pairs.emplace_back(i, j);
    std::vector<double> distances(pairs.size());
    parallel_for(pairs.size(), resolve_threads(threads), [&](std::size_t p) {
        const auto [i, j] = pairs[p];
        distances[p] = mean_of_nearest(points[i], *trees[j]) + mean_of_nearest(points[j], *trees[i]);
    });
    std::vector<std::string> labels;
    for (const auto& [i, j] : pairs) labels.push_back(fmt::format("{}-{}", i, j));
    return make_report(std::move(labels), std::move(distances));
}

}  // namespace nsdf
