#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nsdf/isosurface.hpp"
#include "nsdf/trainer.hpp"

namespace nsdf {

struct CombinationWeights {
    std::vector<std::size_t> indices;
    std::vector<double> alphas;
};

/// Throws NotConvex, IndexOutOfRange or DuplicateIndex.
void validate_weights(const CombinationWeights& weights, std::size_t codebook_rows);

/// sum_j alpha_j * codebook.row(index_j), accumulated in ascending index
/// order so the result does not depend on how the pairs are listed.
LatentCode combine_codes(const LatentCodebook& codebook, const CombinationWeights& weights);

struct ManifestEntry {
    std::size_t shape_id = 0;
    std::uint64_t seed = 0;
    CombinationWeights weights;
    std::string mesh_path;
};

struct CohortManifest {
    std::uint64_t checkpoint_id = 0;
    std::size_t interp_count = 0;
    int resolution = 0;
    std::vector<ManifestEntry> entries;
};

struct Cohort {
    std::vector<TriangleMesh> meshes;
    CohortManifest manifest;
};

/// Per shape: m distinct indices drawn uniformly, alphas from the flat
/// Dirichlet (normalized unit exponentials), then reconstruction. Mesh paths
/// in the manifest are left empty; the caller fills them when writing.
Cohort generate_cohort(const Checkpoint& checkpoint, std::size_t count, std::size_t interp_count, std::uint64_t seed,
                       int resolution, const GridOptions& options = {});

/// The weights generate_cohort would use for shape `shape_id`.
CombinationWeights draw_weights(std::size_t codebook_rows, std::size_t interp_count, std::uint64_t seed,
                                std::size_t shape_id);

std::string render_manifest(const CohortManifest& manifest);
CohortManifest parse_manifest(std::string_view text);

/// Mean squared nearest-neighbor distance from A to B plus from B to A.
double chamfer_distance(std::span<const Vec3> a, std::span<const Vec3> b);

struct DistanceSummary {
    std::size_t count = 0;
    double mean = 0.0;
    double stddev = 0.0;  // population
    double min = 0.0;
    double max = 0.0;
    std::vector<double> bin_edges;  // bins + 1 edges over [min, max]
    std::vector<std::size_t> bin_counts;
};

inline constexpr std::size_t kHistogramBins = 20;

DistanceSummary summarize(std::span<const double> values, std::size_t bins = kHistogramBins);

struct DistanceReport {
    std::vector<std::string> labels;
    std::vector<double> distances;
    DistanceSummary summary;
};

DistanceReport make_report(std::vector<std::string> labels, std::vector<double> distances);

std::string render_report(const DistanceReport& report);
std::string render_summary(const DistanceSummary& summary);
/// Parses the `label,chamfer_sq` table and recomputes the summary.
DistanceReport parse_report(std::string_view text);
/// Writes `path` and the sidecar `<stem>.summary.csv` next to it.
void save_report(const DistanceReport& report, const std::string& path);
std::string summary_path_for(const std::string& report_path);

inline constexpr std::size_t kDefaultEvalPoints = 30000;

/// Chamfer distance between each training shape's samples and its
/// reconstruction from the learned code.
DistanceReport reconstruction_report(const Checkpoint& checkpoint, const SurfaceSampleSet& samples, int resolution,
                                     std::size_t eval_points, std::uint64_t seed, const GridOptions& options = {});

/// Chamfer distance for every unordered pair (i < j), in (i, j) order. Each
/// mesh is sampled once. Labels are `i-j`.
DistanceReport pairwise_report(std::span<const TriangleMesh> meshes, std::size_t eval_points, std::uint64_t seed,
                               unsigned threads = 1);

}  // namespace nsdf
