#include "nsdf/isosurface.hpp"

#include <array>
#include <cmath>
#include <unordered_map>

#include <fmt/format.h>

#include "nsdf/binary_io.hpp"

namespace nsdf {

namespace {

#include "mc_table.inc"

// Corner c sits at lattice offset (x, y, z).
constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};

// Cube edge e joins corners kEdge[e][0] and kEdge[e][1].
constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                              {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

struct EdgeGeometry {
    int lower;  // corner at the lower lattice end
    int upper;
    int axis;
};

constexpr std::array<EdgeGeometry, 12> edge_geometry() {
    std::array<EdgeGeometry, 12> out{};
    for (int e = 0; e < 12; ++e) {
        int a = kEdge[e][0], b = kEdge[e][1];
        int axis = 0;
        while (kCorner[a][axis] == kCorner[b][axis]) ++axis;
        if (kCorner[a][axis] > kCorner[b][axis]) std::swap(a, b);
        out[static_cast<std::size_t>(e)] = {a, b, axis};
    }
    return out;
}

constexpr auto kEdgeGeometry = edge_geometry();

constexpr std::uint32_t kGridVersion = 1;

}  // namespace

void ScalarGrid::validate() const {
    if (resolution < 2) fail(ErrorCode::InvalidResolution, fmt::format("resolution {} is below 2", resolution));
    if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi))
        fail(ErrorCode::InvalidArgument, fmt::format("bad grid bounds [{}, {}]", lo, hi));
    const auto r = static_cast<std::size_t>(resolution);
    if (values.size() != r * r * r)
        fail(ErrorCode::ShapeInconsistency, fmt::format("grid holds {} values, expected {}", values.size(), r * r * r));
    for (std::size_t i = 0; i < values.size(); ++i)
        if (!std::isfinite(values[i])) fail(ErrorCode::NonFiniteValue, fmt::format("grid value {} is not finite", i));
}

ScalarGrid eval_grid(const FieldParams& params, const LatentCode& z, int resolution, double lo, double hi,
                     const GridOptions& options) {
    if (resolution < 2) fail(ErrorCode::InvalidResolution, fmt::format("resolution {} is below 2", resolution));
    if (z.size() != params.arch.latent_dim)
        fail(ErrorCode::DimensionMismatch,
             fmt::format("code has dimension {}, architecture expects {}", z.size(), params.arch.latent_dim));
    ScalarGrid grid;
    grid.resolution = resolution;
    grid.lo = lo;
    grid.hi = hi;
    const auto r = static_cast<std::size_t>(resolution);
    const std::size_t total = r * r * r;
    grid.values.resize(total);

    const std::size_t chunk = std::max<std::size_t>(1, options.chunk_points);
    const std::size_t chunks = (total + chunk - 1) / chunk;
    parallel_for(chunks, resolve_threads(options.threads), [&](std::size_t c) {
        const std::size_t begin = c * chunk;
        const std::size_t end = std::min(total, begin + chunk);
        std::vector<Vec3> pts(end - begin);
        for (std::size_t p = begin; p < end; ++p) {
            const auto i = static_cast<int>(p % r);
            const auto j = static_cast<int>((p / r) % r);
            const auto k = static_cast<int>(p / (r * r));
            pts[p - begin] = grid.point(i, j, k);
        }
        const std::vector<double> f = forward(params, z, pts, 1);
        std::copy(f.begin(), f.end(), grid.values.begin() + static_cast<std::ptrdiff_t>(begin));
    });
    return grid;
}

IsosurfaceResult extract_isosurface(const ScalarGrid& grid, double iso) {
    grid.validate();
    if (!std::isfinite(iso)) fail(ErrorCode::NonFiniteValue, "iso value is not finite");
    const int r = grid.resolution;
    const auto ru = static_cast<std::uint64_t>(r);
    IsosurfaceResult out;
    std::unordered_map<std::uint64_t, std::uint32_t> vertex_of_edge;

    auto edge_vertex = [&](int i, int j, int k, int e) -> std::uint32_t {
        const EdgeGeometry& g = kEdgeGeometry[static_cast<std::size_t>(e)];
        const int i0 = i + kCorner[g.lower][0], j0 = j + kCorner[g.lower][1], k0 = k + kCorner[g.lower][2];
        const std::uint64_t lin = (static_cast<std::uint64_t>(k0) * ru + static_cast<std::uint64_t>(j0)) * ru +
                                  static_cast<std::uint64_t>(i0);
        const std::uint64_t id = 3 * lin + static_cast<std::uint64_t>(g.axis);
        auto [it, inserted] = vertex_of_edge.try_emplace(id, static_cast<std::uint32_t>(out.mesh.vertices.size()));
        if (inserted) {
            const int i1 = i + kCorner[g.upper][0], j1 = j + kCorner[g.upper][1], k1 = k + kCorner[g.upper][2];
            const double v0 = grid.at(i0, j0, k0);
            const double v1 = grid.at(i1, j1, k1);
            const double t = (iso - v0) / (v1 - v0);
            const Vec3 p0 = grid.point(i0, j0, k0);
            const Vec3 p1 = grid.point(i1, j1, k1);
            out.mesh.vertices.push_back(p0 + t * (p1 - p0));
            out.vertex_edges.push_back(id);
            out.vertex_t.push_back(t);
        }
        return it->second;
    };

    for (int k = 0; k + 1 < r; ++k)
        for (int j = 0; j + 1 < r; ++j)
            for (int i = 0; i + 1 < r; ++i) {
                unsigned cube = 0;
                for (int c = 0; c < 8; ++c)
                    if (grid.at(i + kCorner[c][0], j + kCorner[c][1], k + kCorner[c][2]) < iso) cube |= 1u << c;
                const std::int8_t* tris = kTriTable[cube];
                for (int t = 0; t < 16 && tris[t] >= 0; t += 3) {
                    const std::uint32_t a = edge_vertex(i, j, k, tris[t]);
                    const std::uint32_t b = edge_vertex(i, j, k, tris[t + 1]);
                    const std::uint32_t c = edge_vertex(i, j, k, tris[t + 2]);
                    // the table winds toward the inside corners; reverse it
                    out.mesh.faces.push_back({a, c, b});
                }
            }
    return out;
}

TriangleMesh marching_cubes(const ScalarGrid& grid, double iso) { return extract_isosurface(grid, iso).mesh; }

TriangleMesh reconstruct_shape(const Checkpoint& checkpoint, const LatentCode& code, int resolution,
                               const GridOptions& options) {
    if (resolution < 2) fail(ErrorCode::InvalidResolution, fmt::format("resolution {} is below 2", resolution));
    return marching_cubes(eval_grid(checkpoint.params, code, resolution, -kDefaultGridHalfwidth,
                                    kDefaultGridHalfwidth, options));
}

std::string encode_grid(const ScalarGrid& grid) {
    ByteWriter w;
    w.magic("NSDG");
    w.u32(kGridVersion);
    w.u32(static_cast<std::uint32_t>(grid.resolution));
    w.f64(grid.lo);
    w.f64(grid.hi);
    for (double v : grid.values) w.f64(v);
    return w.take();
}

ScalarGrid decode_grid(std::string_view bytes) {
    ByteReader r(bytes);
    if (!r.has_magic("NSDG")) fail(ErrorCode::BadMagic, "not a grid dump");
    r.skip(4);
    const std::uint32_t version = r.u32();
    if (version != kGridVersion) fail(ErrorCode::UnsupportedVersion, fmt::format("grid version {}", version));
    ScalarGrid g;
    g.resolution = static_cast<int>(r.u32());
    g.lo = r.f64();
    g.hi = r.f64();
    if (g.resolution < 2) fail(ErrorCode::InvalidResolution, fmt::format("resolution {} is below 2", g.resolution));
    const auto n = static_cast<std::size_t>(g.resolution);
    if (r.remaining() != n * n * n * 8) fail(ErrorCode::TruncatedFile, "grid value block has the wrong length");
    g.values.resize(n * n * n);
    for (double& v : g.values) v = r.f64();
    return g;
}

void save_grid(const ScalarGrid& grid, const std::string& path) { write_file_atomic(path, encode_grid(grid)); }

ScalarGrid load_grid(const std::string& path) { return decode_grid(read_file(path)); }

}  // namespace nsdf
