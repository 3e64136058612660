#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nsdf/field.hpp"
#include "nsdf/mesh.hpp"
#include "nsdf/trainer.hpp"

namespace nsdf {

inline constexpr double kDefaultGridHalfwidth = 1.1;

/// R^3 lattice over the cube [lo, hi]^3, values stored x-fastest.
struct ScalarGrid {
    int resolution = 0;
    double lo = -kDefaultGridHalfwidth;
    double hi = kDefaultGridHalfwidth;
    std::vector<double> values;

    double spacing() const { return (hi - lo) / static_cast<double>(resolution - 1); }
    double coordinate(int i) const { return lo + static_cast<double>(i) * spacing(); }
    Vec3 point(int i, int j, int k) const { return {coordinate(i), coordinate(j), coordinate(k)}; }
    std::size_t index(int i, int j, int k) const {
        const auto r = static_cast<std::size_t>(resolution);
        return (static_cast<std::size_t>(k) * r + static_cast<std::size_t>(j)) * r + static_cast<std::size_t>(i);
    }
    double at(int i, int j, int k) const { return values[index(i, j, k)]; }

    /// R >= 2, lo < hi, R^3 finite values.
    void validate() const;
};

struct GridOptions {
    unsigned threads = 1;
    std::size_t chunk_points = 65536;  // points per forward() call
};

ScalarGrid eval_grid(const FieldParams& params, const LatentCode& z, int resolution, double lo = -kDefaultGridHalfwidth,
                     double hi = kDefaultGridHalfwidth, const GridOptions& options = {});

struct IsosurfaceResult {
    TriangleMesh mesh;
    /// Per vertex: lattice edge id (3 * linear index of the lower endpoint + axis)
    /// and the interpolation parameter measured from the lower endpoint.
    std::vector<std::uint64_t> vertex_edges;
    std::vector<double> vertex_t;
};

/// Classic 256-case marching cubes. A corner is inside when value < iso;
/// triangles are wound so their normals point toward increasing values.
IsosurfaceResult extract_isosurface(const ScalarGrid& grid, double iso = 0.0);
TriangleMesh marching_cubes(const ScalarGrid& grid, double iso = 0.0);

TriangleMesh reconstruct_shape(const Checkpoint& checkpoint, const LatentCode& code, int resolution,
                               const GridOptions& options = {});

std::string encode_grid(const ScalarGrid& grid);
ScalarGrid decode_grid(std::string_view bytes);
void save_grid(const ScalarGrid& grid, const std::string& path);
ScalarGrid load_grid(const std::string& path);

}  // namespace nsdf
