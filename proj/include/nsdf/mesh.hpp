#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nsdf/common.hpp"

namespace nsdf {

using Face = std::array<std::uint32_t, 3>;

/// Indexed triangle surface. Every face index is < vertices.size() and no
/// face repeats a vertex; validate() checks both.
struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<Face> faces;

    void validate() const;
    double area() const;
    double face_area(std::size_t f) const;
    /// Unit normal from the vertex winding (b - a) x (c - a); zero for slivers.
    Vec3 face_normal(std::size_t f) const;
};

enum class MeshFormat { Obj, PlyAscii };

/// Picks the format from the file extension (.obj / .ply).
MeshFormat format_from_path(const std::string& path);

TriangleMesh load_mesh(const std::string& path, MeshFormat format);
TriangleMesh load_mesh(const std::string& path);
TriangleMesh parse_obj(std::string_view text);
TriangleMesh parse_ply_ascii(std::string_view text);

std::string render_obj(const TriangleMesh& mesh);
void save_mesh(const TriangleMesh& mesh, const std::string& path);

/// v' = scale * (v - center)
struct NormalizationTransform {
    Vec3 center = Vec3::Zero();
    double scale = 1.0;

    Vec3 apply(const Vec3& v) const { return scale * (v - center); }
    Vec3 invert(const Vec3& v) const { return v / scale + center; }
};

struct NormalizedMesh {
    TriangleMesh mesh;
    NormalizationTransform transform;
};

/// Centers on the vertex centroid and scales the farthest vertex to radius 1.
NormalizedMesh normalize_unit_ball(const TriangleMesh& mesh);

struct ShapeSamples {
    std::vector<Vec3> points;
    std::vector<Vec3> normals;

    std::size_t size() const { return points.size(); }
};

struct SurfaceSampleSet {
    std::vector<ShapeSamples> shapes;
    std::uint64_t seed = 0;

    std::size_t shape_count() const { return shapes.size(); }
};

/// Area-weighted uniform sampling with flat face normals. Zero-area faces
/// are skipped.
ShapeSamples sample_surface(const TriangleMesh& mesh, std::size_t count, std::uint64_t seed);

// Binary container "NSDS": magic, u32 version, u64 shape count, then per
// shape u64 N and N interleaved (px py pz nx ny nz) binary64 records.
std::string encode_samples(const SurfaceSampleSet& samples);
SurfaceSampleSet decode_samples(std::string_view bytes);
void save_samples(const SurfaceSampleSet& samples, const std::string& path);
SurfaceSampleSet load_samples(const std::string& path);

}  // namespace nsdf
