#include "nsdf/mesh.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>

#include <fmt/format.h>

#include "nsdf/binary_io.hpp"

namespace nsdf {

namespace {

constexpr std::string_view kSamplesMagic = "NSDS";
constexpr std::uint32_t kSamplesVersion = 1;

std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        std::size_t j = i;
        while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

template <class T>
bool parse_number(std::string_view tok, T& out) {
    if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
    return ec == std::errc() && ptr == tok.data() + tok.size();
}

[[noreturn]] void parse_fail(std::size_t line_no, const std::string& what) {
    fail(ErrorCode::ParseError, fmt::format("line {}: {}", line_no, what));
}

// Splits text into lines without copying; tolerates CRLF.
template <class Fn>
void for_each_line(std::string_view text, Fn&& fn) {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        ++line_no;
        if (!fn(line, line_no)) return;
        if (end == text.size()) break;
        pos = end + 1;
    }
}

void add_polygon(TriangleMesh& mesh, const std::vector<std::int64_t>& poly, std::size_t line_no) {
    if (poly.size() < 3) parse_fail(line_no, "face with fewer than 3 vertices");
    for (std::size_t a = 0; a < poly.size(); ++a)
        for (std::size_t b = a + 1; b < poly.size(); ++b)
            if (poly[a] == poly[b]) parse_fail(line_no, "face references the same vertex twice");
    // fan around the first vertex
    for (std::size_t k = 1; k + 1 < poly.size(); ++k)
        mesh.faces.push_back({static_cast<std::uint32_t>(poly[0]), static_cast<std::uint32_t>(poly[k]),
                              static_cast<std::uint32_t>(poly[k + 1])});
}

}  // namespace

void TriangleMesh::validate() const {
    for (std::size_t f = 0; f < faces.size(); ++f) {
        const Face& t = faces[f];
        for (auto idx : t)
            if (idx >= vertices.size())
                fail(ErrorCode::IndexOutOfRange,
                     fmt::format("face {} references vertex {} of {}", f, idx, vertices.size()));
        if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2])
            fail(ErrorCode::DegenerateMesh, fmt::format("face {} repeats a vertex", f));
    }
}

double TriangleMesh::face_area(std::size_t f) const {
    const Face& t = faces[f];
    const Vec3& a = vertices[t[0]];
    return 0.5 * (vertices[t[1]] - a).cross(vertices[t[2]] - a).norm();
}

Vec3 TriangleMesh::face_normal(std::size_t f) const {
    const Face& t = faces[f];
    const Vec3& a = vertices[t[0]];
    Vec3 n = (vertices[t[1]] - a).cross(vertices[t[2]] - a);
    double len = n.norm();
    return len > 0.0 ? Vec3(n / len) : Vec3::Zero();
}

double TriangleMesh::area() const {
    double total = 0.0;
    for (std::size_t f = 0; f < faces.size(); ++f) total += face_area(f);
    return total;
}

MeshFormat format_from_path(const std::string& path) {
    std::string ext = std::filesystem::path(path).extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".obj") return MeshFormat::Obj;
    if (ext == ".ply") return MeshFormat::PlyAscii;
    fail(ErrorCode::InvalidArgument, "unrecognized mesh extension '" + ext + "'");
}

TriangleMesh parse_obj(std::string_view text) {
    TriangleMesh mesh;
    std::vector<std::int64_t> poly;
    struct PendingFace {
        std::vector<std::int64_t> raw;
        std::size_t line_no;
    };
    std::vector<PendingFace> pending;

    for_each_line(text, [&](std::string_view line, std::size_t line_no) {
        auto toks = split_ws(line);
        if (toks.empty() || toks[0].front() == '#') return true;
        if (toks[0] == "v") {
            if (toks.size() < 4) parse_fail(line_no, "vertex needs 3 coordinates");
            Vec3 p;
            for (int c = 0; c < 3; ++c)
                if (!parse_number(toks[1 + c], p[c])) parse_fail(line_no, "bad coordinate '" + std::string(toks[1 + c]) + "'");
            mesh.vertices.push_back(p);
        } else if (toks[0] == "f") {
            PendingFace face{{}, line_no};
            for (std::size_t i = 1; i < toks.size(); ++i) {
                std::string_view ref = toks[i].substr(0, toks[i].find('/'));
                std::int64_t idx = 0;
                if (!parse_number(ref, idx) || idx == 0) parse_fail(line_no, "bad face index '" + std::string(toks[i]) + "'");
                // negative indices are relative to the vertices read so far
                if (idx < 0) idx = static_cast<std::int64_t>(mesh.vertices.size()) + idx + 1;
                face.raw.push_back(idx - 1);
            }
            pending.push_back(std::move(face));
        }
        // vn, vt, o, g, s, usemtl, mtllib ... carry nothing we need
        return true;
    });

    for (auto& face : pending) {
        for (auto idx : face.raw)
            if (idx < 0 || idx >= static_cast<std::int64_t>(mesh.vertices.size()))
                fail(ErrorCode::IndexOutOfRange,
                     fmt::format("line {}: face references vertex {} but only {} exist", face.line_no, idx + 1,
                                 mesh.vertices.size()));
        add_polygon(mesh, face.raw, face.line_no);
    }
    return mesh;
}

TriangleMesh parse_ply_ascii(std::string_view text) {
    struct Element {
        std::string name;
        std::size_t count = 0;
        std::vector<std::string> props;
    };
    std::vector<Element> elements;
    bool header_done = false;
    bool saw_magic = false;
    std::size_t body_start_line = 0;
    std::vector<std::pair<std::string_view, std::size_t>> body;

    for_each_line(text, [&](std::string_view line, std::size_t line_no) {
        if (!header_done) {
            auto toks = split_ws(line);
            if (line_no == 1) {
                if (toks.empty() || toks[0] != "ply") parse_fail(line_no, "missing 'ply' magic");
                saw_magic = true;
                return true;
            }
            if (toks.empty() || toks[0] == "comment" || toks[0] == "obj_info") return true;
            if (toks[0] == "format") {
                if (toks.size() < 2 || toks[1] != "ascii") parse_fail(line_no, "only ASCII PLY is supported");
            } else if (toks[0] == "element") {
                if (toks.size() != 3) parse_fail(line_no, "malformed element line");
                Element e;
                e.name = toks[1];
                if (!parse_number(toks[2], e.count)) parse_fail(line_no, "bad element count");
                elements.push_back(std::move(e));
            } else if (toks[0] == "property") {
                if (elements.empty() || toks.size() < 3) parse_fail(line_no, "property outside element");
                elements.back().props.emplace_back(toks.back());
            } else if (toks[0] == "end_header") {
                header_done = true;
                body_start_line = line_no + 1;
            } else {
                parse_fail(line_no, "unknown header keyword '" + std::string(toks[0]) + "'");
            }
            return true;
        }
        if (!split_ws(line).empty()) body.emplace_back(line, line_no);
        return true;
    });
    if (!saw_magic || !header_done) parse_fail(body_start_line, "incomplete PLY header");

    TriangleMesh mesh;
    std::size_t cursor = 0;
    std::vector<std::vector<std::int64_t>> faces;
    std::vector<std::size_t> face_lines;
    for (const Element& e : elements) {
        int ix = -1, iy = -1, iz = -1;
        for (std::size_t p = 0; p < e.props.size(); ++p) {
            if (e.props[p] == "x") ix = static_cast<int>(p);
            if (e.props[p] == "y") iy = static_cast<int>(p);
            if (e.props[p] == "z") iz = static_cast<int>(p);
        }
        for (std::size_t r = 0; r < e.count; ++r, ++cursor) {
            if (cursor >= body.size()) parse_fail(body.empty() ? body_start_line : body.back().second, "missing element rows");
            auto [line, line_no] = body[cursor];
            auto toks = split_ws(line);
            if (e.name == "vertex") {
                if (ix < 0 || iy < 0 || iz < 0) parse_fail(line_no, "vertex element lacks x/y/z");
                Vec3 v;
                int idx[3] = {ix, iy, iz};
                for (int c = 0; c < 3; ++c) {
                    if (static_cast<std::size_t>(idx[c]) >= toks.size() || !parse_number(toks[idx[c]], v[c]))
                        parse_fail(line_no, "bad vertex coordinate");
                }
                mesh.vertices.push_back(v);
            } else if (e.name == "face") {
                std::size_t n = 0;
                if (toks.empty() || !parse_number(toks[0], n) || toks.size() < n + 1) parse_fail(line_no, "bad face row");
                std::vector<std::int64_t> poly(n);
                for (std::size_t i = 0; i < n; ++i)
                    if (!parse_number(toks[1 + i], poly[i])) parse_fail(line_no, "bad face index");
                faces.push_back(std::move(poly));
                face_lines.push_back(line_no);
            }
        }
    }
    for (std::size_t f = 0; f < faces.size(); ++f) {
        for (auto idx : faces[f])
            if (idx < 0 || idx >= static_cast<std::int64_t>(mesh.vertices.size()))
                fail(ErrorCode::IndexOutOfRange, fmt::format("line {}: face references missing vertex {}", face_lines[f], idx));
        add_polygon(mesh, faces[f], face_lines[f]);
    }
    return mesh;
}

TriangleMesh load_mesh(const std::string& path, MeshFormat format) {
    if (!std::filesystem::is_regular_file(path)) fail(ErrorCode::FileNotFound, "no such file '" + path + "'");
    std::string text = read_file(path);
    try {
        return format == MeshFormat::Obj ? parse_obj(text) : parse_ply_ascii(text);
    } catch (const Error& e) {
        throw Error(e.code(), path + ": " + e.detail());
    }
}

TriangleMesh load_mesh(const std::string& path) { return load_mesh(path, format_from_path(path)); }

std::string render_obj(const TriangleMesh& mesh) {
    std::string out;
    out.reserve(mesh.vertices.size() * 48 + mesh.faces.size() * 24);
    for (const Vec3& v : mesh.vertices) fmt::format_to(std::back_inserter(out), "v {:.9g} {:.9g} {:.9g}\n", v.x(), v.y(), v.z());
    for (const Face& f : mesh.faces) fmt::format_to(std::back_inserter(out), "f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1);
    return out;
}

void save_mesh(const TriangleMesh& mesh, const std::string& path) {
    mesh.validate();
    write_file_atomic(path, render_obj(mesh));
}

NormalizedMesh normalize_unit_ball(const TriangleMesh& mesh) {
    if (mesh.vertices.empty()) fail(ErrorCode::DegenerateMesh, "mesh has no vertices");
    Vec3 center = Vec3::Zero();
    for (const Vec3& v : mesh.vertices) center += v;
    center /= static_cast<double>(mesh.vertices.size());
    double radius = 0.0;
    for (const Vec3& v : mesh.vertices) radius = std::max(radius, (v - center).norm());
    if (!(radius > 0.0)) fail(ErrorCode::DegenerateMesh, "all vertices coincide");

    NormalizedMesh out;
    out.transform.center = center;
    out.transform.scale = 1.0 / radius;
    out.mesh.faces = mesh.faces;
    out.mesh.vertices.reserve(mesh.vertices.size());
    for (const Vec3& v : mesh.vertices) out.mesh.vertices.push_back(out.transform.apply(v));
    return out;
}

ShapeSamples sample_surface(const TriangleMesh& mesh, std::size_t count, std::uint64_t seed) {
    if (count == 0) fail(ErrorCode::InvalidCount, "sample count must be positive");
    std::vector<double> cumulative;
    std::vector<std::size_t> face_of;
    cumulative.reserve(mesh.faces.size());
    double total = 0.0;
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        double a = mesh.face_area(f);
        if (!(a > 0.0)) continue;
        total += a;
        cumulative.push_back(total);
        face_of.push_back(f);
    }
    if (cumulative.empty()) fail(ErrorCode::ZeroArea, "mesh has no triangle with positive area");

    Rng rng = make_rng(seed, {0x5a4d});
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    ShapeSamples out;
    out.points.reserve(count);
    out.normals.reserve(count);
    for (std::size_t s = 0; s < count; ++s) {
        double pick = uni(rng) * total;
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
        if (it == cumulative.end()) --it;
        std::size_t f = face_of[static_cast<std::size_t>(it - cumulative.begin())];
        const Face& t = mesh.faces[f];
        double r = std::sqrt(uni(rng));
        double v = uni(rng);
        out.points.push_back((1.0 - r) * mesh.vertices[t[0]] + r * (1.0 - v) * mesh.vertices[t[1]] +
                             r * v * mesh.vertices[t[2]]);
        out.normals.push_back(mesh.face_normal(f));
    }
    return out;
}

std::string encode_samples(const SurfaceSampleSet& samples) {
    ByteWriter w;
    w.magic(kSamplesMagic);
    w.u32(kSamplesVersion);
    w.u64(samples.shapes.size());
    for (const ShapeSamples& s : samples.shapes) {
        if (s.points.size() != s.normals.size())
            fail(ErrorCode::ShapeMismatch, "points and normals differ in length");
        w.u64(s.points.size());
        for (std::size_t i = 0; i < s.points.size(); ++i) {
            for (int c = 0; c < 3; ++c) w.f64(s.points[i][c]);
            for (int c = 0; c < 3; ++c) w.f64(s.normals[i][c]);
        }
    }
    return w.take();
}

SurfaceSampleSet decode_samples(std::string_view bytes) {
    ByteReader r(bytes);
    if (!r.has_magic(kSamplesMagic)) fail(ErrorCode::BadMagic, "not an NSDS sample file");
    r.skip(4);
    std::uint32_t version = r.u32();
    if (version != kSamplesVersion) fail(ErrorCode::UnsupportedVersion, fmt::format("sample file version {}", version));
    SurfaceSampleSet out;
    std::uint64_t n = r.u64();
    if (n > r.remaining() / 8) fail(ErrorCode::TruncatedFile, "shape count exceeds file size");
    out.shapes.resize(n);
    for (auto& s : out.shapes) {
        std::uint64_t count = r.u64();
        if (count > r.remaining() / 48) fail(ErrorCode::TruncatedFile, "sample count exceeds file size");
        s.points.resize(count);
        s.normals.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
            for (int c = 0; c < 3; ++c) s.points[i][c] = r.f64();
            for (int c = 0; c < 3; ++c) s.normals[i][c] = r.f64();
        }
    }
    if (!r.at_end()) fail(ErrorCode::ShapeInconsistency, "trailing bytes after sample data");
    return out;
}

void save_samples(const SurfaceSampleSet& samples, const std::string& path) {
    write_file_atomic(path, encode_samples(samples));
}

SurfaceSampleSet load_samples(const std::string& path) { return decode_samples(read_file(path)); }

}  // namespace nsdf
