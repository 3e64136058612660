#pragma once

// Shared analytic fixtures and oracles for the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "nsdf/common.hpp"
#include "nsdf/field.hpp"
#include "nsdf/mesh.hpp"

namespace fixtures {

using nsdf::Vec3;

/// Points uniformly distributed on a sphere, with exact outward normals.
inline nsdf::ShapeSamples sphere_samples(double radius, std::size_t count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    nsdf::ShapeSamples s;
    while (s.points.size() < count) {
        Vec3 d(g(rng), g(rng), g(rng));
        const double n = d.norm();
        if (n < 1e-12) continue;
        d /= n;
        s.normals.push_back(d);
        s.points.push_back(radius * d);
    }
    return s;
}

inline std::vector<Vec3> uniform_cube(std::size_t count, double halfwidth, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-halfwidth, halfwidth);
    std::vector<Vec3> out(count);
    for (auto& p : out) p = Vec3(u(rng), u(rng), u(rng));
    return out;
}

inline std::vector<Vec3> uniform_ball(std::size_t count, double radius, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-radius, radius);
    std::vector<Vec3> out;
    while (out.size() < count) {
        Vec3 p(u(rng), u(rng), u(rng));
        if (p.norm() <= radius) out.push_back(p);
    }
    return out;
}

/// Axis-aligned cube centered at the origin, outward winding.
inline nsdf::TriangleMesh cube_mesh(double side) {
    const double h = side / 2;
    nsdf::TriangleMesh m;
    for (int i = 0; i < 8; ++i) m.vertices.emplace_back(i & 1 ? h : -h, i & 2 ? h : -h, i & 4 ? h : -h);
    m.faces = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
               {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
    return m;
}

/// Icosahedron subdivided `levels` times and projected onto the sphere.
inline nsdf::TriangleMesh icosphere(double radius, int levels) {
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    nsdf::TriangleMesh m;
    m.vertices = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                  {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
    m.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
               {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
               {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
    for (auto& v : m.vertices) v.normalize();
    for (int l = 0; l < levels; ++l) {
        std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> mid;
        auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
            const auto key = std::minmax(a, b);
            auto it = mid.find(key);
            if (it != mid.end()) return it->second;
            m.vertices.push_back((m.vertices[a] + m.vertices[b]).normalized());
            const auto id = static_cast<std::uint32_t>(m.vertices.size() - 1);
            mid.emplace(key, id);
            return id;
        };
        std::vector<nsdf::Face> next;
        for (const auto& f : m.faces) {
            const auto a = midpoint(f[0], f[1]), b = midpoint(f[1], f[2]), c = midpoint(f[2], f[0]);
            next.push_back({f[0], a, c});
            next.push_back({f[1], b, a});
            next.push_back({f[2], c, b});
            next.push_back({a, b, c});
        }
        m.faces = std::move(next);
    }
    for (auto& v : m.vertices) v *= radius;
    return m;
}

/// Every parameter drawn from N(0, scale^2 / fan_in) (biases N(0, scale^2 / 4)).
inline nsdf::FieldParams random_params(const nsdf::Architecture& arch, std::uint64_t seed, double scale = 1.0) {
    nsdf::FieldParams p = nsdf::FieldParams::zeros(arch);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    for (auto& l : p.layers) {
        const double s = scale / std::sqrt(static_cast<double>(l.weight.cols()));
        for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = s * g(rng);
        for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = 0.5 * scale * g(rng);
    }
    return p;
}

inline nsdf::LatentCode random_code(int d, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, scale);
    nsdf::LatentCode z(d);
    for (int i = 0; i < d; ++i) z[i] = g(rng);
    return z;
}

/// 3 layers, width 8, d = 4, skip into the last hidden layer.
inline nsdf::Architecture tiny_arch() {
    nsdf::Architecture a;
    a.layer_count = 3;
    a.hidden_width = 8;
    a.latent_dim = 4;
    a.skip_layer = 1;
    return a;
}

/// |a - b| <= rtol * max(|b|, scale), where `scale` is the largest |b| in the
/// block the component belongs to (so near-zero components are judged against
/// the block's magnitude rather than against themselves).
inline bool close_in_block(double a, double b, double scale, double rtol) {
    return std::abs(a - b) <= rtol * std::max(std::abs(b), scale);
}

/// Plain reverse-free MLP evaluation used as an oracle: straight matrix
/// products with the skip concatenation spelled out.
inline double reference_forward(const nsdf::FieldParams& p, const nsdf::LatentCode& z, const Vec3& x) {
    const auto& a = p.arch;
    Eigen::VectorXd zx(z.size() + 3);
    zx << z, x;
    Eigen::VectorXd h = zx;
    for (int l = 0; l < a.layer_count; ++l) {
        Eigen::VectorXd in;
        if (l == 0) {
            in = zx;
        } else if (a.skip_layer >= 1 && l == a.skip_layer) {
            in.resize(h.size() + zx.size());
            in << h, zx;
        } else {
            in = h;
        }
        Eigen::VectorXd pre = p.layers[static_cast<std::size_t>(l)].weight * in + p.layers[static_cast<std::size_t>(l)].bias;
        if (l + 1 == a.layer_count) return pre[0];
        h = pre.unaryExpr([&](double t) { return nsdf::softplus(t, a.softplus_beta); });
    }
    return h[0];
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("nsdf_test_" + tag + "_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace fixtures
