#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nsdf/common.hpp"

namespace nsdf {

inline double squared_distance(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0];
    const double dy = a[1] - b[1];
    const double dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

/// Static 3-d tree over a point cloud (points are copied).
class KdTree {
public:
    struct Neighbor {
        std::size_t index;
        double dist2;
    };

    explicit KdTree(std::span<const Vec3> points, std::size_t leaf_size = 16);

    std::size_t size() const { return points_.size(); }

    Neighbor nearest(const Vec3& query) const;
    /// The min(k, size()) nearest points, sorted by ascending distance.
    std::vector<Neighbor> knn(const Vec3& query, std::size_t k) const;

private:
    struct Node {
        std::uint32_t begin = 0, end = 0;  // range in order_ (leaves)
        std::int32_t left = -1, right = -1;
        int axis = 0;
        double split = 0.0;
    };

    std::int32_t build(std::uint32_t begin, std::uint32_t end);

    std::vector<Vec3> points_;
    std::vector<std::uint32_t> order_;
    std::vector<Node> nodes_;
    std::size_t leaf_size_;
};

}  // namespace nsdf
