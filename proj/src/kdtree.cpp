#include "nsdf/kdtree.hpp"

#include <algorithm>
#include <limits>
#include <queue>

namespace nsdf {

KdTree::KdTree(std::span<const Vec3> points, std::size_t leaf_size)
    : points_(points.begin(), points.end()), leaf_size_(std::max<std::size_t>(1, leaf_size)) {
    order_.resize(points_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<std::uint32_t>(i);
    if (!points_.empty()) {
        nodes_.reserve(2 * points_.size() / leaf_size_ + 1);
        build(0, static_cast<std::uint32_t>(points_.size()));
    }
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(Node{begin, end});
    if (end - begin <= leaf_size_) return id;

    Vec3 lo = points_[order_[begin]], hi = lo;
    for (std::uint32_t i = begin + 1; i < end; ++i) {
        lo = lo.cwiseMin(points_[order_[i]]);
        hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    if (hi[axis] == lo[axis]) return id;  // all coincide: keep as a leaf

    const std::uint32_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) { return points_[a][axis] < points_[b][axis]; });
    const double split = points_[order_[mid]][axis];
    const std::int32_t left = build(begin, mid);
    const std::int32_t right = build(mid, end);
    Node& node = nodes_[static_cast<std::size_t>(id)];
    node.axis = axis;
    node.split = split;
    node.left = left;
    node.right = right;
    return id;
}

KdTree::Neighbor KdTree::nearest(const Vec3& query) const {
    auto result = knn(query, 1);
    if (result.empty()) fail(ErrorCode::EmptySet, "nearest-neighbor query on an empty tree");
    return result.front();
}

std::vector<KdTree::Neighbor> KdTree::knn(const Vec3& query, std::size_t k) const {
    k = std::min(k, points_.size());
    std::vector<Neighbor> out;
    if (k == 0) return out;

    auto closer = [](const Neighbor& a, const Neighbor& b) {
        return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
    };
    std::priority_queue<Neighbor, std::vector<Neighbor>, decltype(closer)> heap(closer);
    auto bound = [&] { return heap.size() < k ? std::numeric_limits<double>::infinity() : heap.top().dist2; };

    // depth-first, nearer child first; the far child is revisited only if its
    // splitting plane is closer than the current k-th distance
    struct Pending {
        std::int32_t node;
        double plane2;
    };
    std::vector<Pending> todo{{0, 0.0}};
    while (!todo.empty()) {
        Pending cur = todo.back();
        todo.pop_back();
        if (cur.plane2 >= bound()) continue;
        const Node& node = nodes_[static_cast<std::size_t>(cur.node)];
        if (node.left < 0) {
            for (std::uint32_t i = node.begin; i < node.end; ++i) {
                const std::uint32_t idx = order_[i];
                Neighbor cand{idx, squared_distance(query, points_[idx])};
                if (heap.size() < k) {
                    heap.push(cand);
                } else if (closer(cand, heap.top())) {
                    heap.pop();
                    heap.push(cand);
                }
            }
            continue;
        }
        const double diff = query[node.axis] - node.split;
        const std::int32_t near_child = diff < 0.0 ? node.left : node.right;
        const std::int32_t far_child = diff < 0.0 ? node.right : node.left;
        todo.push_back({far_child, diff * diff});
        todo.push_back({near_child, 0.0});
    }
    out.resize(heap.size());
    for (std::size_t i = out.size(); i-- > 0;) {
        out[i] = heap.top();
        heap.pop();
    }
    return out;
}

}  // namespace nsdf
