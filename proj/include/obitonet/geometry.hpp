#pragma once

// Point-cloud preprocessing: unit-sphere normalization, farthest point
// sampling, KNN grouping, and an exact kd-tree nearest-neighbor index.
//
// Everything here is pure and deterministic. Ties anywhere are broken by the
// lowest point index, which is what makes the brute-force oracles exact.
// Geometry always runs in double regardless of the training scalar type.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "obitonet/tensor.hpp"

namespace obitonet {

using Vec3 = std::array<double, 3>;

inline Vec3 vsub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 vadd(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline double vdot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double sq_dist(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}
inline double vnorm(const Vec3& a) { return std::sqrt(vdot(a, a)); }

struct PointCloud {
    std::vector<Vec3> points;

    int64_t size() const { return static_cast<int64_t>(points.size()); }
    bool empty() const { return points.empty(); }
    const Vec3& operator[](int64_t i) const { return points[static_cast<size_t>(i)]; }
    Vec3& operator[](int64_t i) { return points[static_cast<size_t>(i)]; }
};

// FPS centers plus their KNN neighborhoods in center-relative coordinates.
struct GroupedPointCloud {
    std::vector<Vec3> centers;               // G x 3, absolute
    std::vector<int64_t> center_indices;     // G indices into the source cloud
    std::vector<std::vector<Vec3>> groups;   // G x M x 3, relative to the group center

    int64_t group_count() const { return static_cast<int64_t>(centers.size()); }
    int64_t group_size() const { return groups.empty() ? 0 : static_cast<int64_t>(groups[0].size()); }
};

// ---------------------------------------------------------------------------
// Normalization

struct UnitSphereTransform {
    Vec3 centroid{0, 0, 0};
    double scale = 1.0;

    Vec3 to_original(const Vec3& p) const {
        return {p[0] * scale + centroid[0], p[1] * scale + centroid[1], p[2] * scale + centroid[2]};
    }
};

// Centers the cloud at its centroid and scales so the farthest point has
// norm 1. A degenerate cloud (all points coincident) maps to the origin with
// scale 1.
inline std::pair<PointCloud, UnitSphereTransform> normalize_unit_sphere(const PointCloud& pc) {
    if (pc.empty()) throw ContractError("normalize_unit_sphere: empty cloud");
    UnitSphereTransform tf;
    for (const Vec3& p : pc.points) {
        tf.centroid[0] += p[0];
        tf.centroid[1] += p[1];
        tf.centroid[2] += p[2];
    }
    const double n = static_cast<double>(pc.size());
    tf.centroid = {tf.centroid[0] / n, tf.centroid[1] / n, tf.centroid[2] / n};
    PointCloud out;
    out.points.reserve(pc.points.size());
    double max_norm = 0.0;
    for (const Vec3& p : pc.points) {
        Vec3 q = vsub(p, tf.centroid);
        max_norm = std::max(max_norm, vnorm(q));
        out.points.push_back(q);
    }
    tf.scale = max_norm > 0.0 ? max_norm : 1.0;
    for (Vec3& q : out.points) {
        q[0] /= tf.scale;
        q[1] /= tf.scale;
        q[2] /= tf.scale;
    }
    return {std::move(out), tf};
}

// ---------------------------------------------------------------------------
// Farthest point sampling

// Greedy farthest-point subset: the first pick is start_index, every later
// pick maximizes the minimum squared distance to the chosen set. Ties go to
// the lowest index. Runs the incremental O(n*g) recurrence.
inline std::vector<int64_t> fps(const PointCloud& pc, int64_t g, int64_t start_index = 0) {
    const int64_t n = pc.size();
    if (n == 0) throw ContractError("fps: empty cloud");
    if (g < 1 || g > n)
        throw ContractError("fps: requested " + std::to_string(g) + " samples from " +
                            std::to_string(n) + " points");
    if (start_index < 0 || start_index >= n) throw ContractError("fps: start index out of range");
    std::vector<int64_t> picks;
    picks.reserve(static_cast<size_t>(g));
    std::vector<double> min_d2(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
    std::vector<char> chosen(static_cast<size_t>(n), 0);
    int64_t cur = start_index;
    for (int64_t k = 0; k < g; ++k) {
        picks.push_back(cur);
        chosen[static_cast<size_t>(cur)] = 1;
        if (k + 1 == g) break;
        const Vec3& cp = pc[cur];
        int64_t best = -1;
        double best_d2 = -1.0;
        for (int64_t i = 0; i < n; ++i) {
            if (!chosen[static_cast<size_t>(i)]) {
                const double d2 = sq_dist(pc[i], cp);
                if (d2 < min_d2[static_cast<size_t>(i)]) min_d2[static_cast<size_t>(i)] = d2;
                if (min_d2[static_cast<size_t>(i)] > best_d2) {
                    best_d2 = min_d2[static_cast<size_t>(i)];
                    best = i;
                }
            }
        }
        cur = best;
    }
    return picks;
}

// Seeded-random start variant; everything after the first pick is the same
// greedy recurrence.
inline std::vector<int64_t> fps_random_start(const PointCloud& pc, int64_t g, Rng& rng) {
    if (pc.empty()) throw ContractError("fps_random_start: empty cloud");
    return fps(pc, g, rng.below(pc.size()));
}

// Reference implementation for oracle checks: recomputes every candidate's
// distance to the whole chosen set at each step (O(n*g^2)).
inline std::vector<int64_t> fps_bruteforce(const PointCloud& pc, int64_t g,
                                           int64_t start_index = 0) {
    const int64_t n = pc.size();
    if (n == 0) throw ContractError("fps_bruteforce: empty cloud");
    if (g < 1 || g > n) throw ContractError("fps_bruteforce: bad sample count");
    std::vector<int64_t> picks{start_index};
    std::vector<char> chosen(static_cast<size_t>(n), 0);
    chosen[static_cast<size_t>(start_index)] = 1;
    while (static_cast<int64_t>(picks.size()) < g) {
        int64_t best = -1;
        double best_d2 = -1.0;
        for (int64_t i = 0; i < n; ++i) {
            if (chosen[static_cast<size_t>(i)]) continue;
            double d2 = std::numeric_limits<double>::infinity();
            for (int64_t p : picks) d2 = std::min(d2, sq_dist(pc[i], pc[p]));
            if (d2 > best_d2) {
                best_d2 = d2;
                best = i;
            }
        }
        picks.push_back(best);
        chosen[static_cast<size_t>(best)] = 1;
    }
    return picks;
}

// ---------------------------------------------------------------------------
// kd-tree (exact 3D nearest neighbors)
//
// Median split on the widest-spread axis, leaf size 8. Queries prune a
// subtree only when its axis distance strictly exceeds the current worst,
// so equal-distance candidates are always visited and the lowest-index
// tie-break matches a brute-force scan exactly.

class KdTree {
  public:
    explicit KdTree(const PointCloud& pc, int64_t leaf_size = 8)
        : pts_(pc.points), leaf_size_(leaf_size) {
        if (pts_.empty()) throw ContractError("KdTree: empty cloud");
        order_.resize(pts_.size());
        std::iota(order_.begin(), order_.end(), int64_t{0});
        root_ = build(0, static_cast<int64_t>(pts_.size()));
    }

    int64_t size() const { return static_cast<int64_t>(pts_.size()); }

    // Exact nearest neighbor; ties broken by lowest index.
    std::pair<int64_t, double> nearest(const Vec3& q) const {
        int64_t best_idx = -1;
        double best_d2 = std::numeric_limits<double>::infinity();
        nearest_rec(root_, q, best_idx, best_d2);
        return {best_idx, best_d2};
    }

    // The m nearest points ordered by (squared distance, index) ascending.
    std::vector<int64_t> knearest(const Vec3& q, int64_t m) const {
        if (m < 1 || m > size())
            throw ContractError("KdTree::knearest: m=" + std::to_string(m) + " with " +
                                std::to_string(size()) + " points");
        std::vector<std::pair<double, int64_t>> heap;  // max-heap by (d2, idx)
        heap.reserve(static_cast<size_t>(m));
        knearest_rec(root_, q, m, heap);
        std::sort(heap.begin(), heap.end());
        std::vector<int64_t> out;
        out.reserve(heap.size());
        for (const auto& [d2, idx] : heap) out.push_back(idx);
        return out;
    }

  private:
    struct Node {
        int axis = -1;        // -1 marks a leaf
        double split = 0.0;
        int32_t left = -1, right = -1;
        int64_t begin = 0, end = 0;  // leaf range into order_
    };

    int32_t build(int64_t begin, int64_t end) {
        Node node;
        if (end - begin <= leaf_size_) {
            node.begin = begin;
            node.end = end;
            nodes_.push_back(node);
            return static_cast<int32_t>(nodes_.size() - 1);
        }
        // widest-spread axis
        Vec3 lo = pts_[static_cast<size_t>(order_[static_cast<size_t>(begin)])];
        Vec3 hi = lo;
        for (int64_t i = begin + 1; i < end; ++i) {
            const Vec3& p = pts_[static_cast<size_t>(order_[static_cast<size_t>(i)])];
            for (int a = 0; a < 3; ++a) {
                lo[static_cast<size_t>(a)] = std::min(lo[static_cast<size_t>(a)], p[static_cast<size_t>(a)]);
                hi[static_cast<size_t>(a)] = std::max(hi[static_cast<size_t>(a)], p[static_cast<size_t>(a)]);
            }
        }
        int axis = 0;
        double spread = hi[0] - lo[0];
        for (int a = 1; a < 3; ++a) {
            if (hi[static_cast<size_t>(a)] - lo[static_cast<size_t>(a)] > spread) {
                spread = hi[static_cast<size_t>(a)] - lo[static_cast<size_t>(a)];
                axis = a;
            }
        }
        const int64_t mid = begin + (end - begin) / 2;
        std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                         [&](int64_t a, int64_t b) {
                             const double ca = pts_[static_cast<size_t>(a)][static_cast<size_t>(axis)];
                             const double cb = pts_[static_cast<size_t>(b)][static_cast<size_t>(axis)];
                             if (ca != cb) return ca < cb;
                             return a < b;
                         });
        node.axis = axis;
        node.split = pts_[static_cast<size_t>(order_[static_cast<size_t>(mid)])][static_cast<size_t>(axis)];
        nodes_.push_back(node);
        const int32_t self = static_cast<int32_t>(nodes_.size() - 1);
        const int32_t l = build(begin, mid);
        const int32_t r = build(mid, end);
        nodes_[static_cast<size_t>(self)].left = l;
        nodes_[static_cast<size_t>(self)].right = r;
        return self;
    }

    void nearest_rec(int32_t ni, const Vec3& q, int64_t& best_idx, double& best_d2) const {
        const Node& node = nodes_[static_cast<size_t>(ni)];
        if (node.axis < 0) {
            for (int64_t i = node.begin; i < node.end; ++i) {
                const int64_t idx = order_[static_cast<size_t>(i)];
                const double d2 = sq_dist(pts_[static_cast<size_t>(idx)], q);
                if (d2 < best_d2 || (d2 == best_d2 && idx < best_idx)) {
                    best_d2 = d2;
                    best_idx = idx;
                }
            }
            return;
        }
        const double diff = q[static_cast<size_t>(node.axis)] - node.split;
        const int32_t near = diff < 0.0 ? node.left : node.right;
        const int32_t far = diff < 0.0 ? node.right : node.left;
        nearest_rec(near, q, best_idx, best_d2);
        if (diff * diff <= best_d2) nearest_rec(far, q, best_idx, best_d2);
    }

    void knearest_rec(int32_t ni, const Vec3& q, int64_t m,
                      std::vector<std::pair<double, int64_t>>& heap) const {
        const Node& node = nodes_[static_cast<size_t>(ni)];
        if (node.axis < 0) {
            for (int64_t i = node.begin; i < node.end; ++i) {
                const int64_t idx = order_[static_cast<size_t>(i)];
                const std::pair<double, int64_t> cand{sq_dist(pts_[static_cast<size_t>(idx)], q), idx};
                if (static_cast<int64_t>(heap.size()) < m) {
                    heap.push_back(cand);
                    std::push_heap(heap.begin(), heap.end());
                } else if (cand < heap.front()) {
                    std::pop_heap(heap.begin(), heap.end());
                    heap.back() = cand;
                    std::push_heap(heap.begin(), heap.end());
                }
            }
            return;
        }
        const double diff = q[static_cast<size_t>(node.axis)] - node.split;
        const int32_t near = diff < 0.0 ? node.left : node.right;
        const int32_t far = diff < 0.0 ? node.right : node.left;
        knearest_rec(near, q, m, heap);
        if (static_cast<int64_t>(heap.size()) < m || diff * diff <= heap.front().first)
            knearest_rec(far, q, m, heap);
    }

    std::vector<Vec3> pts_;
    std::vector<int64_t> order_;
    std::vector<Node> nodes_;
    int64_t leaf_size_;
    int32_t root_;
};

// Convenience wrapper matching the nearest-neighbor oracle signature.
inline std::pair<int64_t, double> kd_nearest(const KdTree& tree, const Vec3& q) {
    return tree.nearest(q);
}

inline std::pair<int64_t, double> nearest_bruteforce(const PointCloud& pc, const Vec3& q) {
    int64_t best = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (int64_t i = 0; i < pc.size(); ++i) {
        const double d2 = sq_dist(pc[i], q);
        if (d2 < best_d2) {
            best_d2 = d2;
            best = i;
        }
    }
    return {best, best_d2};
}

// ---------------------------------------------------------------------------
// KNN grouping

// For each selected center, its m nearest cloud points (the center itself
// included at distance 0), stored center-relative in (distance, index) order.
inline GroupedPointCloud knn_group(const PointCloud& pc, const std::vector<int64_t>& centers,
                                   int64_t m) {
    if (pc.empty()) throw ContractError("knn_group: empty cloud");
    if (m < 1 || m > pc.size())
        throw ContractError("knn_group: group size " + std::to_string(m) + " with " +
                            std::to_string(pc.size()) + " points");
    KdTree tree(pc);
    GroupedPointCloud out;
    out.centers.reserve(centers.size());
    out.center_indices = centers;
    out.groups.reserve(centers.size());
    for (int64_t ci : centers) {
        if (ci < 0 || ci >= pc.size()) throw ContractError("knn_group: center index out of range");
        const Vec3& c = pc[ci];
        std::vector<int64_t> nbrs = tree.knearest(c, m);
        std::vector<Vec3> rel;
        rel.reserve(nbrs.size());
        for (int64_t i : nbrs) rel.push_back(vsub(pc[i], c));
        out.centers.push_back(c);
        out.groups.push_back(std::move(rel));
    }
    return out;
}

inline std::vector<int64_t> knn_bruteforce(const PointCloud& pc, int64_t center, int64_t m) {
    std::vector<std::pair<double, int64_t>> all;
    all.reserve(pc.points.size());
    for (int64_t i = 0; i < pc.size(); ++i) all.emplace_back(sq_dist(pc[i], pc[center]), i);
    std::sort(all.begin(), all.end());
    std::vector<int64_t> out;
    for (int64_t i = 0; i < m; ++i) out.push_back(all[static_cast<size_t>(i)].second);
    return out;
}

}  // namespace obitonet
