#pragma once

// Symmetric Chamfer distance between two point sets, in squared-L2 and L1
// (mean Euclidean) variants, with brute-force and kd-tree nearest-neighbor
// backends. Both backends must produce identical nearest-index maps; the
// loss is assembled from those maps in fixed index order, so the two paths
// agree bitwise, not just within tolerance.

#include <cmath>
#include <cstdint>
#include <vector>

#include "obitonet/geometry.hpp"
#include "obitonet/tensor.hpp"

namespace obitonet {

enum class ChamferVariant { L2Squared, L1 };
enum class NnBackend { BruteForce, KdTree };

struct ChamferResult {
    double loss = 0.0;
    std::vector<int64_t> nearest_forward;   // per recon point: index of nearest gt point
    std::vector<int64_t> nearest_backward;  // per gt point: index of nearest recon point
};

namespace detail {

inline std::vector<int64_t> nearest_map(const PointCloud& from, const PointCloud& to,
                                        NnBackend backend) {
    std::vector<int64_t> out(static_cast<size_t>(from.size()));
    if (backend == NnBackend::KdTree) {
        KdTree tree(to);
        for (int64_t i = 0; i < from.size(); ++i)
            out[static_cast<size_t>(i)] = tree.nearest(from[i]).first;
    } else {
        for (int64_t i = 0; i < from.size(); ++i)
            out[static_cast<size_t>(i)] = nearest_bruteforce(to, from[i]).first;
    }
    return out;
}

inline double chamfer_term(const PointCloud& from, const PointCloud& to,
                           const std::vector<int64_t>& nn, ChamferVariant variant) {
    double acc = 0.0;
    for (int64_t i = 0; i < from.size(); ++i) {
        const double d2 = sq_dist(from[i], to[nn[static_cast<size_t>(i)]]);
        acc += variant == ChamferVariant::L2Squared ? d2 : std::sqrt(d2);
    }
    return acc / static_cast<double>(from.size());
}

}  // namespace detail

// Mean nearest-neighbor distance in both directions:
//   L(A,B) = (1/|A|) sum_x min_y d(x,y) + (1/|B|) sum_y min_x d(y,x)
// with d the squared (L2Squared) or plain (L1) Euclidean distance.
inline ChamferResult chamfer(const PointCloud& recon, const PointCloud& gt, ChamferVariant variant,
                             NnBackend backend = NnBackend::KdTree) {
    if (recon.empty() || gt.empty()) throw ContractError("chamfer: empty cloud");
    ChamferResult r;
    r.nearest_forward = detail::nearest_map(recon, gt, backend);
    r.nearest_backward = detail::nearest_map(gt, recon, backend);
    r.loss = detail::chamfer_term(recon, gt, r.nearest_forward, variant) +
             detail::chamfer_term(gt, recon, r.nearest_backward, variant);
    return r;
}

// Gradient of the loss with respect to the recon points, holding the
// forward call's nearest-neighbor assignments fixed (the subgradient at
// ties). Coincident pairs contribute zero in the L1 variant.
inline std::vector<Vec3> chamfer_backward(const ChamferResult& result, const PointCloud& recon,
                                          const PointCloud& gt, ChamferVariant variant) {
    std::vector<Vec3> grad(static_cast<size_t>(recon.size()), Vec3{0, 0, 0});
    const double wa = 1.0 / static_cast<double>(recon.size());
    const double wb = 1.0 / static_cast<double>(gt.size());
    auto accumulate = [&](int64_t xi, const Vec3& y, double w) {
        const Vec3 d = vsub(recon[xi], y);
        Vec3& g = grad[static_cast<size_t>(xi)];
        if (variant == ChamferVariant::L2Squared) {
            g[0] += 2.0 * w * d[0];
            g[1] += 2.0 * w * d[1];
            g[2] += 2.0 * w * d[2];
        } else {
            const double len = vnorm(d);
            if (len > 0.0) {
                g[0] += w * d[0] / len;
                g[1] += w * d[1] / len;
                g[2] += w * d[2] / len;
            }
        }
    };
    for (int64_t i = 0; i < recon.size(); ++i)
        accumulate(i, gt[result.nearest_forward[static_cast<size_t>(i)]], wa);
    for (int64_t j = 0; j < gt.size(); ++j)
        accumulate(result.nearest_backward[static_cast<size_t>(j)], gt[j], wb);
    return grad;
}

// ---------------------------------------------------------------------------
// Tape operation: mean Chamfer loss of a predicted [B, N, 3] tensor against
// per-item ground-truth clouds. Gradient flows into the prediction only; the
// ground truth is constant.

template <typename T>
Tensor<T> chamfer_loss(const Tensor<T>& pred, const std::vector<PointCloud>& gts,
                       ChamferVariant variant, NnBackend backend = NnBackend::KdTree,
                       std::vector<ChamferResult>* out_results = nullptr) {
    if (pred.rank() != 3 || pred.dim(2) != 3)
        throw DimensionError("chamfer_loss: expected [B,N,3], got " + shape_str(pred.shape()));
    const int64_t b = pred.dim(0), np = pred.dim(1);
    if (static_cast<int64_t>(gts.size()) != b)
        throw DimensionError("chamfer_loss: " + std::to_string(gts.size()) +
                             " ground-truth clouds for batch of " + std::to_string(b));
    auto n = detail::new_node<T>({1}, "chamfer_loss", {pred.node()});
    std::vector<PointCloud> recons(static_cast<size_t>(b));
    std::vector<ChamferResult> results(static_cast<size_t>(b));
    const auto& pv = pred.data();
    double total = 0.0;
    for (int64_t bi = 0; bi < b; ++bi) {
        PointCloud& rc = recons[static_cast<size_t>(bi)];
        rc.points.resize(static_cast<size_t>(np));
        for (int64_t i = 0; i < np; ++i) {
            const size_t base = static_cast<size_t>((bi * np + i) * 3);
            rc.points[static_cast<size_t>(i)] = {static_cast<double>(pv[base]),
                                                 static_cast<double>(pv[base + 1]),
                                                 static_cast<double>(pv[base + 2])};
        }
        results[static_cast<size_t>(bi)] = chamfer(rc, gts[static_cast<size_t>(bi)], variant, backend);
        total += results[static_cast<size_t>(bi)].loss;
    }
    n->value[0] = static_cast<T>(total / static_cast<double>(b));
    if (out_results) *out_results = results;
    if (n->requires_grad) {
        n->backward = [b, np, variant, gts, recons = std::move(recons),
                       results = std::move(results)](TensorNode<T>& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            const double gscale = static_cast<double>(self.grad[0]) / static_cast<double>(b);
            for (int64_t bi = 0; bi < b; ++bi) {
                std::vector<Vec3> g = chamfer_backward(results[static_cast<size_t>(bi)],
                                                       recons[static_cast<size_t>(bi)],
                                                       gts[static_cast<size_t>(bi)], variant);
                for (int64_t i = 0; i < np; ++i) {
                    const size_t base = static_cast<size_t>((bi * np + i) * 3);
                    p.grad[base] += static_cast<T>(gscale * g[static_cast<size_t>(i)][0]);
                    p.grad[base + 1] += static_cast<T>(gscale * g[static_cast<size_t>(i)][1]);
                    p.grad[base + 2] += static_cast<T>(gscale * g[static_cast<size_t>(i)][2]);
                }
            }
        };
    }
    return Tensor<T>(n);
}

}  // namespace obitonet
