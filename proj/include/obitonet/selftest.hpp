#pragma once

// Fast invariant suite behind the `selftest` CLI command: oracle checks for
// the sampling and nearest-neighbor paths, gradient spot checks, and freeze
// soundness. Failures are reported, never thrown. The gradient checks honor
// debug::flip_relu_backward, which the CLI exposes as a fault-injection flag
// to demonstrate that the suite actually detects broken backward rules.

#include <chrono>
#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "obitonet/chamfer.hpp"
#include "obitonet/geometry.hpp"
#include "obitonet/model.hpp"
#include "obitonet/training.hpp"

namespace obitonet {

struct SelftestResult {
    std::string name;
    bool pass = false;
    std::string note;
    double seconds = 0.0;
};

namespace detail {

inline PointCloud random_cloud_st(Rng& rng, int64_t n) {
    PointCloud pc;
    for (int64_t i = 0; i < n; ++i)
        pc.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    return pc;
}

inline ModelConfig selftest_config() {
    ModelConfig cfg;
    cfg.c = 16;
    cfg.g = 4;
    cfg.m = 4;
    cfg.mask_ratio = 0.5;
    cfg.pc_depth = 1;
    cfg.img_depth = 1;
    cfg.dec_depth = 1;
    cfg.heads = 2;
    cfg.image_size = 16;
    cfg.batch_size = 1;
    cfg.seed = 31;
    return cfg;
}

inline Sample selftest_sample(const ModelConfig& cfg, uint64_t seed) {
    Sample s;
    s.id = "selftest_sphere";
    s.cloud = synth_shape(ShapeKind::Sphere, cfg.g * cfg.m * 2, seed);
    s.image = render_projection(s.cloud, cfg.image_size, cfg.image_size, ViewAxis::PosZ);
    return s;
}

}  // namespace detail

inline std::vector<SelftestResult> run_selftest() {
    std::vector<SelftestResult> results;
    auto run = [&](const std::string& name, std::function<std::string()> body) {
        SelftestResult r;
        r.name = name;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            r.note = body();
            r.pass = r.note.empty();
        } catch (const std::exception& e) {
            r.pass = false;
            r.note = e.what();
        }
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        results.push_back(std::move(r));
    };

    run("fps_oracle", [] {
        Rng rng(101);
        for (int trial = 0; trial < 20; ++trial) {
            const int64_t n = 16 + rng.below(112);
            const int64_t g = 1 + rng.below(std::min<int64_t>(16, n));
            auto pc = detail::random_cloud_st(rng, n);
            if (fps(pc, g, 0) != fps_bruteforce(pc, g, 0))
                return std::string("greedy selection diverged from brute force");
        }
        return std::string();
    });

    run("kd_nearest_oracle", [] {
        Rng rng(102);
        auto pc = detail::random_cloud_st(rng, 500);
        KdTree tree(pc);
        for (int q = 0; q < 50; ++q) {
            Vec3 query{rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2)};
            if (tree.nearest(query) != nearest_bruteforce(pc, query))
                return std::string("kd-tree nearest neighbor diverged from scan");
        }
        return std::string();
    });

    run("knn_group_oracle", [] {
        Rng rng(103);
        auto pc = detail::random_cloud_st(rng, 300);
        auto centers = fps(pc, 6, 0);
        auto grouped = knn_group(pc, centers, 12);
        for (size_t gi = 0; gi < centers.size(); ++gi) {
            auto want = knn_bruteforce(pc, centers[gi], 12);
            for (int64_t j = 0; j < 12; ++j) {
                const Vec3 abs = vadd(grouped.groups[gi][static_cast<size_t>(j)], grouped.centers[gi]);
                const Vec3& expect = pc[want[static_cast<size_t>(j)]];
                if (std::abs(abs[0] - expect[0]) > 1e-12 || std::abs(abs[1] - expect[1]) > 1e-12 ||
                    std::abs(abs[2] - expect[2]) > 1e-12)
                    return std::string("knn grouping diverged from brute force");
            }
        }
        return std::string();
    });

    run("chamfer_backend_equivalence", [] {
        Rng rng(104);
        for (int trial = 0; trial < 20; ++trial) {
            auto a = detail::random_cloud_st(rng, 16 + rng.below(150));
            auto b = detail::random_cloud_st(rng, 16 + rng.below(150));
            auto rb = chamfer(a, b, ChamferVariant::L2Squared, NnBackend::BruteForce);
            auto rk = chamfer(a, b, ChamferVariant::L2Squared, NnBackend::KdTree);
            if (rb.nearest_forward != rk.nearest_forward ||
                rb.nearest_backward != rk.nearest_backward)
                return std::string("nearest maps differ between backends");
            if (std::abs(rb.loss - rk.loss) > 1e-9)
                return std::string("losses differ between backends");
        }
        return std::string();
    });

    run("chamfer_analytic_cases", [] {
        PointCloud a, b, c;
        a.points = {{0, 0, 0}};
        b.points = {{3, 4, 0}};
        c.points = {{1, 0, 0}, {-1, 0, 0}};
        if (chamfer(a, a, ChamferVariant::L2Squared).loss != 0.0)
            return std::string("identical clouds should score 0");
        if (chamfer(a, b, ChamferVariant::L2Squared).loss != 50.0)
            return std::string("1-vs-1 L2sq case should score 50");
        if (chamfer(a, b, ChamferVariant::L1).loss != 10.0)
            return std::string("1-vs-1 L1 case should score 10");
        if (chamfer(a, c, ChamferVariant::L2Squared).loss != 2.0)
            return std::string("1-vs-2 case should score 2");
        return std::string();
    });

    run("gradient_ops", [] {
        Rng rng(105);
        std::vector<double> xv(12), yv(12);
        for (auto& v : xv) v = rng.uniform(0.2, 1.0);  // keep relu away from its kink
        for (auto& v : yv) v = rng.uniform(-1.0, 1.0);
        auto x = Tensor<double>::from({3, 4}, xv, true);
        auto y = Tensor<double>::from({3, 4}, yv, true);
        auto gamma = Tensor<double>::from({4}, {1, 1.1, 0.9, 1.2}, true);
        auto beta = Tensor<double>::from({4}, {0, 0.1, -0.1, 0.2}, true);
        auto f = [&] {
            auto h = relu(matmul(x, transpose(y, 0, 1)));            // [3,3]
            auto s = softmax(reshape(h, {9}), 0);
            auto ln = layernorm(gelu(mul(x, y)), gamma, beta, 1e-5);
            // every path must carry gradient (sum of a bare softmax is
            // constant 1 and would hide a broken relu rule)
            return add(add(sum_all(mul(s, s)), sum_all(mul(h, h))), sum_all(mul(ln, ln)));
        };
        auto rep = finite_diff_check<double>(f, {{"x", x}, {"y", y}, {"gamma", gamma}, {"beta", beta}},
                                             1e-5, 1e-4);
        if (!rep.pass) return "gradient mismatch: " + rep.summary();
        return std::string();
    });

    run("gradient_model", [] {
        auto cfg = detail::selftest_config();
        ObitoNetModel<double> model(cfg);
        auto sample = detail::selftest_sample(cfg, 7);
        auto tb = model.tokenize({&sample}, {sample_mask_seed(sample.id, cfg.seed)});
        auto f = [&] {
            ForwardOptions<double> opt;
            opt.stage = 3;
            auto fwd = model.forward(tb, opt);
            return model.loss(fwd, tb);
        };
        std::vector<std::pair<std::string, Tensor<double>>> params;
        for (size_t i = 0; i < model.params().count(); ++i)
            params.emplace_back(model.params().name(i), model.params().tensor(i));
        auto rep = finite_diff_check<double>(f, params, 1e-5, 1e-4, 2);
        if (!rep.pass) return "gradient mismatch: " + rep.summary();
        return std::string();
    });

    run("freeze_soundness", [] {
        auto cfg = detail::selftest_config();
        ObitoNetModel<double> model(cfg);
        Trainer<double> trainer(model);
        auto sample = detail::selftest_sample(cfg, 8);
        std::vector<std::vector<double>> before;
        for (size_t i = 0; i < model.params().count(); ++i)
            before.push_back(model.params().tensor(i).data());
        for (int i = 0; i < 3; ++i) trainer.train_step({&sample}, StagePlan{2});
        StagePlan stage1{1};
        bool any_changed = false;
        for (size_t i = 0; i < model.params().count(); ++i) {
            const bool frozen = stage1.trains(model.params().name(i));
            const bool changed = model.params().tensor(i).data() != before[i];
            if (frozen && changed)
                return "frozen parameter '" + model.params().name(i) + "' changed";
            any_changed = any_changed || changed;
        }
        if (!any_changed) return std::string("no trainable parameter moved");
        return std::string();
    });

    run("mask_determinism", [] {
        for (uint64_t seed = 0; seed < 20; ++seed)
            if (masked_indices(MaskSpec{0.5, seed}, 24) != masked_indices(MaskSpec{0.5, seed}, 24))
                return std::string("mask selection is not deterministic");
        if (masked_indices(MaskSpec{0.5, 1}, 24) == masked_indices(MaskSpec{0.5, 2}, 24))
            return std::string("mask selection ignored the seed");
        return std::string();
    });

    run("attention_rows_stochastic", [] {
        ParamStore<double> ps;
        Rng rng(106);
        auto mha = MultiHeadAttention<double>::create(ps, "probe", 16, 4, rng);
        std::vector<double> qv(2 * 5 * 16), kv(2 * 7 * 16);
        for (auto& v : qv) v = rng.uniform(-2, 2);
        for (auto& v : kv) v = rng.uniform(-2, 2);
        AttnSink<double> sink;
        mha(Tensor<double>::from({2, 5, 16}, qv), Tensor<double>::from({2, 7, 16}, kv), &sink);
        const auto& rec = sink[0];
        for (int64_t row = 0; row < rec.b * rec.heads * rec.gq; ++row) {
            double sum = 0;
            for (int64_t col = 0; col < rec.gk; ++col)
                sum += rec.probs[static_cast<size_t>(row * rec.gk + col)];
            if (std::abs(sum - 1.0) > 1e-6) return std::string("attention row does not sum to 1");
        }
        return std::string();
    });

    return results;
}

inline int report_selftest(const std::vector<SelftestResult>& results, std::ostream& out) {
    int failures = 0;
    double total = 0.0;
    for (const auto& r : results) {
        total += r.seconds;
        out << (r.pass ? "[PASS] " : "[FAIL] ") << r.name;
        if (!r.pass && !r.note.empty()) out << ": " << r.note;
        out << "\n";
        if (!r.pass) ++failures;
    }
    out << (failures == 0 ? "selftest ok" : "selftest FAILED") << " (" << results.size()
        << " checks, " << total << " s)\n";
    return failures == 0 ? 0 : 1;
}

}  // namespace obitonet
