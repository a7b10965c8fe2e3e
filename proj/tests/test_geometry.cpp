#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "obitonet/geometry.hpp"

using namespace obitonet;

namespace {

PointCloud random_cloud(Rng& rng, int64_t n, double extent = 1.0) {
    PointCloud pc;
    pc.points.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
        pc.points.push_back({rng.uniform(-extent, extent), rng.uniform(-extent, extent),
                             rng.uniform(-extent, extent)});
    return pc;
}

}  // namespace

TEST_CASE("normalize_unit_sphere hand case") {
    PointCloud pc;
    pc.points = {{2, 0, 0}, {0, 0, 0}};
    auto [out, tf] = normalize_unit_sphere(pc);
    CHECK(out.points[0] == Vec3{1, 0, 0});
    CHECK(out.points[1] == Vec3{-1, 0, 0});
    CHECK(tf.centroid == Vec3{1, 0, 0});
    CHECK(tf.scale == 1.0);
    CHECK(tf.to_original(out.points[0]) == Vec3{2, 0, 0});
}

TEST_CASE("normalize_unit_sphere is the identity on an already normalized cloud") {
    PointCloud pc;
    pc.points = {{1, 0, 0}, {-1, 0, 0}, {0, 0.5, 0}, {0, -0.5, 0}};
    auto [out, tf] = normalize_unit_sphere(pc);
    for (size_t i = 0; i < pc.points.size(); ++i)
        for (int a = 0; a < 3; ++a)
            CHECK(out.points[i][static_cast<size_t>(a)] ==
                  Catch::Approx(pc.points[i][static_cast<size_t>(a)]).margin(1e-12));
    CHECK(tf.scale == Catch::Approx(1.0));
}

TEST_CASE("normalize_unit_sphere is idempotent within 1e-6 on random clouds") {
    Rng rng(4);
    auto pc = random_cloud(rng, 200, 15.0);
    auto [n1, tf1] = normalize_unit_sphere(pc);
    auto [n2, tf2] = normalize_unit_sphere(n1);
    for (size_t i = 0; i < n1.points.size(); ++i)
        for (int a = 0; a < 3; ++a)
            CHECK(n2.points[i][static_cast<size_t>(a)] ==
                  Catch::Approx(n1.points[i][static_cast<size_t>(a)]).margin(1e-6));
    double max_norm = 0;
    for (const auto& p : n1.points) max_norm = std::max(max_norm, vnorm(p));
    CHECK(max_norm == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("normalize_unit_sphere maps a degenerate cloud to the origin") {
    PointCloud pc;
    pc.points = {{3, 3, 3}, {3, 3, 3}, {3, 3, 3}};
    auto [out, tf] = normalize_unit_sphere(pc);
    for (const auto& p : out.points) CHECK(p == Vec3{0, 0, 0});
    CHECK(tf.scale == 1.0);
}

TEST_CASE("normalize_unit_sphere rejects an empty cloud") {
    PointCloud pc;
    CHECK_THROWS_AS(normalize_unit_sphere(pc), ContractError);
}

TEST_CASE("fps exhausts the cloud deterministically when g equals the count") {
    Rng rng(9);
    auto pc = random_cloud(rng, 12);
    auto a = fps(pc, 12, 0);
    auto b = fps(pc, 12, 0);
    CHECK(a == b);
    std::vector<int64_t> sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (int64_t i = 0; i < 12; ++i) CHECK(sorted[static_cast<size_t>(i)] == i);
}

TEST_CASE("fps with g=1 returns the start index") {
    Rng rng(9);
    auto pc = random_cloud(rng, 5);
    CHECK(fps(pc, 1, 3) == std::vector<int64_t>{3});
}

TEST_CASE("fps picks the true farthest point in the hand case") {
    PointCloud pc;
    pc.points = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {10, 0, 0}};
    CHECK(fps(pc, 2, 0) == std::vector<int64_t>{0, 3});
}

TEST_CASE("fps random-start mode is deterministic per rng seed") {
    Rng data_rng(41);
    auto pc = random_cloud(data_rng, 40);
    Rng r1(5), r2(5), r3(6);
    auto a = fps_random_start(pc, 8, r1);
    auto b = fps_random_start(pc, 8, r2);
    CHECK(a == b);
    auto c = fps_random_start(pc, 8, r3);
    CHECK(a != c);  // different seed picks a different start whp
    CHECK(fps(pc, 8, a[0]) == a);
}

TEST_CASE("fps rejects out-of-range requests") {
    PointCloud pc;
    pc.points = {{0, 0, 0}, {1, 0, 0}};
    CHECK_THROWS_AS(fps(pc, 3, 0), ContractError);
    CHECK_THROWS_AS(fps(pc, 0, 0), ContractError);
    CHECK_THROWS_AS(fps(pc, 2, 5), ContractError);
}

TEST_CASE("fps equals brute-force greedy selection on random clouds") {
    Rng rng(21);
    for (int trial = 0; trial < 25; ++trial) {
        const int64_t n = 20 + rng.below(80);
        const int64_t g = 1 + rng.below(std::min<int64_t>(n, 20));
        auto pc = random_cloud(rng, n);
        CHECK(fps(pc, g, 0) == fps_bruteforce(pc, g, 0));
    }
}

TEST_CASE("fps selection distances are non-increasing") {
    Rng rng(33);
    auto pc = random_cloud(rng, 128);
    auto picks = fps(pc, 24, 0);
    // recompute each pick's selection distance: min distance to earlier picks
    double prev = std::numeric_limits<double>::infinity();
    for (size_t k = 1; k < picks.size(); ++k) {
        double d2 = std::numeric_limits<double>::infinity();
        for (size_t j = 0; j < k; ++j)
            d2 = std::min(d2, sq_dist(pc[picks[k]], pc[picks[j]]));
        CHECK(d2 <= prev);
        prev = d2;
    }
}

TEST_CASE("fps indices are invariant under rotation of the cloud") {
    Rng rng(55);
    const double c = std::cos(0.7), s = std::sin(0.7);
    for (int trial = 0; trial < 5; ++trial) {
        auto pc = random_cloud(rng, 60);
        auto picks = fps(pc, 12, 0);
        // guard against near-ties that rotation roundoff could flip
        bool well_separated = true;
        {
            std::vector<double> min_d2(pc.points.size(), std::numeric_limits<double>::infinity());
            std::vector<char> chosen(pc.points.size(), 0);
            chosen[0] = 1;
            int64_t cur = 0;
            for (int64_t k = 1; k < 12 && well_separated; ++k) {
                double best = -1, second = -1;
                int64_t best_i = -1;
                for (int64_t i = 0; i < pc.size(); ++i) {
                    if (chosen[static_cast<size_t>(i)]) continue;
                    min_d2[static_cast<size_t>(i)] =
                        std::min(min_d2[static_cast<size_t>(i)], sq_dist(pc[i], pc[cur]));
                    if (min_d2[static_cast<size_t>(i)] > best) {
                        second = best;
                        best = min_d2[static_cast<size_t>(i)];
                        best_i = i;
                    } else if (min_d2[static_cast<size_t>(i)] > second) {
                        second = min_d2[static_cast<size_t>(i)];
                    }
                }
                if (best_i < 0 || best - second < 1e-9) {
                    well_separated = false;
                    break;
                }
                chosen[static_cast<size_t>(best_i)] = 1;
                cur = best_i;
            }
        }
        if (!well_separated) continue;
        PointCloud rot;
        for (const auto& p : pc.points)
            rot.points.push_back({c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]});
        CHECK(fps(rot, 12, 0) == picks);
    }
}

TEST_CASE("kd_nearest finds a stored point at distance zero") {
    Rng rng(1);
    auto pc = random_cloud(rng, 50);
    KdTree tree(pc);
    auto [idx, d2] = kd_nearest(tree, pc[17]);
    CHECK(idx == 17);
    CHECK(d2 == 0.0);
}

TEST_CASE("kd_nearest matches a brute-force scan on random queries") {
    Rng rng(2);
    auto pc = random_cloud(rng, 1000);
    KdTree tree(pc);
    for (int q = 0; q < 100; ++q) {
        Vec3 query{rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2)};
        auto got = tree.nearest(query);
        auto want = nearest_bruteforce(pc, query);
        CHECK(got.first == want.first);
        CHECK(got.second == want.second);
    }
}

TEST_CASE("kd_nearest on a single-point tree returns that point") {
    PointCloud pc;
    pc.points = {{0.3, -0.2, 0.9}};
    KdTree tree(pc);
    for (double x : {-5.0, 0.0, 5.0}) {
        auto [idx, d2] = tree.nearest({x, 0, 0});
        CHECK(idx == 0);
    }
}

TEST_CASE("kd_nearest breaks exact ties by the lowest index") {
    PointCloud pc;
    pc.points = {{1, 0, 0}, {-1, 0, 0}, {1, 0, 0}};
    KdTree tree(pc);
    auto [idx, d2] = tree.nearest({1, 0, 0});
    CHECK(idx == 0);
    auto [idx2, d22] = tree.nearest({0, 0, 0});
    CHECK(idx2 == 0);  // indices 0,1,2 all at distance 1
    CHECK(d22 == 1.0);
}

TEST_CASE("knn groups of size one contain only the center") {
    Rng rng(6);
    auto pc = random_cloud(rng, 30);
    auto centers = fps(pc, 5, 0);
    auto grouped = knn_group(pc, centers, 1);
    REQUIRE(grouped.group_count() == 5);
    for (const auto& grp : grouped.groups) {
        REQUIRE(grp.size() == 1);
        CHECK(grp[0] == Vec3{0, 0, 0});
    }
}

TEST_CASE("knn grouping hand case on collinear points") {
    PointCloud pc;
    pc.points = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}};
    auto grouped = knn_group(pc, {1}, 3);
    // neighbors of point 1 sorted by (distance, index): itself, then 0 and 2
    REQUIRE(grouped.groups[0].size() == 3);
    CHECK(grouped.groups[0][0] == Vec3{0, 0, 0});
    CHECK(grouped.groups[0][1] == Vec3{-1, 0, 0});
    CHECK(grouped.groups[0][2] == Vec3{1, 0, 0});
    CHECK(grouped.center_indices == std::vector<int64_t>{1});
}

TEST_CASE("knn grouping equals brute force on random clouds up to 2048 points") {
    Rng rng(8);
    for (int trial = 0; trial < 6; ++trial) {
        const int64_t n = 256 + rng.below(1793);  // up to 2048
        const int64_t m = 1 + rng.below(32);
        auto pc = random_cloud(rng, n);
        auto centers = fps(pc, 8, 0);
        auto grouped = knn_group(pc, centers, m);
        for (size_t gi = 0; gi < centers.size(); ++gi) {
            auto want = knn_bruteforce(pc, centers[gi], m);
            REQUIRE(grouped.groups[gi].size() == static_cast<size_t>(m));
            for (int64_t j = 0; j < m; ++j) {
                const Vec3 abs = vadd(grouped.groups[gi][static_cast<size_t>(j)],
                                      grouped.centers[gi]);
                const Vec3& expect = pc[want[static_cast<size_t>(j)]];
                for (int a = 0; a < 3; ++a)
                    CHECK(abs[static_cast<size_t>(a)] ==
                          Catch::Approx(expect[static_cast<size_t>(a)]).margin(1e-12));
            }
        }
    }
}

TEST_CASE("knn group shapes and relative-coordinate bounds") {
    Rng rng(10);
    auto pc = random_cloud(rng, 300);
    auto centers = fps(pc, 16, 0);
    auto grouped = knn_group(pc, centers, 24);
    CHECK(grouped.group_count() == 16);
    CHECK(grouped.group_size() == 24);
    double diameter = 0;
    for (int64_t i = 0; i < pc.size(); ++i)
        for (int64_t j = i + 1; j < pc.size(); ++j)
            diameter = std::max(diameter, std::sqrt(sq_dist(pc[i], pc[j])));
    for (const auto& grp : grouped.groups)
        for (const auto& rel : grp)
            for (int a = 0; a < 3; ++a)
                CHECK(std::abs(rel[static_cast<size_t>(a)]) <= diameter);
}

TEST_CASE("knn grouping rejects oversized groups") {
    Rng rng(12);
    auto pc = random_cloud(rng, 10);
    CHECK_THROWS_AS(knn_group(pc, {0}, 11), ContractError);
}

TEST_CASE("duplicate-heavy clouds keep all oracles exact") {
    // 60 points drawn from only 5 distinct locations: every query is a tie
    PointCloud pc;
    const Vec3 base[5] = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 1}};
    for (int i = 0; i < 60; ++i) pc.points.push_back(base[i % 5]);
    auto centers = fps(pc, 10, 0);
    CHECK(centers == fps_bruteforce(pc, 10, 0));
    KdTree tree(pc);
    for (const auto& q : {Vec3{0.6, 0.1, 0.1}, Vec3{0, 0, 0}, Vec3{0.5, 0.5, 0.5}})
        CHECK(tree.nearest(q) == nearest_bruteforce(pc, q));
    auto grouped = knn_group(pc, centers, 7);
    for (size_t gi = 0; gi < centers.size(); ++gi) {
        auto want = knn_bruteforce(pc, centers[gi], 7);
        for (int64_t j = 0; j < 7; ++j) {
            const Vec3 abs = vadd(grouped.groups[gi][static_cast<size_t>(j)], grouped.centers[gi]);
            CHECK(abs == pc[want[static_cast<size_t>(j)]]);
        }
    }
}

TEST_CASE("grouping recovers absolute coordinates present in the source cloud") {
    Rng rng(13);
    auto pc = random_cloud(rng, 100);
    auto grouped = knn_group(pc, fps(pc, 10, 0), 8);
    for (size_t gi = 0; gi < grouped.groups.size(); ++gi)
        for (const auto& rel : grouped.groups[gi]) {
            const Vec3 abs = vadd(rel, grouped.centers[gi]);
            bool found = false;
            for (const auto& p : pc.points)
                if (std::abs(p[0] - abs[0]) < 1e-9 && std::abs(p[1] - abs[1]) < 1e-9 &&
                    std::abs(p[2] - abs[2]) < 1e-9)
                    found = true;
            CHECK(found);
        }
}
