#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "obitonet/dataset.hpp"

using namespace obitonet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("obitonet_test_" + std::to_string(Catch::rngSeed()) + "_" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    f << text;
}

std::string read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

}  // namespace

TEST_CASE("xyz round-trip preserves coordinates") {
    TempDir dir;
    Rng rng(1);
    PointCloud pc;
    for (int i = 0; i < 100; ++i)
        pc.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    save_xyz(dir.file("a.xyz"), pc);
    auto back = load_xyz(dir.file("a.xyz"));
    REQUIRE(back.size() == pc.size());
    for (int64_t i = 0; i < pc.size(); ++i)
        for (int a = 0; a < 3; ++a)
            CHECK(back[i][static_cast<size_t>(a)] == pc[i][static_cast<size_t>(a)]);
}

TEST_CASE("xyz parse error names the offending line") {
    TempDir dir;
    write_text(dir.file("bad.xyz"), "0 0 0\n1 2\n");
    try {
        load_xyz(dir.file("bad.xyz"));
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find(":2") != std::string::npos);
    }
}

TEST_CASE("empty xyz file is rejected as an empty cloud") {
    TempDir dir;
    write_text(dir.file("empty.xyz"), "");
    try {
        load_xyz(dir.file("empty.xyz"));
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("empty cloud") != std::string::npos);
    }
}

TEST_CASE("loaders reject non-finite coordinates") {
    TempDir dir;
    write_text(dir.file("nan.xyz"), "0 0 0\nnan 1 2\n");
    CHECK_THROWS_AS(load_xyz(dir.file("nan.xyz")), ParseError);
    write_text(dir.file("inf.xyz"), "inf 0 0\n");
    CHECK_THROWS_AS(load_xyz(dir.file("inf.xyz")), ParseError);
}

TEST_CASE("minimal ascii ply fixture parses to three points") {
    TempDir dir;
    write_text(dir.file("tri.ply"),
               "ply\n"
               "format ascii 1.0\n"
               "comment hand-written fixture\n"
               "element vertex 3\n"
               "property float x\n"
               "property float y\n"
               "property float z\n"
               "end_header\n"
               "0 0 0\n"
               "1 0 0\n"
               "0 1 0\n");
    auto pc = load_ply(dir.file("tri.ply"));
    REQUIRE(pc.size() == 3);
    CHECK(pc[1] == Vec3{1, 0, 0});
    CHECK(pc[2] == Vec3{0, 1, 0});
}

TEST_CASE("ply skips unknown vertex properties and foreign elements") {
    TempDir dir;
    write_text(dir.file("rich.ply"),
               "ply\n"
               "format ascii 1.0\n"
               "element vertex 2\n"
               "property float nx\n"
               "property float x\n"
               "property float y\n"
               "property float z\n"
               "property uchar red\n"
               "element face 1\n"
               "property list uchar int vertex_indices\n"
               "end_header\n"
               "9 0.5 0.25 0.125 255\n"
               "9 -1 -2 -3 0\n"
               "3 0 1 0\n");
    auto pc = load_ply(dir.file("rich.ply"));
    REQUIRE(pc.size() == 2);
    CHECK(pc[0] == Vec3{0.5, 0.25, 0.125});
    CHECK(pc[1] == Vec3{-1, -2, -3});
}

TEST_CASE("ply round-trip preserves coordinates") {
    TempDir dir;
    Rng rng(2);
    PointCloud pc;
    for (int i = 0; i < 50; ++i)
        pc.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    save_ply(dir.file("b.ply"), pc);
    auto back = load_ply(dir.file("b.ply"));
    REQUIRE(back.size() == pc.size());
    for (int64_t i = 0; i < pc.size(); ++i) CHECK(back[i] == pc[i]);
}

TEST_CASE("binary ply is rejected with an explicit encoding error") {
    TempDir dir;
    write_text(dir.file("bin.ply"),
               "ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
               "property float x\nproperty float y\nproperty float z\nend_header\n");
    try {
        load_ply(dir.file("bin.ply"));
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("unsupported encoding") != std::string::npos);
    }
}

TEST_CASE("ply without magic is rejected") {
    TempDir dir;
    write_text(dir.file("no.ply"), "plyx\nformat ascii 1.0\nend_header\n");
    CHECK_THROWS_AS(load_ply(dir.file("no.ply")), ParseError);
}

TEST_CASE("sphere samples keep unit norm after normalization") {
    for (int64_t n : {7, 100, 501}) {
        auto pc = synth_shape(ShapeKind::Sphere, n, 42);
        REQUIRE(pc.size() == n);
        for (const auto& p : pc.points) CHECK(vnorm(p) == Catch::Approx(1.0).margin(1e-6));
    }
}

TEST_CASE("cube sampling is stratified over faces") {
    const int64_t k = 10;
    auto pc = synth_shape(ShapeKind::Cube, 6 * k, 3);
    // count points per construction face via the dominant +-1 coordinate
    // (scaling preserves which axis is extremal)
    int64_t per_face[6] = {0, 0, 0, 0, 0, 0};
    double extreme = 0.0;
    for (const auto& p : pc.points) extreme = std::max({extreme, std::abs(p[0]), std::abs(p[1]), std::abs(p[2])});
    for (const auto& p : pc.points) {
        for (int a = 0; a < 3; ++a) {
            if (std::abs(std::abs(p[static_cast<size_t>(a)]) - extreme) < 1e-12) {
                per_face[2 * a + (p[static_cast<size_t>(a)] > 0 ? 0 : 1)]++;
                break;
            }
        }
    }
    for (int f = 0; f < 6; ++f) CHECK(per_face[f] == k);
}

TEST_CASE("synthetic shapes are bitwise deterministic per seed") {
    for (auto kind : {ShapeKind::Sphere, ShapeKind::Cube, ShapeKind::Torus,
                      ShapeKind::PlaneWithHole}) {
        auto a = synth_shape(kind, 128, 9);
        auto b = synth_shape(kind, 128, 9);
        REQUIRE(a.size() == b.size());
        for (int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
        auto c = synth_shape(kind, 128, 10);
        bool differs = false;
        for (int64_t i = 0; i < a.size(); ++i)
            if (a[i] != c[i]) differs = true;
        CHECK(differs);
    }
}

TEST_CASE("unknown shape names are config errors") {
    CHECK_THROWS_AS(parse_shape_kind("dodecahedron"), ConfigError);
}

TEST_CASE("rendering a single origin point lights only the image center") {
    PointCloud pc;
    pc.points = {{0, 0, 0}};
    auto img = render_projection(pc, 16, 16, ViewAxis::PosZ);
    int64_t nonzero = 0;
    for (double v : img.pix) nonzero += v > 0 ? 1 : 0;
    CHECK(nonzero == 1);
    CHECK(img.at(8, 8) == 0.5);
}

TEST_CASE("renderer keeps the nearer of two points covering a pixel") {
    PointCloud pc;
    pc.points = {{0, 0, -0.5}, {0, 0, 0.75}};
    auto img = render_projection(pc, 16, 16, ViewAxis::PosZ);
    CHECK(img.at(8, 8) == Catch::Approx((0.75 + 1.0) * 0.5));
    auto img_back = render_projection(pc, 16, 16, ViewAxis::NegZ);
    CHECK(img_back.at(8, 8) == Catch::Approx((0.5 + 1.0) * 0.5));
}

TEST_CASE("a dense sphere renders to a disc of the expected area") {
    auto pc = synth_shape(ShapeKind::Sphere, 30000, 4);
    auto img = render_projection(pc, 64, 64, ViewAxis::PosZ);
    int64_t nonzero = 0;
    for (double v : img.pix) nonzero += v > 0 ? 1 : 0;
    const double expected = 3.14159265358979 * 32.0 * 32.0;
    CHECK(std::abs(static_cast<double>(nonzero) - expected) < 0.10 * expected);
}

TEST_CASE("tiny render targets are rejected") {
    PointCloud pc;
    pc.points = {{0, 0, 0}};
    CHECK_THROWS_AS(render_projection(pc, 4, 16, ViewAxis::PosZ), ConfigError);
}

TEST_CASE("mask ratio zero leaves every group visible") {
    GroupedPointCloud grouped;
    grouped.centers.resize(10);
    grouped.center_indices.resize(10);
    grouped.groups.resize(10);
    auto mg = apply_mask(grouped, MaskSpec{0.0, 7});
    CHECK(mg.masked.empty());
    CHECK(mg.visible.size() == 10);
}

TEST_CASE("mask counts follow round(ratio * G)") {
    GroupedPointCloud grouped;
    grouped.centers.resize(10);
    grouped.center_indices.resize(10);
    grouped.groups.resize(10);
    auto mg = apply_mask(grouped, MaskSpec{0.6, 3});
    CHECK(mg.masked.size() == 6);
    CHECK(mg.visible.size() == 4);
}

TEST_CASE("ratio two-thirds on G divisible by 3 gives an exact 3x contract") {
    const int64_t g = 63, m = 4;
    auto masked = masked_indices(MaskSpec{2.0 / 3.0, 5}, g);
    CHECK(static_cast<int64_t>(masked.size()) == 42);
    const int64_t visible_points = (g - 42) * m;
    CHECK(g * m == 3 * visible_points);
}

TEST_CASE("masking is deterministic per seed and varies across seeds") {
    std::vector<std::vector<int64_t>> seen;
    for (uint64_t seed = 0; seed < 100; ++seed) {
        auto a = masked_indices(MaskSpec{0.5, seed}, 32);
        auto b = masked_indices(MaskSpec{0.5, seed}, 32);
        CHECK(a == b);
        seen.push_back(a);
    }
    int64_t distinct = 0;
    for (size_t i = 0; i < seen.size(); ++i) {
        bool dup = false;
        for (size_t j = 0; j < i; ++j)
            if (seen[i] == seen[j]) dup = true;
        if (!dup) distinct++;
    }
    CHECK(distinct > 95);
}

TEST_CASE("invalid mask ratios are config errors") {
    CHECK_THROWS_AS(masked_indices(MaskSpec{1.0, 0}, 8), ConfigError);
    CHECK_THROWS_AS(masked_indices(MaskSpec{-0.1, 0}, 8), ConfigError);
}

TEST_CASE("pgm round-trip is bit-exact") {
    TempDir dir;
    Rng rng(5);
    Image img;
    img.h = 16;
    img.w = 24;
    for (int64_t i = 0; i < img.h * img.w; ++i) img.pix.push_back(rng.uniform(0, 1));
    save_pgm(dir.file("a.pgm"), img);
    auto back = load_pgm(dir.file("a.pgm"));
    save_pgm(dir.file("b.pgm"), back);
    CHECK(read_bytes(dir.file("a.pgm")) == read_bytes(dir.file("b.pgm")));
    CHECK(back.h == img.h);
    CHECK(back.w == img.w);
}

TEST_CASE("stored pairs re-render bit-for-bit") {
    TempDir dir;
    auto cloud = synth_shape(ShapeKind::Torus, 2048, 11);
    auto img = render_projection(cloud, 64, 64, ViewAxis::PosZ);
    save_xyz(dir.file("c.xyz"), cloud);
    save_pgm(dir.file("c.pgm"), img);
    auto cloud_back = load_xyz(dir.file("c.xyz"));
    auto img2 = render_projection(cloud_back, 64, 64, ViewAxis::PosZ);
    save_pgm(dir.file("c2.pgm"), img2);
    CHECK(read_bytes(dir.file("c.pgm")) == read_bytes(dir.file("c2.pgm")));
}

TEST_CASE("manifest round-trips and missing manifests name the path") {
    TempDir dir;
    std::vector<ManifestEntry> entries{
        {"sphere_0000", "sphere", 1, 512, "+z", "sphere_0000.xyz", "sphere_0000.pgm"},
        {"cube_0001", "cube", 2, 512, "+z", "cube_0001.xyz", "cube_0001.pgm"},
    };
    write_manifest(dir.path.string(), entries);
    auto back = read_manifest(dir.path.string());
    REQUIRE(back.size() == 2);
    CHECK(back[0].id == "sphere_0000");
    CHECK(back[1].kind == "cube");
    CHECK(back[1].seed == 2);
    try {
        read_manifest(dir.file("nope"));
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("nope") != std::string::npos);
    }
}
