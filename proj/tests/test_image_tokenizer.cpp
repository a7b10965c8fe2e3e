#include <catch2/catch_amalgamated.hpp>

#include "obitonet/image_tokenizer.hpp"

using namespace obitonet;

namespace {

Image uniform_image(int64_t side, double v) {
    Image img;
    img.h = img.w = side;
    img.pix.assign(static_cast<size_t>(side * side), v);
    return img;
}

std::vector<double> random_values(Rng& rng, int64_t n) {
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = rng.uniform(-1, 1);
    return v;
}

}  // namespace

TEST_CASE("patchify divides a 64x64 image into 64 patches of 64 pixels") {
    auto grid = patchify(uniform_image(64, 0.5), 64);
    CHECK(grid.p == 8);
    CHECK(grid.grid == 8);
    REQUIRE(grid.patches.size() == 64);
    for (const auto& p : grid.patches) CHECK(p.size() == 64);
}

TEST_CASE("patchify keeps row-major patch tiling") {
    Image img;
    img.h = img.w = 8;
    img.pix.resize(64);
    for (int64_t r = 0; r < 8; ++r)
        for (int64_t c = 0; c < 8; ++c) img.at(r, c) = static_cast<double>(r * 8 + c);
    auto grid = patchify(img, 4);
    CHECK(grid.p == 4);
    // patch (0,0) holds pixel rows 0-3, cols 0-3
    for (int64_t py = 0; py < 4; ++py)
        for (int64_t px = 0; px < 4; ++px)
            CHECK(grid.patches[0][static_cast<size_t>(py * 4 + px)] ==
                  static_cast<double>(py * 8 + px));
    // patch (1,0) starts at pixel row 4
    CHECK(grid.patches[2][0] == 32.0);
}

TEST_CASE("patchify rejects non-square token counts naming valid options") {
    try {
        patchify(uniform_image(64, 0.0), 60);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("perfect square") != std::string::npos);
        CHECK(msg.find("49") != std::string::npos);
        CHECK(msg.find("64") != std::string::npos);
    }
}

TEST_CASE("patchify rejects indivisible image sides") {
    CHECK_THROWS_AS(patchify(uniform_image(60, 0.0), 64), ConfigError);
    Image rect;
    rect.h = 32;
    rect.w = 64;
    rect.pix.assign(32 * 64, 0.0);
    CHECK_THROWS_AS(patchify(rect, 16), ConfigError);
}

TEST_CASE("embedding a zero image with zero bias yields the positional table") {
    ParamStore<double> ps;
    Rng rng(1);
    auto it = ImageTokenizer<double>::create(ps, 16, 32, 64, 2, 4, rng);
    for (auto& v : ps.at("image_tokenizer.patch.b").mutable_data()) v = 0.0;
    auto patches = Tensor<double>::zeros({2, 16, 64});
    auto tokens = it.embed_patches(patches);
    REQUIRE(tokens.shape() == Shape{2, 16, 32});
    const auto& pos = it.pos_embed.data();
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t g = 0; g < 16; ++g)
            for (int64_t c = 0; c < 32; ++c)
                CHECK(tokens.at({b, g, c}) == pos[static_cast<size_t>(g * 32 + c)]);
}

TEST_CASE("patch embedding is local before the encoder") {
    ParamStore<double> ps;
    Rng rng(2);
    auto it = ImageTokenizer<double>::create(ps, 16, 32, 64, 0, 4, rng);
    Rng data_rng(5);
    auto v1 = random_values(data_rng, 16 * 64);
    auto v2 = v1;
    for (int64_t i = 0; i < 64; ++i) v2[static_cast<size_t>(3 * 64 + i)] += 0.5;  // patch 3 only
    auto t1 = it.embed_patches(Tensor<double>::from({1, 16, 64}, v1));
    auto t2 = it.embed_patches(Tensor<double>::from({1, 16, 64}, v2));
    for (int64_t g = 0; g < 16; ++g) {
        bool differs = false;
        for (int64_t c = 0; c < 32; ++c)
            if (t1.at({0, g, c}) != t2.at({0, g, c})) differs = true;
        CHECK(differs == (g == 3));
    }
}

TEST_CASE("a depth-0 encoder is the identity on tokens") {
    ParamStore<double> ps;
    Rng rng(3);
    auto it = ImageTokenizer<double>::create(ps, 16, 32, 64, 0, 4, rng);
    Rng data_rng(7);
    auto tokens = Tensor<double>::from({2, 16, 32}, random_values(data_rng, 2 * 16 * 32));
    auto out = it.encode(tokens);
    CHECK(out.data() == tokens.data());
}

TEST_CASE("encoder preserves the token shape at depth 4") {
    ParamStore<double> ps;
    Rng rng(4);
    auto it = ImageTokenizer<double>::create(ps, 16, 32, 64, 4, 4, rng);
    Rng data_rng(9);
    auto tokens = Tensor<double>::from({2, 16, 32}, random_values(data_rng, 2 * 16 * 32));
    auto out = it.encode(tokens);
    CHECK(out.shape() == tokens.shape());
}

TEST_CASE("encoder is permutation-equivariant when positions travel with tokens") {
    ParamStore<double> ps;
    Rng rng(5);
    auto it = ImageTokenizer<double>::create(ps, 4, 16, 4, 2, 2, rng);
    Rng data_rng(11);
    auto tokens = Tensor<double>::from({1, 4, 16}, random_values(data_rng, 64));
    std::vector<std::vector<int64_t>> perm{{2, 0, 3, 1}};
    auto out_base = it.encode(tokens);
    auto out_perm = it.encode(gather_rows(tokens, perm));
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t c = 0; c < 16; ++c)
            CHECK(out_perm.at({0, i, c}) ==
                  Catch::Approx(out_base.at({0, perm[0][static_cast<size_t>(i)], c})).margin(1e-12));
}

TEST_CASE("token count always equals the group count through the stack") {
    ParamStore<double> ps;
    Rng rng(6);
    const int64_t g = 16, c = 32;
    auto it = ImageTokenizer<double>::create(ps, g, c, 64, 3, 4, rng);
    auto img = uniform_image(32, 0.25);
    auto grid = patchify(img, g);
    std::vector<double> flat;
    for (const auto& p : grid.patches) flat.insert(flat.end(), p.begin(), p.end());
    auto tokens = it.encode(it.embed_patches(Tensor<double>::from({1, g, 64}, flat)));
    CHECK(tokens.shape() == Shape{1, g, c});
}
