#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "obitonet/ca_decoder.hpp"

using namespace obitonet;

namespace {

std::vector<double> random_values(Rng& rng, int64_t n) {
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = rng.uniform(-1, 1);
    return v;
}

void set_identity(Tensor<double>& w) {
    const int64_t n = w.dim(0);
    auto& d = w.mutable_data();
    std::fill(d.begin(), d.end(), 0.0);
    for (int64_t i = 0; i < n; ++i) d[static_cast<size_t>(i * n + i)] = 1.0;
}

void set_zero(Tensor<double>& t) {
    std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
}

std::string temp_file(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("identical image tokens drive every query to the same fused value") {
    ParamStore<double> ps;
    Rng rng(1);
    auto mha = MultiHeadAttention<double>::create(ps, "cross", 8, 2, rng);
    set_identity(mha.wo.w);
    set_zero(mha.wo.b);
    Rng data_rng(2);
    auto v = random_values(data_rng, 8);
    std::vector<double> kv;
    for (int i = 0; i < 5; ++i) kv.insert(kv.end(), v.begin(), v.end());
    auto kv_t = Tensor<double>::from({1, 5, 8}, kv);
    auto q_t = Tensor<double>::from({1, 3, 8}, random_values(data_rng, 24));
    auto out = mha(q_t, kv_t);
    // expected: the V-projection of v, independent of the query
    auto vproj = add_bias(matmul(Tensor<double>::from({1, 8}, v), mha.wv.w), mha.wv.b);
    for (int64_t q = 0; q < 3; ++q)
        for (int64_t c = 0; c < 8; ++c)
            CHECK(out.at({0, q, c}) == Catch::Approx(vproj.at({0, c})).margin(1e-9));
}

TEST_CASE("attention probability rows sum to 1") {
    ParamStore<double> ps;
    Rng rng(3);
    auto mha = MultiHeadAttention<double>::create(ps, "cross", 16, 4, rng);
    Rng data_rng(4);
    auto q = Tensor<double>::from({2, 6, 16}, random_values(data_rng, 192));
    auto kv = Tensor<double>::from({2, 5, 16}, random_values(data_rng, 160));
    AttnSink<double> sink;
    mha(q, kv, &sink);
    REQUIRE(sink.size() == 1);
    const auto& rec = sink[0];
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t h = 0; h < 4; ++h)
            for (int64_t row = 0; row < 6; ++row) {
                double sum = 0;
                for (int64_t col = 0; col < 5; ++col)
                    sum += rec.probs[static_cast<size_t>(((b * 4 + h) * 6 + row) * 5 + col)];
                CHECK(sum == Catch::Approx(1.0).margin(1e-6));
            }
}

TEST_CASE("hand-set logits 0 and ln3 give weights 1/4 and 3/4") {
    ParamStore<double> ps;
    Rng rng(5);
    auto mha = MultiHeadAttention<double>::create(ps, "cross", 2, 1, rng);
    set_identity(mha.wq.w);
    set_identity(mha.wk.w);
    set_identity(mha.wv.w);
    set_identity(mha.wo.w);
    set_zero(mha.wq.b);
    set_zero(mha.wk.b);
    set_zero(mha.wv.b);
    set_zero(mha.wo.b);
    const double ln3 = std::log(3.0);
    const double s2 = std::sqrt(2.0);
    // query q = (sqrt(2), 0); keys k1 = (0,1), k2 = (ln3, 0); scale 1/sqrt(2)
    // logits: q.k1/sqrt(2) = 0, q.k2/sqrt(2) = ln3
    auto q = Tensor<double>::from({1, 1, 2}, {s2, 0.0});
    auto kv = Tensor<double>::from({1, 2, 2}, {0.0, 1.0, ln3, 0.0});
    AttnSink<double> sink;
    auto out = mha(q, kv, &sink);
    REQUIRE(sink.size() == 1);
    CHECK(sink[0].probs[0] == Catch::Approx(0.25).epsilon(1e-12));
    CHECK(sink[0].probs[1] == Catch::Approx(0.75).epsilon(1e-12));
    // output = 0.25 * v1 + 0.75 * v2 with v = identity-projected keys
    CHECK(out.at({0, 0, 0}) == Catch::Approx(0.75 * ln3).epsilon(1e-12));
    CHECK(out.at({0, 0, 1}) == Catch::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("cross attention keeps the residual from the point tokens") {
    ParamStore<double> ps;
    Rng rng(6);
    auto dec = CaDecoder<double>::create(ps, 16, 4, 0, 4, false, rng);
    // zero the out-projection: fused tokens must equal the point tokens
    set_zero(ps.at("ca_decoder.cross0.wo.w"));
    set_zero(ps.at("ca_decoder.cross0.wo.b"));
    Rng data_rng(7);
    auto pts = Tensor<double>::from({1, 4, 16}, random_values(data_rng, 64));
    auto img = Tensor<double>::from({1, 4, 16}, random_values(data_rng, 64));
    auto fused = dec.fuse(pts, img, 0);
    CHECK(fused.data() == pts.data());
}

TEST_CASE("a depth-0 decoder without fusion is the identity") {
    ParamStore<double> ps;
    Rng rng(8);
    auto dec = CaDecoder<double>::create(ps, 16, 4, 0, 4, false, rng);
    Rng data_rng(9);
    auto tokens = Tensor<double>::from({2, 4, 16}, random_values(data_rng, 128));
    CHECK(dec.decode(tokens, nullptr).data() == tokens.data());
}

TEST_CASE("zeroing block output projections reduces each block to the identity") {
    ParamStore<double> ps;
    Rng rng(10);
    auto dec = CaDecoder<double>::create(ps, 16, 4, 3, 4, false, rng);
    for (int i = 0; i < 3; ++i) {
        const std::string p = "ca_decoder.block" + std::to_string(i);
        set_zero(ps.at(p + ".attn.wo.w"));
        set_zero(ps.at(p + ".attn.wo.b"));
        set_zero(ps.at(p + ".fc2.w"));
        set_zero(ps.at(p + ".fc2.b"));
    }
    Rng data_rng(11);
    auto tokens = Tensor<double>::from({1, 4, 16}, random_values(data_rng, 64));
    CHECK(dec.decode(tokens, nullptr).data() == tokens.data());
}

TEST_CASE("decoder depths 4 and 12 both construct and run") {
    for (int64_t depth : {int64_t{4}, int64_t{12}}) {
        ParamStore<double> ps;
        Rng rng(12);
        auto dec = CaDecoder<double>::create(ps, 32, 4, depth, 4, false, rng);
        Rng data_rng(13);
        auto tokens = Tensor<double>::from({1, 4, 32}, random_values(data_rng, 128));
        auto img = Tensor<double>::from({1, 4, 32}, random_values(data_rng, 128));
        auto out = dec.decode(tokens, &img);
        CHECK(out.shape() == tokens.shape());
        for (double v : out.data()) CHECK(std::isfinite(v));
    }
}

TEST_CASE("reconstruction head emits one offset triple per group point") {
    ParamStore<double> ps;
    Rng rng(14);
    auto dec = CaDecoder<double>::create(ps, 16, 6, 1, 4, false, rng);
    Rng data_rng(15);
    auto tokens = Tensor<double>::from({2, 4, 16}, random_values(data_rng, 128));
    auto rel = dec.head(tokens);
    CHECK(rel.shape() == Shape{2, 4, 6, 3});
}

TEST_CASE("kernel-size-1 head equals the per-token formulation bitwise") {
    ParamStore<double> ps;
    Rng rng(16);
    auto dec = CaDecoder<double>::create(ps, 16, 6, 1, 4, false, rng);
    Rng data_rng(17);
    auto tokens = Tensor<double>::from({2, 4, 16}, random_values(data_rng, 128));
    auto rel = dec.head(tokens);
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t g = 0; g < 4; ++g) {
            std::vector<double> tok(16);
            for (int64_t c = 0; c < 16; ++c) tok[static_cast<size_t>(c)] = tokens.at({b, g, c});
            auto single = dec.head(Tensor<double>::from({1, 1, 16}, tok));
            for (int64_t j = 0; j < 6; ++j)
                for (int a = 0; a < 3; ++a)
                    CHECK(single.at({0, 0, j, a}) == rel.at({b, g, j, a}));
        }
}

TEST_CASE("zero final head layer predicts every point at its group center") {
    ParamStore<double> ps;
    Rng rng(18);
    auto dec = CaDecoder<double>::create(ps, 16, 6, 1, 4, false, rng);
    set_zero(ps.at("ca_decoder.head.conv2.w"));
    set_zero(ps.at("ca_decoder.head.conv2.b"));
    Rng data_rng(19);
    auto tokens = Tensor<double>::from({1, 4, 16}, random_values(data_rng, 64));
    auto rel = dec.head(tokens);
    for (double v : rel.data()) CHECK(v == 0.0);
}

TEST_CASE("attention export writes a row-stochastic matrix that round-trips") {
    ParamStore<double> ps;
    Rng rng(20);
    auto mha = MultiHeadAttention<double>::create(ps, "cross", 8, 1, rng);
    Rng data_rng(21);
    auto q = Tensor<double>::from({1, 4, 8}, random_values(data_rng, 32));
    auto kv = Tensor<double>::from({1, 4, 8}, random_values(data_rng, 32));
    AttnSink<double> sink;
    mha(q, kv, &sink);
    const std::string path = temp_file("obitonet_attn_test.txt");
    write_attention(path, sink);
    auto file = load_attention(path);
    CHECK(file.layers == 1);
    CHECK(file.heads == 1);
    CHECK(file.g == 4);
    REQUIRE(file.matrices.size() == 1);
    const auto& mat = file.matrix(0, 0);
    REQUIRE(mat.size() == 16);
    for (int64_t row = 0; row < 4; ++row) {
        double sum = 0;
        for (int64_t col = 0; col < 4; ++col) {
            const double v = mat[static_cast<size_t>(row * 4 + col)];
            sum += v;
            CHECK(v == Catch::Approx(sink[0].probs[static_cast<size_t>(row * 4 + col)]).margin(1e-6));
        }
        CHECK(sum == Catch::Approx(1.0).margin(1e-6));
    }
    std::filesystem::remove(path);
}

TEST_CASE("exporting without recorded weights is a contract error") {
    AttnSink<double> empty;
    CHECK_THROWS_AS(write_attention(temp_file("obitonet_attn_none.txt"), empty), ContractError);
}

TEST_CASE("interleaved fusion uses one cross block per decoder layer") {
    ParamStore<double> ps;
    Rng rng(22);
    auto dec = CaDecoder<double>::create(ps, 16, 4, 3, 4, true, rng);
    CHECK(ps.has("ca_decoder.cross0.wq.w"));
    CHECK(ps.has("ca_decoder.cross2.wq.w"));
    Rng data_rng(23);
    auto tokens = Tensor<double>::from({1, 4, 16}, random_values(data_rng, 64));
    auto img = Tensor<double>::from({1, 4, 16}, random_values(data_rng, 64));
    AttnSink<double> sink;
    auto out = dec.decode(tokens, &img, &sink);
    CHECK(out.shape() == tokens.shape());
    CHECK(sink.size() == 3);
}
