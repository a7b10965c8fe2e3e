#pragma once

// Shared network building blocks: linear layers, layer norm, multi-head
// attention and the pre-norm transformer block. Parameters register into a
// ParamStore under a caller-supplied name prefix; registration order fixes
// the initialization stream.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "obitonet/tensor.hpp"

namespace obitonet {

// Init conventions: linear weights and biases are uniform(+-1/sqrt(fan_in)),
// embedding-style tables are normal(0, 0.02).
template <typename T>
void init_uniform_fan_in(Tensor<T>& t, int64_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.mutable_data()) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
void init_normal(Tensor<T>& t, double stddev, Rng& rng) {
    for (auto& v : t.mutable_data()) v = static_cast<T>(rng.normal(0.0, stddev));
}

template <typename T>
struct Linear {
    Tensor<T> w;  // [in, out]
    Tensor<T> b;  // [out]

    static Linear create(ParamStore<T>& ps, const std::string& prefix, int64_t in, int64_t out,
                         Rng& rng) {
        Linear l;
        l.w = ps.create(prefix + ".w", {in, out});
        l.b = ps.create(prefix + ".b", {out});
        init_uniform_fan_in(l.w, in, rng);
        init_uniform_fan_in(l.b, in, rng);
        return l;
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return add_bias(matmul(x, w), b); }
};

template <typename T>
struct LayerNorm {
    Tensor<T> gamma, beta;
    double eps = 1e-5;

    static LayerNorm create(ParamStore<T>& ps, const std::string& prefix, int64_t c) {
        LayerNorm ln;
        ln.gamma = ps.create(prefix + ".gamma", {c});
        ln.beta = ps.create(prefix + ".beta", {c});
        for (auto& v : ln.gamma.mutable_data()) v = T(1);
        return ln;
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return layernorm(x, gamma, beta, eps); }
};

// One recorded attention-probability array: [b, heads, gq, gk] flattened.
template <typename T>
struct AttnRecord {
    int64_t b = 0, heads = 0, gq = 0, gk = 0;
    std::vector<T> probs;
};

template <typename T>
using AttnSink = std::vector<AttnRecord<T>>;

template <typename T>
struct MultiHeadAttention {
    Linear<T> wq, wk, wv, wo;
    int64_t heads = 1;

    static MultiHeadAttention create(ParamStore<T>& ps, const std::string& prefix, int64_t c,
                                     int64_t heads, Rng& rng) {
        MultiHeadAttention a;
        a.heads = heads;
        a.wq = Linear<T>::create(ps, prefix + ".wq", c, c, rng);
        a.wk = Linear<T>::create(ps, prefix + ".wk", c, c, rng);
        a.wv = Linear<T>::create(ps, prefix + ".wv", c, c, rng);
        a.wo = Linear<T>::create(ps, prefix + ".wo", c, c, rng);
        return a;
    }

    // Queries from q_in [B,Gq,C], keys/values from kv_in [B,Gk,C].
    Tensor<T> operator()(const Tensor<T>& q_in, const Tensor<T>& kv_in,
                         AttnSink<T>* sink = nullptr) const {
        if (q_in.rank() != 3 || kv_in.rank() != 3 || q_in.dim(0) != kv_in.dim(0) ||
            q_in.dim(2) != kv_in.dim(2))
            throw DimensionError("attention: tokens " + shape_str(q_in.shape()) + " vs " +
                                 shape_str(kv_in.shape()));
        const int64_t b = q_in.dim(0), gq = q_in.dim(1), gk = kv_in.dim(1), c = q_in.dim(2);
        if (c % heads != 0)
            throw ConfigError("attention: token size " + std::to_string(c) +
                              " not divisible by " + std::to_string(heads) + " heads");
        const int64_t d = c / heads;
        auto split = [&](const Tensor<T>& t, int64_t gg) {
            return transpose(reshape(t, {b, gg, heads, d}), 1, 2);  // [B,h,G,d]
        };
        auto q = split(wq(q_in), gq);
        auto k = split(wk(kv_in), gk);
        auto v = split(wv(kv_in), gk);
        auto scores = scale(matmul(q, transpose(k, 2, 3)), 1.0 / std::sqrt(static_cast<double>(d)));
        auto probs = softmax(scores, 3);  // [B,h,Gq,Gk]
        if (sink) sink->push_back(AttnRecord<T>{b, heads, gq, gk, probs.data()});
        auto ctx = matmul(probs, v);                            // [B,h,Gq,d]
        auto merged = reshape(transpose(ctx, 1, 2), {b, gq, c});
        return wo(merged);
    }
};

// Pre-norm block: x += attn(ln1(x)); x += ffn(ln2(x)); GELU feedforward with
// hidden size 4C.
template <typename T>
struct TransformerBlock {
    LayerNorm<T> ln1, ln2;
    MultiHeadAttention<T> attn;
    Linear<T> fc1, fc2;

    static TransformerBlock create(ParamStore<T>& ps, const std::string& prefix, int64_t c,
                                   int64_t heads, Rng& rng) {
        TransformerBlock blk;
        blk.ln1 = LayerNorm<T>::create(ps, prefix + ".ln1", c);
        blk.attn = MultiHeadAttention<T>::create(ps, prefix + ".attn", c, heads, rng);
        blk.ln2 = LayerNorm<T>::create(ps, prefix + ".ln2", c);
        blk.fc1 = Linear<T>::create(ps, prefix + ".fc1", c, 4 * c, rng);
        blk.fc2 = Linear<T>::create(ps, prefix + ".fc2", 4 * c, c, rng);
        return blk;
    }

    Tensor<T> operator()(Tensor<T> x, AttnSink<T>* sink = nullptr) const {
        auto h = ln1(x);
        x = add(x, attn(h, h, sink));
        x = add(x, fc2(gelu(fc1(ln2(x)))));
        return x;
    }
};

}  // namespace obitonet
