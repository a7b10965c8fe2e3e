#pragma once

// Fusion and reconstruction: cross-attention with point tokens as queries
// and image tokens as keys/values (residual from the point tokens), a
// pre-norm self-attention decoder stack, and the two kernel-size-1 conv
// layers mapping each token to M relative 3D offsets.
//
// Cross-attention probabilities can be recorded during the forward pass and
// written to the "ATTN v1" text format for plotting.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "obitonet/nn.hpp"
#include "obitonet/tensor.hpp"

namespace obitonet {

template <typename T>
struct CaDecoder {
    std::vector<MultiHeadAttention<T>> crosses;  // 1, or dec_depth when interleaved
    std::vector<TransformerBlock<T>> blocks;
    Linear<T> head1;  // C -> 2C, kernel-size-1 conv as a per-token linear map
    Linear<T> head2;  // 2C -> M*3
    int64_t c = 0, m = 0;
    bool interleave = false;

    static CaDecoder create(ParamStore<T>& ps, int64_t c, int64_t m, int64_t depth, int64_t heads,
                            bool interleave, Rng& rng) {
        CaDecoder d;
        d.c = c;
        d.m = m;
        d.interleave = interleave;
        const int64_t n_cross = interleave ? depth : 1;
        for (int64_t i = 0; i < n_cross; ++i)
            d.crosses.push_back(MultiHeadAttention<T>::create(
                ps, "ca_decoder.cross" + std::to_string(i), c, heads, rng));
        for (int64_t i = 0; i < depth; ++i)
            d.blocks.push_back(TransformerBlock<T>::create(
                ps, "ca_decoder.block" + std::to_string(i), c, heads, rng));
        d.head1 = Linear<T>::create(ps, "ca_decoder.head.conv1", c, 2 * c, rng);
        d.head2 = Linear<T>::create(ps, "ca_decoder.head.conv2", 2 * c, m * 3, rng);
        return d;
    }

    // One cross-attention application with a residual from the point tokens.
    Tensor<T> fuse(const Tensor<T>& point_tokens, const Tensor<T>& image_tokens, size_t layer,
                   AttnSink<T>* sink = nullptr) const {
        return add(point_tokens, crosses[layer](point_tokens, image_tokens, sink));
    }

    // Full fusion + refinement. With image tokens absent (stage-1 bypass)
    // the decoder runs on the point tokens alone.
    Tensor<T> decode(Tensor<T> tokens, const Tensor<T>* image_tokens,
                     AttnSink<T>* cross_sink = nullptr, AttnSink<T>* self_sink = nullptr) const {
        if (image_tokens && !interleave) tokens = fuse(tokens, *image_tokens, 0, cross_sink);
        for (size_t i = 0; i < blocks.size(); ++i) {
            if (image_tokens && interleave) tokens = fuse(tokens, *image_tokens, i, cross_sink);
            tokens = blocks[i](tokens, self_sink);
        }
        return tokens;
    }

    // tokens [B, G, C] -> relative offsets [B, G, M, 3]
    Tensor<T> head(const Tensor<T>& tokens) const {
        const int64_t b = tokens.dim(0), g = tokens.dim(1);
        auto h = relu(head1(tokens));
        auto o = head2(h);  // [B, G, M*3]
        return reshape(o, {b, g, m, 3});
    }
};

// ---------------------------------------------------------------------------
// Attention matrix file: "ATTN v1 layers=L heads=H G=N" followed by L*H
// row-stochastic N x N matrices (layer-major, then head-major), one matrix
// row per line. Batch item 0 is exported.

struct AttnFile {
    int64_t layers = 0, heads = 0, g = 0;
    std::vector<std::vector<double>> matrices;  // layers*heads entries of g*g

    const std::vector<double>& matrix(int64_t layer, int64_t head) const {
        return matrices[static_cast<size_t>(layer * heads + head)];
    }
};

template <typename T>
void write_attention(const std::string& path, const std::vector<AttnRecord<T>>& records) {
    if (records.empty())
        throw ContractError("write_attention: no attention weights were recorded; "
                            "run the forward pass with export enabled");
    const int64_t heads = records[0].heads, g = records[0].gq;
    for (const auto& r : records)
        if (r.heads != heads || r.gq != g || r.gk != g)
            throw ContractError("write_attention: inconsistent attention shapes across layers");
    std::ofstream f(path);
    if (!f) throw IoError("cannot write '" + path + "'");
    f << "ATTN v1 layers=" << records.size() << " heads=" << heads << " G=" << g << "\n";
    for (const auto& r : records) {
        for (int64_t h = 0; h < heads; ++h) {
            const int64_t base = h * g * g;  // batch item 0
            for (int64_t row = 0; row < g; ++row) {
                for (int64_t col = 0; col < g; ++col) {
                    if (col) f << " ";
                    f << fmt_scalar(static_cast<double>(
                        r.probs[static_cast<size_t>(base + row * g + col)]));
                }
                f << "\n";
            }
        }
    }
}

inline AttnFile load_attention(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(f, line)) throw ParseError(path + ": empty file");
    AttnFile out;
    {
        std::istringstream is(line);
        std::string magic, v1, kv;
        is >> magic >> v1;
        if (magic != "ATTN" || v1 != "v1") throw ParseError(path + ": not an ATTN v1 file");
        while (is >> kv) {
            const size_t eq = kv.find('=');
            if (eq == std::string::npos) throw ParseError(path + ": bad header field '" + kv + "'");
            const std::string key = kv.substr(0, eq);
            const int64_t val = std::stoll(kv.substr(eq + 1));
            if (key == "layers") out.layers = val;
            else if (key == "heads") out.heads = val;
            else if (key == "G") out.g = val;
            else throw ParseError(path + ": unknown header field '" + key + "'");
        }
    }
    if (out.layers < 1 || out.heads < 1 || out.g < 1)
        throw ParseError(path + ": incomplete header");
    out.matrices.assign(static_cast<size_t>(out.layers * out.heads), {});
    for (auto& mat : out.matrices) {
        mat.reserve(static_cast<size_t>(out.g * out.g));
        for (int64_t row = 0; row < out.g; ++row) {
            if (!std::getline(f, line)) throw ParseError(path + ": truncated matrix data");
            std::istringstream is(line);
            double v;
            int64_t count = 0;
            while (is >> v) {
                mat.push_back(v);
                ++count;
            }
            if (count != out.g)
                throw ParseError(path + ": expected " + std::to_string(out.g) +
                                 " values per row, got " + std::to_string(count));
        }
    }
    return out;
}

}  // namespace obitonet
