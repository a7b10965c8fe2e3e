#pragma once

// Image branch: non-overlapping patch tokenization and a small trainable
// transformer encoder. Token count always equals the point-group count G so
// the fusion stage sees matched sequences; there is no CLS token.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "obitonet/dataset.hpp"
#include "obitonet/nn.hpp"
#include "obitonet/tensor.hpp"

namespace obitonet {

struct PatchGrid {
    int64_t p = 0;                            // patch side in pixels
    int64_t grid = 0;                         // sqrt(G)
    std::vector<std::vector<double>> patches; // G vectors of p*p pixels, row-major patch order
};

// Splits a square image into G = grid^2 non-overlapping p x p patches with
// p = H / sqrt(G). Patch order is row-major over the grid; pixels are
// row-major within each patch.
inline PatchGrid patchify(const Image& img, int64_t g) {
    if (img.h != img.w)
        throw ConfigError("patchify: image must be square, got " + std::to_string(img.h) + "x" +
                          std::to_string(img.w));
    const int64_t grid = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(g))));
    if (grid * grid != g) {
        const int64_t below = static_cast<int64_t>(std::floor(std::sqrt(static_cast<double>(g))));
        throw ConfigError("patchify: g must be a perfect square, got " + std::to_string(g) +
                          " (nearest valid: " + std::to_string(below * below) + ", " +
                          std::to_string((below + 1) * (below + 1)) + ")");
    }
    if (img.h % grid != 0)
        throw ConfigError("patchify: image side " + std::to_string(img.h) +
                          " is not divisible by sqrt(g) = " + std::to_string(grid) +
                          "; valid image sides are multiples of " + std::to_string(grid));
    PatchGrid out;
    out.grid = grid;
    out.p = img.h / grid;
    out.patches.resize(static_cast<size_t>(g));
    for (int64_t pr = 0; pr < grid; ++pr)
        for (int64_t pc = 0; pc < grid; ++pc) {
            auto& patch = out.patches[static_cast<size_t>(pr * grid + pc)];
            patch.reserve(static_cast<size_t>(out.p * out.p));
            for (int64_t py = 0; py < out.p; ++py)
                for (int64_t px = 0; px < out.p; ++px)
                    patch.push_back(img.at(pr * out.p + py, pc * out.p + px));
        }
    return out;
}

template <typename T>
struct ImageTokenizer {
    Linear<T> patch_proj;  // p*p -> C
    Tensor<T> pos_embed;   // [G, C], learned per (row, col) cell
    std::vector<TransformerBlock<T>> blocks;
    int64_t g = 0, c = 0, patch_dim = 0;

    static ImageTokenizer create(ParamStore<T>& ps, int64_t g, int64_t c, int64_t patch_dim,
                                 int64_t depth, int64_t heads, Rng& rng) {
        ImageTokenizer it;
        it.g = g;
        it.c = c;
        it.patch_dim = patch_dim;
        it.patch_proj = Linear<T>::create(ps, "image_tokenizer.patch", patch_dim, c, rng);
        it.pos_embed = ps.create("image_tokenizer.pos_embed", {g, c});
        init_normal(it.pos_embed, 0.02, rng);
        for (int64_t i = 0; i < depth; ++i)
            it.blocks.push_back(TransformerBlock<T>::create(
                ps, "image_tokenizer.block" + std::to_string(i), c, heads, rng));
        return it;
    }

    // patches: [B, G, p*p] -> tokens [B, G, C] with positional embeddings added.
    Tensor<T> embed_patches(const Tensor<T>& patches) const {
        if (patches.rank() != 3 || patches.dim(1) != g || patches.dim(2) != patch_dim)
            throw ConfigError("embed_patches: expected [B," + std::to_string(g) + "," +
                              std::to_string(patch_dim) + "], got " + shape_str(patches.shape()));
        return add_table(patch_proj(patches), pos_embed);
    }

    Tensor<T> encode(Tensor<T> tokens, AttnSink<T>* sink = nullptr) const {
        for (const auto& blk : blocks) tokens = blk(tokens, sink);
        return tokens;
    }
};

}  // namespace obitonet
