#pragma once

// Point branch: permutation-invariant group embedding (shared per-point MLP
// with channel max-pooling), center positional embedding, a transformer
// encoder over the visible tokens only, and learned mask queries for the
// hidden groups. Masked groups never reach the encoder; their queries are
// assembled from the mask token and their center embedding alone.

#include <cstdint>
#include <string>
#include <vector>

#include "obitonet/nn.hpp"
#include "obitonet/tensor.hpp"

namespace obitonet {

template <typename T>
struct PcEncoder {
    Linear<T> group_l1;   // 3 -> 64, shared across points
    Linear<T> group_l2;   // 64 -> 128
    Linear<T> group_proj; // 128 -> C after max-pool
    Linear<T> pos_l1;     // 3 -> 128
    Linear<T> pos_l2;     // 128 -> C
    Tensor<T> mask_token; // [C], shared across masked positions
    std::vector<TransformerBlock<T>> blocks;
    int64_t c = 0;

    static PcEncoder create(ParamStore<T>& ps, int64_t c, int64_t depth, int64_t heads, Rng& rng) {
        PcEncoder pe;
        pe.c = c;
        pe.group_l1 = Linear<T>::create(ps, "pc_encoder.grouper.l1", 3, 64, rng);
        pe.group_l2 = Linear<T>::create(ps, "pc_encoder.grouper.l2", 64, 128, rng);
        pe.group_proj = Linear<T>::create(ps, "pc_encoder.grouper.proj", 128, c, rng);
        pe.pos_l1 = Linear<T>::create(ps, "pc_encoder.pos.l1", 3, 128, rng);
        pe.pos_l2 = Linear<T>::create(ps, "pc_encoder.pos.l2", 128, c, rng);
        pe.mask_token = ps.create("pc_encoder.mask_token", {c});
        init_normal(pe.mask_token, 0.02, rng);
        for (int64_t i = 0; i < depth; ++i)
            pe.blocks.push_back(TransformerBlock<T>::create(
                ps, "pc_encoder.block" + std::to_string(i), c, heads, rng));
        return pe;
    }

    // groups: [B, G, M, 3] center-relative -> [B, G, C]. The shared MLP is
    // applied per point and max-pooled over the M axis, so the embedding is
    // exactly permutation-invariant within each group.
    Tensor<T> embed_groups(const Tensor<T>& groups) const {
        if (groups.rank() != 4 || groups.dim(3) != 3)
            throw ConfigError("embed_groups: expected [B,G,M,3], got " + shape_str(groups.shape()));
        auto f = relu(group_l1(groups));   // [B,G,M,64]
        f = group_l2(f);                   // [B,G,M,128]
        auto pooled = max_axis(f, 2);      // [B,G,128]
        return group_proj(pooled);         // [B,G,C]
    }

    // centers: [B, K, 3] absolute -> [B, K, C]
    Tensor<T> pos_embed(const Tensor<T>& centers) const {
        if (centers.rank() != 3 || centers.dim(2) != 3)
            throw ConfigError("pos_embed: expected [B,K,3], got " + shape_str(centers.shape()));
        return pos_l2(gelu(pos_l1(centers)));
    }

    // Self-attention over the visible tokens only.
    Tensor<T> encode(Tensor<T> tokens, AttnSink<T>* sink = nullptr) const {
        for (const auto& blk : blocks) tokens = blk(tokens, sink);
        return tokens;
    }

    // Position-addressed queries for hidden groups: shared mask token plus
    // the center's positional embedding.
    Tensor<T> mask_queries(const Tensor<T>& masked_centers) const {
        const int64_t b = masked_centers.dim(0), gm = masked_centers.dim(1);
        return add(expand_vec(mask_token, b, gm), pos_embed(masked_centers));
    }
};

}  // namespace obitonet
