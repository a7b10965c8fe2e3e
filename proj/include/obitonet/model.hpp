#pragma once

// The assembled reconstruction pipeline: group + mask the input cloud,
// encode visible groups, build position-addressed mask queries, tokenize the
// paired image, fuse with cross-attention (stages 2-3; stage 1 bypasses the
// image branch entirely), refine with the self-attention decoder, and map
// every token to M relative offsets around its group center.
//
// Token order matches group order throughout: encoded visible tokens and
// mask queries are scattered back to their original group indices before
// decoding, so output group i always belongs to center i.

#include <cstdint>
#include <string>
#include <vector>

#include "obitonet/ca_decoder.hpp"
#include "obitonet/chamfer.hpp"
#include "obitonet/config.hpp"
#include "obitonet/dataset.hpp"
#include "obitonet/geometry.hpp"
#include "obitonet/image_tokenizer.hpp"
#include "obitonet/nn.hpp"
#include "obitonet/pc_encoder.hpp"
#include "obitonet/tensor.hpp"

namespace obitonet {

template <typename T>
struct TokenizedBatch {
    int64_t b = 0, g = 0, gv = 0, gm = 0, m = 0;
    std::vector<std::vector<int64_t>> visible;  // per item, ascending group indices
    std::vector<std::vector<int64_t>> masked;   // per item, ascending group indices
    std::vector<std::vector<int64_t>> order;    // per item: group index -> row in [vis|mask] concat
    Tensor<T> groups_visible;   // [B, Gv, M, 3] center-relative
    Tensor<T> centers_visible;  // [B, Gv, 3]
    Tensor<T> centers_masked;   // [B, Gm, 3]
    Tensor<T> centers_rep;      // [B, G, M, 3] centers repeated per point
    Tensor<T> patches;          // [B, G, p*p]
    std::vector<GroupedPointCloud> grouped;  // per item
    std::vector<PointCloud> gt;              // per item, full normalized cloud

    int64_t visible_point_count() const { return gv * m; }
    int64_t recon_point_count() const { return g * m; }

    // The cloud the encoder actually sees: the union of visible groups in
    // absolute coordinates (with multiplicity where groups overlap). With
    // nothing masked the input is the original cloud itself.
    PointCloud visible_input_cloud(size_t item) const {
        if (gm == 0) return gt[item];
        PointCloud out;
        out.points.reserve(static_cast<size_t>(gv * m));
        for (int64_t gi : visible[item]) {
            const auto& grp = grouped[item].groups[static_cast<size_t>(gi)];
            const Vec3& c = grouped[item].centers[static_cast<size_t>(gi)];
            for (const Vec3& p : grp) out.points.push_back(vadd(p, c));
        }
        return out;
    }
};

template <typename T>
struct ForwardResult {
    Tensor<T> point_tokens;      // [B, G, C] before fusion
    Tensor<T> decoded;           // [B, G, C] decoder output
    Tensor<T> rel;               // [B, G, M, 3] predicted offsets
    Tensor<T> recon;             // [B, G*M, 3] absolute points
    AttnSink<T> cross_attention; // recorded cross-attention probabilities
};

template <typename T>
struct ForwardOptions {
    int stage = 3;
    bool training = false;
    uint64_t dropout_seed = 0;
    bool record_cross_attention = false;
    AttnSink<T>* pc_sink = nullptr;
    AttnSink<T>* img_sink = nullptr;
    AttnSink<T>* dec_sink = nullptr;
};

template <typename T>
class ObitoNetModel {
  public:
    explicit ObitoNetModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(cfg_.seed);
        const int64_t patch_dim = cfg_.patch_size() * cfg_.patch_size();
        pc_ = PcEncoder<T>::create(params_, cfg_.c, cfg_.pc_depth, cfg_.heads, rng);
        img_ = ImageTokenizer<T>::create(params_, cfg_.g, cfg_.c, patch_dim, cfg_.img_depth,
                                         cfg_.heads, rng);
        dec_ = CaDecoder<T>::create(params_, cfg_.c, cfg_.m, cfg_.dec_depth, cfg_.heads,
                                    cfg_.ca_interleave, rng);
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }
    const PcEncoder<T>& pc_encoder() const { return pc_; }
    const ImageTokenizer<T>& image_tokenizer() const { return img_; }
    const CaDecoder<T>& ca_decoder() const { return dec_; }

    // Pure preprocessing: FPS + KNN grouping, deterministic mask selection,
    // patch extraction. Produces constant tensors only.
    TokenizedBatch<T> tokenize(const std::vector<const Sample*>& batch,
                               const std::vector<uint64_t>& mask_seeds) const {
        if (batch.empty()) throw ContractError("tokenize: empty batch");
        if (mask_seeds.size() != batch.size())
            throw ContractError("tokenize: need one mask seed per sample");
        TokenizedBatch<T> tb;
        tb.b = static_cast<int64_t>(batch.size());
        tb.g = cfg_.g;
        tb.m = cfg_.m;
        const int64_t gm = std::llround(cfg_.mask_ratio * static_cast<double>(cfg_.g));
        tb.gm = gm;
        tb.gv = cfg_.g - gm;
        std::vector<T> groups_v, centers_v, centers_m, centers_rep, patches;
        for (size_t bi = 0; bi < batch.size(); ++bi) {
            const Sample& s = *batch[bi];
            if (s.cloud.size() < cfg_.g)
                throw ConfigError("sample '" + s.id + "' has " + std::to_string(s.cloud.size()) +
                                  " points, fewer than g = " + std::to_string(cfg_.g));
            if (s.cloud.size() < cfg_.m)
                throw ConfigError("sample '" + s.id + "' has fewer points than the group size m");
            if (s.image.h != cfg_.image_size || s.image.w != cfg_.image_size)
                throw ConfigError("sample '" + s.id + "' image is " + std::to_string(s.image.h) +
                                  "x" + std::to_string(s.image.w) + ", config expects " +
                                  std::to_string(cfg_.image_size) + "x" +
                                  std::to_string(cfg_.image_size));
            auto centers = fps(s.cloud, cfg_.g, 0);
            auto grouped = knn_group(s.cloud, centers, cfg_.m);
            auto mask = apply_mask(grouped, MaskSpec{cfg_.mask_ratio, mask_seeds[bi]});
            // order map: group index -> row in the [visible..., masked...] concat
            std::vector<int64_t> order(static_cast<size_t>(cfg_.g));
            for (size_t i = 0; i < mask.visible.size(); ++i)
                order[static_cast<size_t>(mask.visible[i])] = static_cast<int64_t>(i);
            for (size_t i = 0; i < mask.masked.size(); ++i)
                order[static_cast<size_t>(mask.masked[i])] =
                    static_cast<int64_t>(mask.visible.size() + i);
            for (int64_t gi : mask.visible) {
                for (const Vec3& p : grouped.groups[static_cast<size_t>(gi)])
                    for (int a = 0; a < 3; ++a) groups_v.push_back(static_cast<T>(p[static_cast<size_t>(a)]));
                for (int a = 0; a < 3; ++a)
                    centers_v.push_back(static_cast<T>(grouped.centers[static_cast<size_t>(gi)][static_cast<size_t>(a)]));
            }
            for (int64_t gi : mask.masked)
                for (int a = 0; a < 3; ++a)
                    centers_m.push_back(static_cast<T>(grouped.centers[static_cast<size_t>(gi)][static_cast<size_t>(a)]));
            for (int64_t gi = 0; gi < cfg_.g; ++gi)
                for (int64_t j = 0; j < cfg_.m; ++j)
                    for (int a = 0; a < 3; ++a)
                        centers_rep.push_back(static_cast<T>(grouped.centers[static_cast<size_t>(gi)][static_cast<size_t>(a)]));
            auto grid = patchify(s.image, cfg_.g);
            for (const auto& patch : grid.patches)
                for (double v : patch) patches.push_back(static_cast<T>(v));
            tb.visible.push_back(std::move(mask.visible));
            tb.masked.push_back(std::move(mask.masked));
            tb.order.push_back(std::move(order));
            tb.grouped.push_back(std::move(grouped));
            tb.gt.push_back(s.cloud);
        }
        const int64_t patch_dim = cfg_.patch_size() * cfg_.patch_size();
        tb.groups_visible = Tensor<T>::from({tb.b, tb.gv, tb.m, 3}, std::move(groups_v));
        tb.centers_visible = Tensor<T>::from({tb.b, tb.gv, 3}, std::move(centers_v));
        tb.centers_masked = Tensor<T>::from({tb.b, tb.gm, 3}, std::move(centers_m));
        tb.centers_rep = Tensor<T>::from({tb.b, tb.g, tb.m, 3}, std::move(centers_rep));
        tb.patches = Tensor<T>::from({tb.b, tb.g, patch_dim}, std::move(patches));
        return tb;
    }

    ForwardResult<T> forward(const TokenizedBatch<T>& tb, const ForwardOptions<T>& opt) const {
        ForwardResult<T> out;
        // point branch: encode visible groups, then scatter encoded tokens
        // and mask queries back to group order
        auto tok = add(pc_.embed_groups(tb.groups_visible), pc_.pos_embed(tb.centers_visible));
        auto enc = pc_.encode(tok, opt.pc_sink);
        auto cat = tb.gm > 0 ? concat_rows(enc, pc_.mask_queries(tb.centers_masked)) : enc;
        out.point_tokens = gather_rows(cat, tb.order);
        // image branch + fusion (stage 1 trains the point pathway alone)
        AttnSink<T>* cross_sink = opt.record_cross_attention ? &out.cross_attention : nullptr;
        if (opt.stage >= 2) {
            auto img_tok = img_.embed_patches(tb.patches);
            if (opt.training && cfg_.patch_dropout > 0.0)
                img_tok = mul(img_tok, patch_dropout_mask(tb.b, opt.dropout_seed));
            img_tok = img_.encode(img_tok, opt.img_sink);
            out.decoded = dec_.decode(out.point_tokens, &img_tok, cross_sink, opt.dec_sink);
        } else {
            out.decoded = dec_.decode(out.point_tokens, nullptr, nullptr, opt.dec_sink);
        }
        out.rel = dec_.head(out.decoded);
        out.recon = reshape(add(out.rel, tb.centers_rep), {tb.b, tb.g * tb.m, 3});
        return out;
    }

    // Chamfer training loss. Global by default (full reconstruction vs full
    // cloud); the masked-only option scores each hidden group against its
    // ground-truth neighborhood in center-relative coordinates.
    Tensor<T> loss(const ForwardResult<T>& fwd, const TokenizedBatch<T>& tb,
                   std::vector<ChamferResult>* out_results = nullptr) const {
        if (!cfg_.loss_masked_only)
            return chamfer_loss(fwd.recon, tb.gt, cfg_.variant, NnBackend::KdTree, out_results);
        if (tb.gm == 0)
            throw ContractError("loss_masked_only requires a nonzero mask ratio");
        auto rel_rows = reshape(fwd.rel, {tb.b, tb.g, tb.m * 3});
        auto masked_rows = gather_rows(rel_rows, tb.masked);
        auto pred = reshape(masked_rows, {tb.b * tb.gm, tb.m, 3});
        std::vector<PointCloud> gts;
        gts.reserve(static_cast<size_t>(tb.b * tb.gm));
        for (int64_t bi = 0; bi < tb.b; ++bi)
            for (int64_t gi : tb.masked[static_cast<size_t>(bi)]) {
                PointCloud grp;
                grp.points = tb.grouped[static_cast<size_t>(bi)].groups[static_cast<size_t>(gi)];
                gts.push_back(std::move(grp));
            }
        return chamfer_loss(pred, gts, cfg_.variant, NnBackend::KdTree, out_results);
    }

  private:
    // 0/1 rows zeroing round(patch_dropout * G) patches per item; the
    // masked-patch pretext for the image encoder.
    Tensor<T> patch_dropout_mask(int64_t b, uint64_t seed) const {
        const int64_t k = std::llround(cfg_.patch_dropout * static_cast<double>(cfg_.g));
        std::vector<T> mask(static_cast<size_t>(b * cfg_.g * cfg_.c), T(1));
        for (int64_t bi = 0; bi < b; ++bi) {
            std::vector<int64_t> idx(static_cast<size_t>(cfg_.g));
            for (int64_t i = 0; i < cfg_.g; ++i) idx[static_cast<size_t>(i)] = i;
            Rng rng(mix_seed(seed, static_cast<uint64_t>(bi)));
            rng.shuffle(idx);
            for (int64_t i = 0; i < k; ++i)
                for (int64_t cc = 0; cc < cfg_.c; ++cc)
                    mask[static_cast<size_t>((bi * cfg_.g + idx[static_cast<size_t>(i)]) * cfg_.c + cc)] = T(0);
        }
        return Tensor<T>::from({b, cfg_.g, cfg_.c}, std::move(mask));
    }

    ModelConfig cfg_;
    ParamStore<T> params_;
    PcEncoder<T> pc_;
    ImageTokenizer<T> img_;
    CaDecoder<T> dec_;
};

}  // namespace obitonet
