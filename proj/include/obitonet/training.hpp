#pragma once

// Training machinery: the three-stage schedule with parameter freezing,
// the optimization loop, evaluation, and the versioned binary checkpoint
// format.
//
// Stages: 1 trains the point pathway (point encoder + decoder self-attention
// and head) with the image branch bypassed; 2 freezes those and trains the
// image tokenizer plus cross-attention; 3 trains everything. Freezing is
// enforced twice over: frozen parameters stop requiring gradients and the
// optimizer never touches them or their moments.
//
// Checkpoint layout (little-endian):
//   "OBNT" | u32 version | u32 scalar width | u32 stage
//   | u64 len + config text | u64 len + rng state
//   | u64 n_params | per tensor: u32 name len + name, u32 ndim, u64 dims,
//     raw scalars
//   | u8 has_adam | [u64 adam step | per tensor: m scalars, v scalars]
//   | u64 fnv1a checksum of all preceding bytes

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "obitonet/chamfer.hpp"
#include "obitonet/config.hpp"
#include "obitonet/dataset.hpp"
#include "obitonet/model.hpp"
#include "obitonet/tensor.hpp"

namespace obitonet {

// ---------------------------------------------------------------------------
// Stage plans

struct StagePlan {
    int stage = 3;

    bool trains(const std::string& name) const {
        auto starts = [&](const char* prefix) { return name.rfind(prefix, 0) == 0; };
        switch (stage) {
            case 1:
                return starts("pc_encoder.") || starts("ca_decoder.block") ||
                       starts("ca_decoder.head");
            case 2:
                return starts("image_tokenizer.") || starts("ca_decoder.cross");
            case 3:
                return true;
            default:
                throw ConfigError("stage must be 1, 2 or 3, got " + std::to_string(stage));
        }
    }

    template <typename T>
    std::vector<bool> mask(const ParamStore<T>& ps) const {
        std::vector<bool> out(ps.count());
        for (size_t i = 0; i < ps.count(); ++i) out[i] = trains(ps.name(i));
        return out;
    }

    template <typename T>
    void apply(ParamStore<T>& ps) const {
        for (size_t i = 0; i < ps.count(); ++i) ps.tensor(i).set_requires_grad(trains(ps.name(i)));
    }
};

// Fixed per sample id, shared by training and evaluation.
inline uint64_t sample_mask_seed(const std::string& id, uint64_t config_seed) {
    return mix_seed(fnv1a64(id), config_seed);
}

// ---------------------------------------------------------------------------
// Checkpoints

struct CheckpointTensor {
    std::string name;
    Shape shape;
    std::vector<double> data;  // lossless carrier for both scalar widths
};

struct CheckpointData {
    uint32_t version = 0;
    uint32_t scalar_width = 0;
    int32_t stage = 0;
    std::string config_text;
    std::string rng_state;
    std::vector<CheckpointTensor> params;
    bool has_adam = false;
    int64_t adam_step = 0;
    std::vector<std::vector<double>> adam_m, adam_v;
    bool checksum_ok = false;

    ModelConfig config() const { return parse_config_text(config_text); }
};

namespace detail {

constexpr uint32_t kCheckpointVersion = 1;

inline uint64_t fnv1a64_bytes(const char* data, size_t n) {
    uint64_t h = 1469598103934665603ull;
    for (size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 1099511628211ull;
    }
    return h;
}

class ByteWriter {
  public:
    void raw(const void* p, size_t n) { buf_.append(static_cast<const char*>(p), n); }
    void u8(uint8_t v) { raw(&v, 1); }
    void u32(uint32_t v) { raw(&v, 4); }
    void u64(uint64_t v) { raw(&v, 8); }
    void str(const std::string& s) {
        u64(s.size());
        raw(s.data(), s.size());
    }
    const std::string& bytes() const { return buf_; }

  private:
    std::string buf_;
};

class ByteReader {
  public:
    explicit ByteReader(std::string bytes, const std::string& path)
        : buf_(std::move(bytes)), path_(path) {}

    void raw(void* p, size_t n) {
        if (pos_ + n > buf_.size()) throw ParseError(path_ + ": truncated checkpoint file");
        std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }
    uint8_t u8() {
        uint8_t v;
        raw(&v, 1);
        return v;
    }
    uint32_t u32() {
        uint32_t v;
        raw(&v, 4);
        return v;
    }
    uint64_t u64() {
        uint64_t v;
        raw(&v, 8);
        return v;
    }
    std::string str() {
        const uint64_t n = u64();
        if (pos_ + n > buf_.size()) throw ParseError(path_ + ": truncated checkpoint file");
        std::string s(buf_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    size_t pos() const { return pos_; }
    const std::string& bytes() const { return buf_; }

  private:
    std::string buf_;
    std::string path_;
    size_t pos_ = 0;
};

template <typename T>
void write_scalars(ByteWriter& w, const std::vector<T>& v) {
    w.raw(v.data(), v.size() * sizeof(T));
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const ObitoNetModel<T>& model,
                     const AdamState<T>* adam, int stage, const std::string& rng_state) {
    detail::ByteWriter w;
    w.raw("OBNT", 4);
    w.u32(detail::kCheckpointVersion);
    w.u32(static_cast<uint32_t>(sizeof(T)));
    w.u32(static_cast<uint32_t>(stage));
    w.str(serialize_config(model.config()));
    w.str(rng_state);
    const ParamStore<T>& ps = model.params();
    w.u64(ps.count());
    for (size_t i = 0; i < ps.count(); ++i) {
        const std::string& name = ps.name(i);
        const Tensor<T>& t = ps.tensor(i);
        w.u32(static_cast<uint32_t>(name.size()));
        w.raw(name.data(), name.size());
        w.u32(static_cast<uint32_t>(t.shape().size()));
        for (int64_t d : t.shape()) w.u64(static_cast<uint64_t>(d));
        detail::write_scalars(w, t.data());
    }
    w.u8(adam ? 1 : 0);
    if (adam) {
        w.u64(static_cast<uint64_t>(adam->step));
        for (size_t i = 0; i < ps.count(); ++i) {
            detail::write_scalars(w, adam->m[i]);
            detail::write_scalars(w, adam->v[i]);
        }
    }
    const uint64_t checksum = detail::fnv1a64_bytes(w.bytes().data(), w.bytes().size());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write '" + path + "'");
    f.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    f.write(reinterpret_cast<const char*>(&checksum), 8);
}

inline CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "'");
    std::ostringstream os;
    os << f.rdbuf();
    std::string bytes = os.str();
    if (bytes.size() < 12 + 8) throw ParseError(path + ": truncated checkpoint file");
    const uint64_t stored_checksum =
        *reinterpret_cast<const uint64_t*>(bytes.data() + bytes.size() - 8);
    const uint64_t computed =
        detail::fnv1a64_bytes(bytes.data(), bytes.size() - 8);
    bytes.resize(bytes.size() - 8);
    detail::ByteReader r(std::move(bytes), path);
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, "OBNT", 4) != 0) throw ParseError(path + ": bad checkpoint magic");
    CheckpointData ck;
    ck.version = r.u32();
    if (ck.version != detail::kCheckpointVersion)
        throw ParseError(path + ": checkpoint format version " + std::to_string(ck.version) +
                         " is not supported (expected " +
                         std::to_string(detail::kCheckpointVersion) + ")");
    ck.scalar_width = r.u32();
    if (ck.scalar_width != 4 && ck.scalar_width != 8)
        throw ParseError(path + ": bad scalar width " + std::to_string(ck.scalar_width));
    ck.stage = static_cast<int32_t>(r.u32());
    ck.config_text = r.str();
    ck.rng_state = r.str();
    const uint64_t n_params = r.u64();
    auto read_scalars = [&](size_t count) {
        std::vector<double> out(count);
        if (ck.scalar_width == 8) {
            r.raw(out.data(), count * 8);
        } else {
            std::vector<float> tmp(count);
            r.raw(tmp.data(), count * 4);
            for (size_t i = 0; i < count; ++i) out[i] = static_cast<double>(tmp[i]);
        }
        return out;
    };
    for (uint64_t i = 0; i < n_params; ++i) {
        CheckpointTensor t;
        const uint32_t name_len = r.u32();
        t.name.resize(name_len);
        r.raw(t.name.data(), name_len);
        const uint32_t ndim = r.u32();
        for (uint32_t d = 0; d < ndim; ++d) t.shape.push_back(static_cast<int64_t>(r.u64()));
        t.data = read_scalars(static_cast<size_t>(shape_numel(t.shape)));
        ck.params.push_back(std::move(t));
    }
    ck.has_adam = r.u8() != 0;
    if (ck.has_adam) {
        ck.adam_step = static_cast<int64_t>(r.u64());
        for (uint64_t i = 0; i < n_params; ++i) {
            const size_t count = ck.params[i].data.size();
            ck.adam_m.push_back(read_scalars(count));
            ck.adam_v.push_back(read_scalars(count));
        }
    }
    ck.checksum_ok = stored_checksum == computed;
    return ck;
}

// Installs checkpoint parameters (and optimizer state when present) into a
// model of the same configuration. The first mismatching tensor is reported
// with both shapes.
template <typename T>
void apply_checkpoint(const CheckpointData& ck, ObitoNetModel<T>& model, AdamState<T>* adam,
                      std::string* rng_state) {
    if (ck.scalar_width != sizeof(T))
        throw ConfigError("checkpoint precision (" +
                          std::string(ck.scalar_width == 8 ? "wide" : "standard") +
                          ") does not match the model precision");
    ParamStore<T>& ps = model.params();
    if (ck.params.size() != ps.count())
        throw ConfigError("checkpoint holds " + std::to_string(ck.params.size()) +
                          " tensors, model expects " + std::to_string(ps.count()));
    for (size_t i = 0; i < ps.count(); ++i) {
        const CheckpointTensor& t = ck.params[i];
        if (t.name != ps.name(i) || t.shape != ps.tensor(i).shape())
            throw ConfigError("checkpoint/model mismatch at tensor '" + t.name + "' " +
                              shape_str(t.shape) + " vs '" + ps.name(i) + "' " +
                              shape_str(ps.tensor(i).shape()));
        auto& dst = ps.tensor(i).mutable_data();
        for (size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(t.data[j]);
    }
    if (adam) {
        adam->init_like(ps);
        if (ck.has_adam) {
            adam->step = ck.adam_step;
            for (size_t i = 0; i < ps.count(); ++i) {
                for (size_t j = 0; j < adam->m[i].size(); ++j) {
                    adam->m[i][j] = static_cast<T>(ck.adam_m[i][j]);
                    adam->v[i][j] = static_cast<T>(ck.adam_v[i][j]);
                }
            }
        }
    }
    if (rng_state) *rng_state = ck.rng_state;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalRow {
    std::string id;
    double chamfer_l2sq = 0.0;
    double chamfer_l1 = 0.0;
    int64_t visible_points = 0;
    int64_t recon_points = 0;
};

// Deterministic per-sample evaluation. Masking is fixed per sample id. With
// identity_bypass the network is skipped and the visible points are returned
// verbatim (a plumbing check: mask_ratio 0 must then score exactly 0).
template <typename T>
std::vector<EvalRow> evaluate(ObitoNetModel<T>& model, const Dataset& ds, int stage,
                              bool identity_bypass = false) {
    const ModelConfig& cfg = model.config();
    std::vector<EvalRow> rows;
    rows.reserve(ds.samples.size());
    for (const Sample& s : ds.samples) {
        auto tb = model.tokenize({&s}, {sample_mask_seed(s.id, cfg.seed)});
        EvalRow row;
        row.id = s.id;
        row.visible_points = tb.visible_point_count();
        PointCloud recon;
        if (identity_bypass) {
            recon = tb.visible_input_cloud(0);
        } else {
            ForwardOptions<T> opt;
            opt.stage = stage;
            opt.training = false;
            auto fwd = model.forward(tb, opt);
            const auto& rv = fwd.recon.data();
            recon.points.resize(static_cast<size_t>(tb.recon_point_count()));
            for (int64_t i = 0; i < tb.recon_point_count(); ++i)
                recon.points[static_cast<size_t>(i)] = {static_cast<double>(rv[static_cast<size_t>(3 * i)]),
                                                        static_cast<double>(rv[static_cast<size_t>(3 * i + 1)]),
                                                        static_cast<double>(rv[static_cast<size_t>(3 * i + 2)])};
            // upsampling contract: a 2/3 mask on G divisible by 3 rebuilds
            // exactly three points per visible input point
            if (cfg.g % 3 == 0 && tb.gm == 2 * cfg.g / 3 &&
                tb.recon_point_count() != 3 * tb.visible_point_count())
                throw ContractError("upsampling contract violated for sample '" + s.id + "'");
        }
        row.recon_points = static_cast<int64_t>(recon.points.size());
        row.chamfer_l2sq = chamfer(recon, tb.gt[0], ChamferVariant::L2Squared).loss;
        row.chamfer_l1 = chamfer(recon, tb.gt[0], ChamferVariant::L1).loss;
        rows.push_back(std::move(row));
    }
    return rows;
}

inline void write_eval_csv(const std::string& path, const std::vector<EvalRow>& rows) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write '" + path + "'");
    f << "sample_id,chamfer_l2sq,chamfer_l1\n";
    for (const auto& r : rows)
        f << r.id << "," << fmt_scalar(r.chamfer_l2sq) << "," << fmt_scalar(r.chamfer_l1) << "\n";
}

// ---------------------------------------------------------------------------
// Trainer

template <typename T>
class Trainer {
  public:
    explicit Trainer(ObitoNetModel<T>& model)
        : model_(model), rng_(model.config().seed) {
        const ModelConfig& cfg = model.config();
        adam_.lr = cfg.lr;
        adam_.beta1 = cfg.beta1;
        adam_.beta2 = cfg.beta2;
        adam_.eps = cfg.eps;
        adam_.init_like(model.params());
    }

    AdamState<T>& adam() { return adam_; }
    Rng& rng() { return rng_; }

    // One optimization step on a batch. Frozen parameters are untouched
    // bitwise; a non-finite loss aborts with the first offending tensor.
    double train_step(const std::vector<const Sample*>& batch, const StagePlan& plan,
                      uint64_t epoch = 0) {
        const ModelConfig& cfg = model_.config();
        std::vector<uint64_t> seeds;
        seeds.reserve(batch.size());
        for (const Sample* s : batch) seeds.push_back(sample_mask_seed(s->id, cfg.seed));
        auto tb = model_.tokenize(batch, seeds);
        model_.params().zero_grads();
        Tape<T> tape;
        ForwardOptions<T> opt;
        opt.stage = plan.stage;
        opt.training = true;
        opt.dropout_seed = mix_seed(cfg.seed, mix_seed(epoch, 0x9d0f));
        auto fwd = model_.forward(tb, opt);
        auto loss = model_.loss(fwd, tb);
        const double loss_value = static_cast<double>(loss.item());
        if (!std::isfinite(loss_value)) {
            const std::string where = tape.first_nonfinite();
            throw NumericError("training aborted: non-finite loss; first non-finite tensor: " +
                               (where.empty() ? std::string("<loss only>") : where));
        }
        tape.backward(loss.node());
        adam_step(model_.params(), adam_, plan.mask(model_.params()));
        return loss_value;
    }

    struct ScheduleResult {
        std::vector<double> epoch_losses;
        double final_loss = 0.0;
    };

    // Runs `epochs` epochs of one stage over the dataset, appending
    // "epoch,stage,loss" lines to the log and checkpointing every
    // checkpoint_every epochs and at the end.
    ScheduleResult run_schedule(const Dataset& ds, int stage, int64_t epochs,
                                const std::string& log_path, const std::string& ckpt_path,
                                std::ostream* info = nullptr) {
        const ModelConfig& cfg = model_.config();
        if (ds.samples.empty()) throw ConfigError("dataset is empty");
        StagePlan plan{stage};
        plan.apply(model_.params());
        std::ofstream log;
        if (!log_path.empty()) {
            const bool fresh = !std::ifstream(log_path).good();
            log.open(log_path, std::ios::app);
            if (!log) throw IoError("cannot write '" + log_path + "'");
            if (fresh) log << "epoch,stage,loss\n";
        }
        ScheduleResult result;
        for (int64_t epoch = 1; epoch <= epochs; ++epoch) {
            std::vector<size_t> order(ds.samples.size());
            for (size_t i = 0; i < order.size(); ++i) order[i] = i;
            Rng epoch_rng(mix_seed(cfg.seed, mix_seed(static_cast<uint64_t>(epoch),
                                                      static_cast<uint64_t>(stage))));
            epoch_rng.shuffle(order);
            double total = 0.0;
            for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
                std::vector<const Sample*> batch;
                for (size_t i = start; i < std::min(order.size(), start + static_cast<size_t>(cfg.batch_size)); ++i)
                    batch.push_back(&ds.samples[order[i]]);
                total += train_step(batch, plan, static_cast<uint64_t>(epoch)) *
                         static_cast<double>(batch.size());
            }
            const double mean_loss = total / static_cast<double>(ds.samples.size());
            result.epoch_losses.push_back(mean_loss);
            result.final_loss = mean_loss;
            if (log) log << epoch << "," << stage << "," << fmt_scalar(mean_loss) << "\n";
            if (info)
                *info << "epoch " << epoch << "/" << epochs << " stage " << stage << " loss "
                      << fmt_scalar(mean_loss) << " (x1000: " << fmt_scalar(mean_loss * 1000.0)
                      << ")\n";
            if (!ckpt_path.empty() && epoch % cfg.checkpoint_every == 0 && epoch != epochs)
                save_checkpoint(ckpt_path, model_, &adam_, stage, rng_.save_state());
        }
        if (!ckpt_path.empty())
            save_checkpoint(ckpt_path, model_, &adam_, stage, rng_.save_state());
        return result;
    }

  private:
    ObitoNetModel<T>& model_;
    AdamState<T> adam_;
    Rng rng_;
};

}  // namespace obitonet
