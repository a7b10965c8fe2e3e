#pragma once

// Command implementations behind the CLI binary. Kept header-side so the
// test suite can drive every command in-process. Each command prints its
// fully resolved configuration before doing any work and is deterministic
// given its flags and seeds.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "obitonet/ca_decoder.hpp"
#include "obitonet/config.hpp"
#include "obitonet/dataset.hpp"
#include "obitonet/model.hpp"
#include "obitonet/selftest.hpp"
#include "obitonet/training.hpp"

namespace obitonet {

namespace detail {

inline std::string zero_pad(int64_t v, int width) {
    std::ostringstream os;
    os << std::setw(width) << std::setfill('0') << v;
    return os.str();
}

inline void print_config(const ModelConfig& cfg, std::ostream& out) {
    std::istringstream is(serialize_config(cfg));
    std::string line;
    while (std::getline(is, line)) out << "[config] " << line << "\n";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// dataset: synthesize paired clouds + depth renders + manifest

struct DatasetCmd {
    std::string out_dir;
    std::vector<std::string> shapes{"sphere"};
    int64_t n = 1024;
    int64_t count = 8;
    uint64_t seed = 1;
    int64_t image_size = 64;
    std::string view = "+z";
};

inline int cmd_dataset(const DatasetCmd& cmd, std::ostream& out) {
    if (cmd.out_dir.empty()) throw ConfigError("dataset: --out directory is required");
    if (cmd.count < 1) throw ConfigError("dataset: --count must be positive");
    if (cmd.shapes.empty()) throw ConfigError("dataset: --shapes must name at least one shape");
    const ViewAxis view = parse_view(cmd.view);
    std::vector<ShapeKind> kinds;
    for (const auto& s : cmd.shapes) kinds.push_back(parse_shape_kind(s));
    out << "[config] command = dataset\n[config] out = " << cmd.out_dir
        << "\n[config] n = " << cmd.n << "\n[config] count = " << cmd.count
        << "\n[config] seed = " << cmd.seed << "\n[config] image_size = " << cmd.image_size
        << "\n[config] view = " << cmd.view << "\n";
    std::filesystem::create_directories(cmd.out_dir);
    std::vector<ManifestEntry> entries;
    for (int64_t i = 0; i < cmd.count; ++i) {
        const ShapeKind kind = kinds[static_cast<size_t>(i) % kinds.size()];
        const uint64_t sample_seed = mix_seed(cmd.seed, static_cast<uint64_t>(i));
        const std::string id = shape_kind_name(kind) + "_" + detail::zero_pad(i, 4);
        auto cloud = synth_shape(kind, cmd.n, sample_seed);
        auto image = render_projection(cloud, cmd.image_size, cmd.image_size, view);
        const std::string cloud_file = id + ".xyz";
        const std::string image_file = id + ".pgm";
        save_xyz((std::filesystem::path(cmd.out_dir) / cloud_file).string(), cloud);
        save_pgm((std::filesystem::path(cmd.out_dir) / image_file).string(), image);
        entries.push_back({id, shape_kind_name(kind), sample_seed, cmd.n, cmd.view, cloud_file,
                           image_file});
    }
    write_manifest(cmd.out_dir, entries);
    out << "wrote " << entries.size() << " samples to " << cmd.out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainCmd {
    std::string data_dir;
    std::string config_file;
    std::string resume;
    std::string out_ckpt;
    std::string log_file;  // default: out_ckpt + ".log"
    int stage = 3;
    std::vector<std::pair<std::string, std::string>> overrides;  // flags > file > defaults
};

namespace detail {

template <typename T>
int run_train(const ModelConfig& cfg, const TrainCmd& cmd, const Dataset& ds, std::ostream& out) {
    ObitoNetModel<T> model(cfg);
    Trainer<T> trainer(model);
    const std::string log_path = cmd.log_file.empty() ? cmd.out_ckpt + ".log" : cmd.log_file;
    if (!cmd.resume.empty()) {
        auto ck = load_checkpoint(cmd.resume);
        if (!ck.checksum_ok)
            out << "warning: checkpoint '" << cmd.resume
                << "' failed its content checksum (file may be corrupted)\n";
        std::string rng_state;
        apply_checkpoint(ck, model, &trainer.adam(), &rng_state);
        if (!rng_state.empty()) trainer.rng().load_state(rng_state);
        if (cmd.stage < ck.stage)
            out << "warning: resuming stage " << cmd.stage << " from a stage-" << ck.stage
                << " checkpoint; stages ordinarily run in nondecreasing order\n";
        out << "resumed from " << cmd.resume << " (stage " << ck.stage << ")\n";
    } else if (cmd.stage == 2) {
        const std::string note =
            "stage 2 without a stage-1 checkpoint (ablation run: the frozen point pathway "
            "is untrained)";
        out << "warning: " << note << "\n";
        std::ofstream log(log_path, std::ios::app);
        if (log && log.tellp() == 0) log << "epoch,stage,loss\n";
        if (log) log << "# warning: " << note << "\n";
    }
    auto result = trainer.run_schedule(ds, cmd.stage, cfg.epochs, log_path, cmd.out_ckpt, &out);
    if (!result.epoch_losses.empty())
        out << "final loss " << fmt_scalar(result.final_loss) << " (x1000: "
            << fmt_scalar(result.final_loss * 1000.0) << ")\n";
    out << "checkpoint written to " << cmd.out_ckpt << "\n";
    return 0;
}

}  // namespace detail

inline int cmd_train(const TrainCmd& cmd, std::ostream& out) {
    if (cmd.data_dir.empty()) throw ConfigError("train: --data directory is required");
    if (cmd.out_ckpt.empty()) throw ConfigError("train: --out checkpoint path is required");
    if (cmd.stage < 1 || cmd.stage > 3) throw ConfigError("train: --stage must be 1, 2 or 3");
    ModelConfig cfg;
    if (!cmd.config_file.empty()) cfg = load_config_file(cmd.config_file);
    for (const auto& [k, v] : cmd.overrides) config_set(cfg, k, v);
    cfg.validate();
    out << "[config] command = train\n[config] stage = " << cmd.stage << "\n";
    detail::print_config(cfg, out);
    Dataset ds = load_dataset(cmd.data_dir);
    if (cfg.precision == Precision::Wide) return detail::run_train<double>(cfg, cmd, ds, out);
    return detail::run_train<float>(cfg, cmd, ds, out);
}

// ---------------------------------------------------------------------------
// reconstruct

struct ReconstructCmd {
    std::string ckpt;
    std::string cloud_file;
    std::string image_file;
    std::string out_file;
    std::string attn_file;    // optional
    std::string masked_out;   // default: out_file + ".masked.xyz"
    uint64_t mask_seed = 0;
};

namespace detail {

template <typename T>
int run_reconstruct(const CheckpointData& ck, const ReconstructCmd& cmd, std::ostream& out) {
    const ModelConfig cfg = ck.config();
    ObitoNetModel<T> model(cfg);
    apply_checkpoint(ck, model, static_cast<AdamState<T>*>(nullptr), nullptr);
    Sample s;
    s.id = std::filesystem::path(cmd.cloud_file).stem().string();
    {
        PointCloud raw = cmd.cloud_file.size() > 4 &&
                                 cmd.cloud_file.substr(cmd.cloud_file.size() - 4) == ".ply"
                             ? load_ply(cmd.cloud_file)
                             : load_xyz(cmd.cloud_file);
        s.cloud = normalize_unit_sphere(raw).first;
    }
    s.image = load_pgm(cmd.image_file);
    auto tb = model.tokenize({&s}, {cmd.mask_seed});
    ForwardOptions<T> opt;
    opt.stage = ck.stage;
    opt.record_cross_attention = !cmd.attn_file.empty();
    auto fwd = model.forward(tb, opt);
    PointCloud recon;
    const auto& rv = fwd.recon.data();
    for (int64_t i = 0; i < tb.recon_point_count(); ++i)
        recon.points.push_back({static_cast<double>(rv[static_cast<size_t>(3 * i)]),
                                static_cast<double>(rv[static_cast<size_t>(3 * i + 1)]),
                                static_cast<double>(rv[static_cast<size_t>(3 * i + 2)])});
    save_xyz(cmd.out_file, recon);
    const std::string masked_path =
        cmd.masked_out.empty() ? cmd.out_file + ".masked.xyz" : cmd.masked_out;
    save_xyz(masked_path, tb.visible_input_cloud(0));
    out << "reconstructed " << recon.size() << " points (" << tb.gv << " visible groups of "
        << tb.g << ", " << tb.m << " points each)\n";
    out << "wrote " << cmd.out_file << " and " << masked_path << "\n";
    if (!cmd.attn_file.empty()) {
        write_attention(cmd.attn_file, fwd.cross_attention);
        out << "wrote cross-attention weights to " << cmd.attn_file << "\n";
    }
    return 0;
}

}  // namespace detail

inline int cmd_reconstruct(const ReconstructCmd& cmd, std::ostream& out) {
    if (cmd.ckpt.empty() || cmd.cloud_file.empty() || cmd.image_file.empty() ||
        cmd.out_file.empty())
        throw ConfigError("reconstruct: --ckpt, --cloud, --image and --out are required");
    auto ck = load_checkpoint(cmd.ckpt);
    if (!ck.checksum_ok)
        out << "warning: checkpoint '" << cmd.ckpt
            << "' failed its content checksum (file may be corrupted)\n";
    const ModelConfig cfg = ck.config();
    out << "[config] command = reconstruct\n[config] stage = " << ck.stage
        << "\n[config] mask_seed = " << cmd.mask_seed << "\n";
    detail::print_config(cfg, out);
    if (ck.scalar_width == 8) return detail::run_reconstruct<double>(ck, cmd, out);
    return detail::run_reconstruct<float>(ck, cmd, out);
}

// ---------------------------------------------------------------------------
// eval

struct EvalCmd {
    std::string ckpt;
    std::string data_dir;
    std::string out_file;
    bool identity_bypass = false;  // debug: skip the network, emit visible input
};

namespace detail {

template <typename T>
int run_eval(const CheckpointData& ck, const EvalCmd& cmd, std::ostream& out) {
    const ModelConfig cfg = ck.config();
    ObitoNetModel<T> model(cfg);
    apply_checkpoint(ck, model, static_cast<AdamState<T>*>(nullptr), nullptr);
    Dataset ds = load_dataset(cmd.data_dir);
    auto rows = evaluate(model, ds, ck.stage, cmd.identity_bypass);
    write_eval_csv(cmd.out_file, rows);
    double mean_l2 = 0, mean_l1 = 0;
    for (const auto& r : rows) {
        mean_l2 += r.chamfer_l2sq;
        mean_l1 += r.chamfer_l1;
    }
    mean_l2 /= static_cast<double>(rows.size());
    mean_l1 /= static_cast<double>(rows.size());
    out << "evaluated " << rows.size() << " samples\n";
    out << "mean chamfer_l2sq " << fmt_scalar(mean_l2) << " (x1000: " << fmt_scalar(mean_l2 * 1000.0)
        << ")\n";
    out << "mean chamfer_l1 " << fmt_scalar(mean_l1) << " (x1000: " << fmt_scalar(mean_l1 * 1000.0)
        << ")\n";
    out << "wrote " << cmd.out_file << "\n";
    return 0;
}

}  // namespace detail

inline int cmd_eval(const EvalCmd& cmd, std::ostream& out) {
    if (cmd.ckpt.empty() || cmd.data_dir.empty() || cmd.out_file.empty())
        throw ConfigError("eval: --ckpt, --data and --out are required");
    auto ck = load_checkpoint(cmd.ckpt);
    if (!ck.checksum_ok)
        out << "warning: checkpoint '" << cmd.ckpt
            << "' failed its content checksum (file may be corrupted)\n";
    const ModelConfig cfg = ck.config();
    out << "[config] command = eval\n[config] stage = " << ck.stage
        << "\n[config] identity_bypass = " << (cmd.identity_bypass ? 1 : 0) << "\n";
    detail::print_config(cfg, out);
    if (ck.scalar_width == 8) return detail::run_eval<double>(ck, cmd, out);
    return detail::run_eval<float>(ck, cmd, out);
}

// ---------------------------------------------------------------------------
// selftest

struct SelftestCmd {
    bool inject_gradient_fault = false;
};

inline int cmd_selftest(const SelftestCmd& cmd, std::ostream& out) {
    out << "[config] command = selftest\n[config] inject_gradient_fault = "
        << (cmd.inject_gradient_fault ? 1 : 0) << "\n";
    debug::flip_relu_backward = cmd.inject_gradient_fault;
    auto results = run_selftest();
    debug::flip_relu_backward = false;
    return report_selftest(results, out);
}

}  // namespace obitonet
