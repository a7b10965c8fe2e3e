#pragma once

// Model/run configuration: a flat key = value record with strict parsing
// (unknown keys are errors) and a canonical serialization that checkpoints
// embed verbatim.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "obitonet/chamfer.hpp"
#include "obitonet/tensor.hpp"

namespace obitonet {

enum class Precision { Standard, Wide };

struct ModelConfig {
    int64_t c = 768;          // token size
    int64_t g = 64;           // number of tokens / groups (perfect square)
    int64_t m = 32;           // points per group
    double mask_ratio = 2.0 / 3.0;
    int64_t pc_depth = 6;
    int64_t img_depth = 4;
    int64_t dec_depth = 4;
    int64_t heads = 8;
    int64_t image_size = 64;  // square image side
    double patch_dropout = 0.0;  // > 0 switches the image encoder to masked-patch training
    ChamferVariant variant = ChamferVariant::L2Squared;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t batch_size = 4;
    uint64_t seed = 42;
    Precision precision = Precision::Standard;
    int64_t epochs = 200;
    int64_t checkpoint_every = 50;
    bool ca_interleave = false;     // cross-attention before every decoder block
    bool loss_masked_only = false;  // per-masked-group Chamfer instead of the global loss

    int64_t sqrt_g() const { return static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(g)))); }
    int64_t patch_size() const { return image_size / sqrt_g(); }

    void validate() const {
        if (c < 1 || m < 1 || g < 1) throw ConfigError("c, g and m must be positive");
        const int64_t r = sqrt_g();
        if (r * r != g) {
            const int64_t below = static_cast<int64_t>(std::floor(std::sqrt(static_cast<double>(g))));
            throw ConfigError("g must be a perfect square, got " + std::to_string(g) +
                              " (nearest valid: " + std::to_string(below * below) + ", " +
                              std::to_string((below + 1) * (below + 1)) + ")");
        }
        if (image_size < 8) throw ConfigError("image_size must be at least 8");
        if (image_size % r != 0)
            throw ConfigError("image_size " + std::to_string(image_size) +
                              " is not divisible by sqrt(g) = " + std::to_string(r) +
                              "; valid image sides are multiples of " + std::to_string(r));
        if (heads < 1 || c % heads != 0)
            throw ConfigError("c (" + std::to_string(c) + ") must be divisible by heads (" +
                              std::to_string(heads) + ")");
        if (mask_ratio < 0.0 || mask_ratio >= 1.0)
            throw ConfigError("mask_ratio must lie in [0,1), got " + std::to_string(mask_ratio));
        if (patch_dropout < 0.0 || patch_dropout >= 1.0)
            throw ConfigError("patch_dropout must lie in [0,1)");
        if (pc_depth < 0 || img_depth < 0 || dec_depth < 0)
            throw ConfigError("depths must be nonnegative");
        if (batch_size < 1) throw ConfigError("batch_size must be positive");
        if (epochs < 0) throw ConfigError("epochs must be nonnegative");
        if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be positive");
        if (lr <= 0.0 || eps <= 0.0) throw ConfigError("lr and eps must be positive");
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
            throw ConfigError("betas must lie in [0,1)");
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    size_t b = s.find_last_not_of(" \t\r\n");
    if (a == std::string::npos) return {};
    return s.substr(a, b - a + 1);
}

inline int64_t to_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        int64_t r = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected integer, got '" + v + "'");
    }
}

inline double to_real(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double r = std::stod(v, &pos);
        if (pos != v.size() || !std::isfinite(r)) throw std::invalid_argument("");
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected real, got '" + v + "'");
    }
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ConfigError("config key '" + key + "': expected 0/1, got '" + v + "'");
}

}  // namespace detail

inline void config_set(ModelConfig& cfg, const std::string& key, const std::string& value) {
    using detail::to_bool;
    using detail::to_int;
    using detail::to_real;
    if (key == "c") cfg.c = to_int(key, value);
    else if (key == "g") cfg.g = to_int(key, value);
    else if (key == "m") cfg.m = to_int(key, value);
    else if (key == "mask_ratio") cfg.mask_ratio = to_real(key, value);
    else if (key == "pc_depth") cfg.pc_depth = to_int(key, value);
    else if (key == "img_depth") cfg.img_depth = to_int(key, value);
    else if (key == "dec_depth") cfg.dec_depth = to_int(key, value);
    else if (key == "heads") cfg.heads = to_int(key, value);
    else if (key == "image_size") cfg.image_size = to_int(key, value);
    else if (key == "patch_dropout") cfg.patch_dropout = to_real(key, value);
    else if (key == "variant") {
        if (value == "l2sq") cfg.variant = ChamferVariant::L2Squared;
        else if (value == "l1") cfg.variant = ChamferVariant::L1;
        else throw ConfigError("config key 'variant': expected l2sq or l1, got '" + value + "'");
    } else if (key == "lr") cfg.lr = to_real(key, value);
    else if (key == "beta1") cfg.beta1 = to_real(key, value);
    else if (key == "beta2") cfg.beta2 = to_real(key, value);
    else if (key == "eps") cfg.eps = to_real(key, value);
    else if (key == "batch_size") cfg.batch_size = to_int(key, value);
    else if (key == "seed") cfg.seed = static_cast<uint64_t>(to_int(key, value));
    else if (key == "precision") {
        if (value == "standard") cfg.precision = Precision::Standard;
        else if (value == "wide") cfg.precision = Precision::Wide;
        else throw ConfigError("config key 'precision': expected standard or wide, got '" + value + "'");
    } else if (key == "epochs") cfg.epochs = to_int(key, value);
    else if (key == "checkpoint_every") cfg.checkpoint_every = to_int(key, value);
    else if (key == "ca_interleave") cfg.ca_interleave = to_bool(key, value);
    else if (key == "loss_masked_only") cfg.loss_masked_only = to_bool(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
}

// Parses "key = value" lines; '#' starts a comment, blank lines are skipped.
inline ModelConfig parse_config_text(const std::string& text, ModelConfig base = {}) {
    std::istringstream is(text);
    std::string line;
    int64_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected 'key = value', got '" + line + "'");
        config_set(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
    return base;
}

inline ModelConfig load_config_file(const std::string& path, ModelConfig base = {}) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config file not found: '" + path + "'");
    std::ostringstream os;
    os << f.rdbuf();
    return parse_config_text(os.str(), base);
}

// Canonical serialization: fixed key order, round-trip-exact reals.
inline std::string serialize_config(const ModelConfig& cfg) {
    std::ostringstream os;
    os << "c = " << cfg.c << "\n";
    os << "g = " << cfg.g << "\n";
    os << "m = " << cfg.m << "\n";
    os << "mask_ratio = " << fmt_scalar(cfg.mask_ratio) << "\n";
    os << "pc_depth = " << cfg.pc_depth << "\n";
    os << "img_depth = " << cfg.img_depth << "\n";
    os << "dec_depth = " << cfg.dec_depth << "\n";
    os << "heads = " << cfg.heads << "\n";
    os << "image_size = " << cfg.image_size << "\n";
    os << "patch_dropout = " << fmt_scalar(cfg.patch_dropout) << "\n";
    os << "variant = " << (cfg.variant == ChamferVariant::L2Squared ? "l2sq" : "l1") << "\n";
    os << "lr = " << fmt_scalar(cfg.lr) << "\n";
    os << "beta1 = " << fmt_scalar(cfg.beta1) << "\n";
    os << "beta2 = " << fmt_scalar(cfg.beta2) << "\n";
    os << "eps = " << fmt_scalar(cfg.eps) << "\n";
    os << "batch_size = " << cfg.batch_size << "\n";
    os << "seed = " << cfg.seed << "\n";
    os << "precision = " << (cfg.precision == Precision::Wide ? "wide" : "standard") << "\n";
    os << "epochs = " << cfg.epochs << "\n";
    os << "checkpoint_every = " << cfg.checkpoint_every << "\n";
    os << "ca_interleave = " << (cfg.ca_interleave ? 1 : 0) << "\n";
    os << "loss_masked_only = " << (cfg.loss_masked_only ? 1 : 0) << "\n";
    return os.str();
}

}  // namespace obitonet
