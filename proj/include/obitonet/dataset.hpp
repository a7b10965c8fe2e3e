#pragma once

// Dataset plumbing: .xyz / ASCII .ply point-cloud I/O, P5 .pgm images,
// synthetic shape sampling, orthographic depth rendering, group masking,
// and the plain-text dataset manifest. Paired (cloud, image) samples are
// exact by construction: the stored image is rendered from the stored cloud.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "obitonet/geometry.hpp"
#include "obitonet/tensor.hpp"

namespace obitonet {

// ---------------------------------------------------------------------------
// Images

struct Image {
    int64_t h = 0, w = 0;
    std::vector<double> pix;  // row-major, values in [0,1]

    double at(int64_t r, int64_t c) const { return pix[static_cast<size_t>(r * w + c)]; }
    double& at(int64_t r, int64_t c) { return pix[static_cast<size_t>(r * w + c)]; }
};

struct Sample {
    std::string id;
    PointCloud cloud;  // normalized
    Image image;
};

// ---------------------------------------------------------------------------
// .xyz — one "x y z" triple per line. Values are written with full
// round-trip precision so a saved cloud reloads bit-exactly.

namespace detail {

inline double parse_coord(const std::string& tok, const std::string& path, int64_t line_no) {
    size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(tok, &pos);
    } catch (const std::exception&) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": bad number '" + tok + "'");
    }
    if (pos != tok.size())
        throw ParseError(path + ":" + std::to_string(line_no) + ": bad number '" + tok + "'");
    if (!std::isfinite(v))
        throw ParseError(path + ":" + std::to_string(line_no) + ": non-finite coordinate");
    return v;
}

inline std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

}  // namespace detail

inline PointCloud load_xyz(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open '" + path + "'");
    PointCloud pc;
    std::string line;
    int64_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        auto toks = detail::split_ws(line);
        if (toks.empty()) continue;
        if (toks.size() != 3)
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected 3 coordinates, got " +
                             std::to_string(toks.size()));
        pc.points.push_back({detail::parse_coord(toks[0], path, line_no),
                             detail::parse_coord(toks[1], path, line_no),
                             detail::parse_coord(toks[2], path, line_no)});
    }
    if (pc.empty()) throw ParseError(path + ": empty cloud");
    return pc;
}

inline void save_xyz(const std::string& path, const PointCloud& pc) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write '" + path + "'");
    for (const Vec3& p : pc.points)
        f << fmt_scalar(p[0]) << " " << fmt_scalar(p[1]) << " " << fmt_scalar(p[2]) << "\n";
}

// ---------------------------------------------------------------------------
// ASCII PLY with x/y/z vertex properties; unknown vertex properties are
// skipped, non-vertex elements are skipped wholesale. Binary encodings are
// rejected explicitly.

inline PointCloud load_ply(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open '" + path + "'");
    std::string line;
    int64_t line_no = 0;
    auto next_line = [&](std::string& out) {
        if (!std::getline(f, out)) throw ParseError(path + ": truncated file");
        ++line_no;
    };
    next_line(line);
    if (detail::split_ws(line) != std::vector<std::string>{"ply"})
        throw ParseError(path + ": missing 'ply' magic");
    // header
    struct Element {
        std::string name;
        int64_t count = 0;
        std::vector<std::string> properties;
    };
    std::vector<Element> elements;
    bool saw_format = false;
    for (;;) {
        next_line(line);
        auto toks = detail::split_ws(line);
        if (toks.empty()) continue;
        if (toks[0] == "comment") continue;
        if (toks[0] == "format") {
            if (toks.size() < 2 || toks[1] != "ascii")
                throw ParseError(path + ": unsupported encoding (only ascii PLY is handled)");
            saw_format = true;
        } else if (toks[0] == "element") {
            if (toks.size() != 3) throw ParseError(path + ":" + std::to_string(line_no) + ": bad element");
            elements.push_back({toks[1], std::stoll(toks[2]), {}});
        } else if (toks[0] == "property") {
            if (elements.empty() || toks.size() < 2)
                throw ParseError(path + ":" + std::to_string(line_no) + ": property outside element");
            elements.back().properties.push_back(toks.back());
        } else if (toks[0] == "end_header") {
            break;
        } else {
            throw ParseError(path + ":" + std::to_string(line_no) + ": unexpected header line '" +
                             toks[0] + "'");
        }
    }
    if (!saw_format) throw ParseError(path + ": header missing format line");
    PointCloud pc;
    for (const Element& el : elements) {
        if (el.name == "vertex") {
            int64_t xi = -1, yi = -1, zi = -1;
            for (size_t i = 0; i < el.properties.size(); ++i) {
                if (el.properties[i] == "x") xi = static_cast<int64_t>(i);
                if (el.properties[i] == "y") yi = static_cast<int64_t>(i);
                if (el.properties[i] == "z") zi = static_cast<int64_t>(i);
            }
            if (xi < 0 || yi < 0 || zi < 0)
                throw ParseError(path + ": vertex element lacks x/y/z properties");
            for (int64_t v = 0; v < el.count; ++v) {
                next_line(line);
                auto toks = detail::split_ws(line);
                if (static_cast<int64_t>(toks.size()) < static_cast<int64_t>(el.properties.size()))
                    throw ParseError(path + ":" + std::to_string(line_no) + ": short vertex row");
                pc.points.push_back({detail::parse_coord(toks[static_cast<size_t>(xi)], path, line_no),
                                     detail::parse_coord(toks[static_cast<size_t>(yi)], path, line_no),
                                     detail::parse_coord(toks[static_cast<size_t>(zi)], path, line_no)});
            }
        } else {
            for (int64_t v = 0; v < el.count; ++v) next_line(line);  // skip foreign element rows
        }
    }
    if (pc.empty()) throw ParseError(path + ": empty cloud");
    return pc;
}

inline void save_ply(const std::string& path, const PointCloud& pc) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write '" + path + "'");
    f << "ply\nformat ascii 1.0\nelement vertex " << pc.size()
      << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
    for (const Vec3& p : pc.points)
        f << fmt_scalar(p[0]) << " " << fmt_scalar(p[1]) << " " << fmt_scalar(p[2]) << "\n";
}

// ---------------------------------------------------------------------------
// PGM (P5, 8-bit)

inline void save_pgm(const std::string& path, const Image& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write '" + path + "'");
    f << "P5\n" << img.w << " " << img.h << "\n255\n";
    for (double v : img.pix) {
        const double c = std::min(1.0, std::max(0.0, v));
        f.put(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
    }
}

inline Image load_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "'");
    auto next_token = [&]() -> std::string {
        std::string tok;
        for (;;) {
            int c = f.get();
            if (c == EOF) throw ParseError(path + ": truncated header");
            if (c == '#') {
                while (c != EOF && c != '\n') c = f.get();
                continue;
            }
            if (std::isspace(c)) {
                if (!tok.empty()) return tok;
                continue;
            }
            tok.push_back(static_cast<char>(c));
        }
    };
    if (next_token() != "P5") throw ParseError(path + ": not a P5 pgm");
    Image img;
    img.w = std::stoll(next_token());
    img.h = std::stoll(next_token());
    const int64_t maxval = std::stoll(next_token());
    if (maxval != 255) throw ParseError(path + ": only maxval 255 supported");
    img.pix.resize(static_cast<size_t>(img.w * img.h));
    for (double& v : img.pix) {
        const int c = f.get();
        if (c == EOF) throw ParseError(path + ": truncated pixel data");
        v = static_cast<double>(c) / 255.0;
    }
    return img;
}

// ---------------------------------------------------------------------------
// Synthetic shapes, normalized to the unit sphere. Deterministic per seed.

enum class ShapeKind { Sphere, Cube, Torus, PlaneWithHole };

inline ShapeKind parse_shape_kind(const std::string& s) {
    if (s == "sphere") return ShapeKind::Sphere;
    if (s == "cube") return ShapeKind::Cube;
    if (s == "torus") return ShapeKind::Torus;
    if (s == "plane_with_hole") return ShapeKind::PlaneWithHole;
    throw ConfigError("unknown shape kind '" + s +
                      "' (valid: sphere, cube, torus, plane_with_hole)");
}

inline std::string shape_kind_name(ShapeKind k) {
    switch (k) {
        case ShapeKind::Sphere: return "sphere";
        case ShapeKind::Cube: return "cube";
        case ShapeKind::Torus: return "torus";
        case ShapeKind::PlaneWithHole: return "plane_with_hole";
    }
    return "?";
}

inline PointCloud synth_shape(ShapeKind kind, int64_t n, uint64_t seed) {
    if (n < 1) throw ContractError("synth_shape: need at least one point");
    Rng rng(seed);
    PointCloud pc;
    pc.points.reserve(static_cast<size_t>(n));
    constexpr double kTau = 6.283185307179586;
    switch (kind) {
        case ShapeKind::Sphere:
            for (int64_t i = 0; i < n; ++i) {
                const double z = rng.uniform(-1.0, 1.0);
                const double t = rng.uniform(0.0, kTau);
                const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
                pc.points.push_back({r * std::cos(t), r * std::sin(t), z});
            }
            break;
        case ShapeKind::Cube:
            // faces visited round-robin, so n = 6k puts exactly k points per face
            for (int64_t i = 0; i < n; ++i) {
                const int face = static_cast<int>(i % 6);
                const double a = rng.uniform(-1.0, 1.0);
                const double b = rng.uniform(-1.0, 1.0);
                const double s = face % 2 == 0 ? 1.0 : -1.0;
                switch (face / 2) {
                    case 0: pc.points.push_back({s, a, b}); break;
                    case 1: pc.points.push_back({a, s, b}); break;
                    default: pc.points.push_back({a, b, s}); break;
                }
            }
            break;
        case ShapeKind::Torus:
            for (int64_t i = 0; i < n; ++i) {
                const double u = rng.uniform(0.0, kTau);
                const double v = rng.uniform(0.0, kTau);
                const double ring = 1.0 + 0.4 * std::cos(v);
                pc.points.push_back({ring * std::cos(u), ring * std::sin(u), 0.4 * std::sin(v)});
            }
            break;
        case ShapeKind::PlaneWithHole:
            for (int64_t i = 0; i < n; ++i) {
                for (;;) {
                    const double x = rng.uniform(-1.0, 1.0);
                    const double y = rng.uniform(-1.0, 1.0);
                    if (x * x + y * y >= 0.25) {
                        pc.points.push_back({x, y, 0.0});
                        break;
                    }
                }
            }
            break;
    }
    // Constructions are centered at the origin already; rescale so the
    // farthest point sits exactly on the unit sphere (identity for spheres).
    double max_norm = 0.0;
    for (const Vec3& p : pc.points) max_norm = std::max(max_norm, vnorm(p));
    if (max_norm > 0.0)
        for (Vec3& p : pc.points) {
            p[0] /= max_norm;
            p[1] /= max_norm;
            p[2] /= max_norm;
        }
    return pc;
}

// ---------------------------------------------------------------------------
// Orthographic depth rendering

enum class ViewAxis { PosX, NegX, PosY, NegY, PosZ, NegZ };

inline ViewAxis parse_view(const std::string& s) {
    if (s == "+x") return ViewAxis::PosX;
    if (s == "-x") return ViewAxis::NegX;
    if (s == "+y") return ViewAxis::PosY;
    if (s == "-y") return ViewAxis::NegY;
    if (s == "+z") return ViewAxis::PosZ;
    if (s == "-z") return ViewAxis::NegZ;
    throw ConfigError("unknown view '" + s + "' (valid: +x -x +y -y +z -z)");
}

inline std::string view_name(ViewAxis v) {
    switch (v) {
        case ViewAxis::PosX: return "+x";
        case ViewAxis::NegX: return "-x";
        case ViewAxis::PosY: return "+y";
        case ViewAxis::NegY: return "-y";
        case ViewAxis::PosZ: return "+z";
        case ViewAxis::NegZ: return "-z";
    }
    return "?";
}

// Projects a normalized cloud onto the plane orthogonal to the view axis.
// Pixel value is the normalized inverse depth (w+1)/2 of the nearest point
// covering that pixel, with w the signed coordinate toward the camera; empty
// pixels stay 0. Axis mapping (camera on the positive side of the axis,
// negated views flip w): x -> (u,v)=(y,z), y -> (z,x), z -> (x,y); u maps to
// columns left-to-right, v to rows bottom-up.
inline Image render_projection(const PointCloud& pc, int64_t h, int64_t w, ViewAxis view) {
    if (h < 8 || w < 8)
        throw ConfigError("render_projection: image must be at least 8x8, got " +
                          std::to_string(h) + "x" + std::to_string(w));
    if (pc.empty()) throw ContractError("render_projection: empty cloud");
    Image img;
    img.h = h;
    img.w = w;
    img.pix.assign(static_cast<size_t>(h * w), 0.0);
    int ua = 0, va = 0, wa = 0;
    double sign = 1.0;
    switch (view) {
        case ViewAxis::PosX: ua = 1; va = 2; wa = 0; sign = 1.0; break;
        case ViewAxis::NegX: ua = 1; va = 2; wa = 0; sign = -1.0; break;
        case ViewAxis::PosY: ua = 2; va = 0; wa = 1; sign = 1.0; break;
        case ViewAxis::NegY: ua = 2; va = 0; wa = 1; sign = -1.0; break;
        case ViewAxis::PosZ: ua = 0; va = 1; wa = 2; sign = 1.0; break;
        case ViewAxis::NegZ: ua = 0; va = 1; wa = 2; sign = -1.0; break;
    }
    for (const Vec3& p : pc.points) {
        const double u = p[static_cast<size_t>(ua)];
        const double v = p[static_cast<size_t>(va)];
        const double depth_val = (sign * p[static_cast<size_t>(wa)] + 1.0) * 0.5;
        int64_t col = static_cast<int64_t>(std::floor((u + 1.0) * 0.5 * static_cast<double>(w)));
        int64_t row = static_cast<int64_t>(std::floor((1.0 - (v + 1.0) * 0.5) * static_cast<double>(h)));
        col = std::min(w - 1, std::max(int64_t{0}, col));
        row = std::min(h - 1, std::max(int64_t{0}, row));
        double& px = img.at(row, col);
        if (depth_val > px) px = std::min(1.0, std::max(0.0, depth_val));
    }
    return img;
}

// ---------------------------------------------------------------------------
// Group masking

struct MaskSpec {
    double mask_ratio = 0.0;  // in [0,1)
    uint64_t seed = 0;
};

struct MaskedGroups {
    std::vector<int64_t> visible;  // ascending group indices
    std::vector<int64_t> masked;   // ascending group indices
};

inline std::vector<int64_t> masked_indices(const MaskSpec& spec, int64_t g) {
    if (spec.mask_ratio < 0.0 || spec.mask_ratio >= 1.0)
        throw ConfigError("mask_ratio must lie in [0,1), got " + std::to_string(spec.mask_ratio));
    const int64_t k = std::llround(spec.mask_ratio * static_cast<double>(g));
    std::vector<int64_t> idx(static_cast<size_t>(g));
    for (int64_t i = 0; i < g; ++i) idx[static_cast<size_t>(i)] = i;
    Rng rng(spec.seed);
    rng.shuffle(idx);
    idx.resize(static_cast<size_t>(k));
    std::sort(idx.begin(), idx.end());
    return idx;
}

// Deterministic partition of the G groups into visible and masked sets;
// |masked| == round(mask_ratio * G).
inline MaskedGroups apply_mask(const GroupedPointCloud& grouped, const MaskSpec& spec) {
    const int64_t g = grouped.group_count();
    MaskedGroups out;
    out.masked = masked_indices(spec, g);
    std::vector<char> is_masked(static_cast<size_t>(g), 0);
    for (int64_t i : out.masked) is_masked[static_cast<size_t>(i)] = 1;
    for (int64_t i = 0; i < g; ++i)
        if (!is_masked[static_cast<size_t>(i)]) out.visible.push_back(i);
    return out;
}

// ---------------------------------------------------------------------------
// Manifest: one "<id> <kind> <seed> <n> <view> <cloud> <image>" row per
// sample, after a version header line.

struct ManifestEntry {
    std::string id;
    std::string kind;
    uint64_t seed = 0;
    int64_t n = 0;
    std::string view;
    std::string cloud_file;
    std::string image_file;
};

inline std::string manifest_path(const std::string& dir) {
    return (std::filesystem::path(dir) / "manifest.txt").string();
}

inline void write_manifest(const std::string& dir, const std::vector<ManifestEntry>& entries) {
    const std::string path = manifest_path(dir);
    std::ofstream f(path);
    if (!f) throw IoError("cannot write '" + path + "'");
    f << "# dataset manifest v1: id kind seed n view cloud image\n";
    for (const auto& e : entries)
        f << e.id << " " << e.kind << " " << e.seed << " " << e.n << " " << e.view << " "
          << e.cloud_file << " " << e.image_file << "\n";
}

inline std::vector<ManifestEntry> read_manifest(const std::string& dir) {
    const std::string path = manifest_path(dir);
    std::ifstream f(path);
    if (!f) throw ConfigError("dataset manifest not found: '" + path + "'");
    std::vector<ManifestEntry> out;
    std::string line;
    int64_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        auto toks = detail::split_ws(line);
        if (toks.size() != 7)
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected 7 fields, got " +
                             std::to_string(toks.size()));
        ManifestEntry e;
        e.id = toks[0];
        e.kind = toks[1];
        e.seed = std::stoull(toks[2]);
        e.n = std::stoll(toks[3]);
        e.view = toks[4];
        e.cloud_file = toks[5];
        e.image_file = toks[6];
        out.push_back(std::move(e));
    }
    return out;
}

struct Dataset {
    std::string dir;
    std::vector<ManifestEntry> entries;
    std::vector<Sample> samples;
};

inline Dataset load_dataset(const std::string& dir) {
    Dataset ds;
    ds.dir = dir;
    ds.entries = read_manifest(dir);
    ds.samples.reserve(ds.entries.size());
    for (const auto& e : ds.entries) {
        Sample s;
        s.id = e.id;
        s.cloud = load_xyz((std::filesystem::path(dir) / e.cloud_file).string());
        s.image = load_pgm((std::filesystem::path(dir) / e.image_file).string());
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

}  // namespace obitonet
