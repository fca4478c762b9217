#pragma once

// Spherical Gaussian pyramid: parameter decoding from raw head outputs,
// pyramid assembly, consolidation and spherical-harmonics color.

#include "panogs/core/error.hpp"
#include "panogs/core/math.hpp"
#include "panogs/core/memory.hpp"
#include "panogs/depth.hpp"
#include "panogs/geometry.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace panogs {

inline constexpr int kMaxShDegree = 1;
inline constexpr int kMaxShCoeffs = 3 * (kMaxShDegree + 1) * (kMaxShDegree + 1);
inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr double kShC1 = 0.4886025119029199;

inline constexpr int sh_coeffs_per_channel(int degree) { return (degree + 1) * (degree + 1); }

/// One 3D Gaussian. The same layout is used for parameter gradients.
struct Gaussian {
    Vec3 mean = Vec3::Zero();
    double opacity = 0.0;
    Vec3 scale = Vec3::Zero();
    Vec4 rotation = Vec4(1, 0, 0, 0); // (w, x, y, z)
    std::array<double, kMaxShCoeffs> sh{}; // [channel * K + k]

    static Gaussian zero() {
        Gaussian g;
        g.rotation.setZero();
        return g;
    }

    Gaussian& operator+=(const Gaussian& o) {
        mean += o.mean;
        opacity += o.opacity;
        scale += o.scale;
        rotation += o.rotation;
        for (int i = 0; i < kMaxShCoeffs; ++i) sh[i] += o.sh[i];
        return *this;
    }

    Mat3 covariance() const {
        const Mat3 r = rotation_from_wxyz(rotation);
        return r * scale.cwiseAbs2().asDiagonal() * r.transpose();
    }
};

/// Flat list of Gaussians sharing one SH degree.
struct GaussianSet {
    int sh_degree = 0;
    tracked_vector<Gaussian> items;

    std::size_t size() const noexcept { return items.size(); }
};

// ---------------------------------------------------------------------------
// Spherical harmonics (degree 0 or 1)

/// RGB color of SH coefficients seen along unit direction `dir`.
/// Degree 0 gives C0 * c + 0.5 (the usual splatting offset).
inline Vec3 sh_eval(std::span<const double> sh, int degree, const Vec3& dir) {
    require(degree >= 0 && degree <= kMaxShDegree, "sh_eval: unsupported SH degree");
    const int k = sh_coeffs_per_channel(degree);
    Vec3 rgb;
    for (int c = 0; c < 3; ++c) {
        double v = kShC0 * sh[c * k] + 0.5;
        if (degree >= 1)
            v += kShC1 * (-dir.y() * sh[c * k + 1] + dir.z() * sh[c * k + 2] - dir.x() * sh[c * k + 3]);
        rgb[c] = v;
    }
    return rgb;
}

/// Accumulates d(rgb)/d(sh) and d(rgb)/d(dir) contributions.
inline void sh_eval_backward(std::span<const double> sh, int degree, const Vec3& dir, const Vec3& grad_rgb,
                             std::span<double> grad_sh, Vec3& grad_dir) {
    const int k = sh_coeffs_per_channel(degree);
    for (int c = 0; c < 3; ++c) {
        grad_sh[c * k] += kShC0 * grad_rgb[c];
        if (degree >= 1) {
            grad_sh[c * k + 1] += -kShC1 * dir.y() * grad_rgb[c];
            grad_sh[c * k + 2] += kShC1 * dir.z() * grad_rgb[c];
            grad_sh[c * k + 3] += -kShC1 * dir.x() * grad_rgb[c];
            grad_dir.x() += -kShC1 * sh[c * k + 3] * grad_rgb[c];
            grad_dir.y() += -kShC1 * sh[c * k + 1] * grad_rgb[c];
            grad_dir.z() += kShC1 * sh[c * k + 2] * grad_rgb[c];
        }
    }
}

// ---------------------------------------------------------------------------
// Decoding

struct DecodeConfig {
    int base_width = 0;     ///< level-0 panorama width W
    int sh_degree = 0;
    double s_min = 0.5;     ///< scale bounds, in units of the level's pixel size
    double s_max = 15.0;
};

/// World size of one level-l equatorial pixel at range `depth`: (2 pi / W_l) * depth.
inline double pixel_world_size(int base_width, int level, double depth) {
    require(depth > 0.0, "pixel_world_size: depth must be positive");
    return kTwoPi / (static_cast<double>(base_width) / (1 << level)) * depth;
}

/// Layout of one raw head-output vector:
/// [depth logits (D)] [opacity] [scale x3] [quaternion x4] [SH x 3K].
struct RawLayout {
    int depth_candidates = 0;
    int sh_degree = 0;

    int opacity() const noexcept { return depth_candidates; }
    int scale() const noexcept { return depth_candidates + 1; }
    int rotation() const noexcept { return depth_candidates + 4; }
    int sh() const noexcept { return depth_candidates + 8; }
    int sh_count() const noexcept { return 3 * sh_coeffs_per_channel(sh_degree); }
    int size() const noexcept { return sh() + sh_count(); }
};

/// Where a Gaussian sits before decoding: its lattice point, level and source camera.
struct DecodeSite {
    LatticePoint point;
    int level = 0;
    const CameraPose* pose = nullptr;
};

inline void check_raw(std::span<const double> raw, const RawLayout& layout) {
    require(static_cast<int>(raw.size()) == layout.size(), "decode_gaussian: raw vector length does not match layout");
    for (double v : raw) require(std::isfinite(v), "decode_gaussian: raw head output must be finite");
}

/// Range along the lattice ray implied by the depth logits.
inline double decode_depth(std::span<const double> raw, const DepthHypotheses& hyp) {
    return 1.0 / softmax_inverse_depth(raw.subspan(0, hyp.count()), hyp.inverse);
}

inline Gaussian decode_gaussian(std::span<const double> raw, const DecodeSite& site, const DepthHypotheses& hyp,
                                const DecodeConfig& cfg) {
    const RawLayout layout{hyp.count(), cfg.sh_degree};
    check_raw(raw, layout);
    for (double z : hyp.inverse) require(z > 0.0, "decode_gaussian: depth candidates must be positive");

    Gaussian g;
    const double depth = decode_depth(raw, hyp);
    const Vec3 dir = site.pose->to_world(lattice_direction(site.point));
    g.mean = site.pose->position + depth * dir;
    g.opacity = sigmoid(raw[layout.opacity()]);
    const double px = pixel_world_size(cfg.base_width, site.level, depth);
    for (int i = 0; i < 3; ++i)
        g.scale[i] = (cfg.s_min + sigmoid(raw[layout.scale() + i]) * (cfg.s_max - cfg.s_min)) * px;
    Vec4 q(raw[layout.rotation()], raw[layout.rotation() + 1], raw[layout.rotation() + 2], raw[layout.rotation() + 3]);
    require(q.norm() > 0.0, "decode_gaussian: raw quaternion must be non-zero");
    g.rotation = q / q.norm();
    for (int i = 0; i < layout.sh_count(); ++i) g.sh[i] = raw[layout.sh() + i];
    return g;
}

/// Gradient of the raw vector given gradients of the decoded Gaussian and an
/// extra gradient on the decoded depth. Accumulates into `grad_raw`.
inline void decode_gaussian_backward(std::span<const double> raw, const DecodeSite& site, const DepthHypotheses& hyp,
                                     const DecodeConfig& cfg, const Gaussian& grad, double grad_depth,
                                     std::span<double> grad_raw) {
    const RawLayout layout{hyp.count(), cfg.sh_degree};
    const double inv = softmax_inverse_depth(raw.subspan(0, hyp.count()), hyp.inverse);
    const double depth = 1.0 / inv;
    const Vec3 dir = site.pose->to_world(lattice_direction(site.point));
    const double px_per_depth = pixel_world_size(cfg.base_width, site.level, 1.0);

    double d_depth = grad_depth + grad.mean.dot(dir);
    for (int i = 0; i < 3; ++i) {
        const double s = sigmoid(raw[layout.scale() + i]);
        const double factor = cfg.s_min + s * (cfg.s_max - cfg.s_min);
        grad_raw[layout.scale() + i] += grad.scale[i] * px_per_depth * depth * s * (1 - s) * (cfg.s_max - cfg.s_min);
        d_depth += grad.scale[i] * factor * px_per_depth;
    }
    const double a = sigmoid(raw[layout.opacity()]);
    grad_raw[layout.opacity()] += grad.opacity * a * (1 - a);

    const Vec4 q(raw[layout.rotation()], raw[layout.rotation() + 1], raw[layout.rotation() + 2],
                 raw[layout.rotation() + 3]);
    const double len = q.norm();
    const Vec4 n = q / len;
    const Vec4 dq = (grad.rotation - n * n.dot(grad.rotation)) / len;
    for (int i = 0; i < 4; ++i) grad_raw[layout.rotation() + i] += dq[i];
    for (int i = 0; i < layout.sh_count(); ++i) grad_raw[layout.sh() + i] += grad.sh[i];

    const double d_inv = -d_depth / (inv * inv);
    softmax_inverse_depth_backward(raw.subspan(0, hyp.count()), hyp.inverse, d_inv,
                                   grad_raw.subspan(0, hyp.count()));
}

// ---------------------------------------------------------------------------
// Pyramid

/// Raw head outputs of one level: `count` vectors of `dim` values, lattice order.
struct RawLevel {
    int dim = 0;
    tracked_vector<double> values;

    std::size_t count() const noexcept { return dim == 0 ? 0 : values.size() / dim; }
    std::span<const double> row(std::size_t j) const { return {values.data() + j * dim, static_cast<std::size_t>(dim)}; }
};

struct PyramidConfig {
    int width = 0;  ///< level-0 panorama width
    int levels = 4;
    DecodeConfig decode;
};

/// Gaussians of one view at L levels, finest level first.
struct GaussianPyramid {
    int width = 0;
    int view = 0;
    int sh_degree = 0;
    CameraPose pose;
    std::vector<FibonacciLattice> lattices;
    std::vector<tracked_vector<Gaussian>> levels;

    std::size_t total() const noexcept {
        std::size_t n = 0;
        for (const auto& l : levels) n += l.size();
        return n;
    }
};

/// Lattices of every level, finest first.
inline std::vector<FibonacciLattice> pyramid_lattices(int width, int levels) {
    std::vector<FibonacciLattice> out;
    const auto counts = pyramid_counts(width, levels);
    for (int l = 0; l < levels; ++l) out.push_back(fibonacci_lattice(counts[l], l));
    return out;
}

inline GaussianPyramid build_pyramid(std::span<const RawLevel> raw, const CameraPose& pose,
                                     std::span<const DepthHypotheses> hypotheses, const PyramidConfig& cfg,
                                     int view = 0) {
    require(static_cast<int>(raw.size()) == cfg.levels, "build_pyramid: one raw set per level required");
    require(static_cast<int>(hypotheses.size()) == cfg.levels, "build_pyramid: one hypothesis set per level required");
    pose.validate();
    GaussianPyramid pyr;
    pyr.width = cfg.width;
    pyr.view = view;
    pyr.sh_degree = cfg.decode.sh_degree;
    pyr.pose = pose;
    pyr.lattices = pyramid_lattices(cfg.width, cfg.levels);
    DecodeConfig dc = cfg.decode;
    dc.base_width = cfg.width;
    for (int l = 0; l < cfg.levels; ++l) {
        const FibonacciLattice& lat = pyr.lattices[l];
        require(raw[l].count() == lat.size(), "build_pyramid: raw count does not match the level's lattice size");
        require(raw[l].dim == RawLayout{hypotheses[l].count(), dc.sh_degree}.size(),
                "build_pyramid: raw vector length does not match layout");
        tracked_vector<Gaussian> gs;
        gs.reserve(lat.size());
        for (std::size_t j = 0; j < lat.size(); ++j)
            gs.push_back(decode_gaussian(raw[l].row(j), {lat.points[j], l, &pyr.pose}, hypotheses[l], dc));
        pyr.levels.push_back(std::move(gs));
    }
    return pyr;
}

/// Concatenates pyramids: view-major, then coarse to fine, then lattice order.
inline GaussianSet consolidate(std::span<const GaussianPyramid> pyramids) {
    require(!pyramids.empty(), "consolidate: need at least one pyramid");
    GaussianSet set;
    set.sh_degree = pyramids.front().sh_degree;
    std::size_t total = 0;
    for (const auto& p : pyramids) {
        require(p.sh_degree == set.sh_degree, "consolidate: SH degree differs between pyramids");
        total += p.total();
    }
    set.items.reserve(total);
    for (const auto& p : pyramids)
        for (auto l = static_cast<int>(p.levels.size()) - 1; l >= 0; --l)
            set.items.insert(set.items.end(), p.levels[l].begin(), p.levels[l].end());
    return set;
}

/// Number of Gaussians `consolidate` produces for `views` full pyramids.
inline std::int64_t consolidated_count(int width, int levels, int views) {
    std::int64_t n = 0;
    for (auto c : pyramid_counts(width, levels)) n += c;
    return n * views;
}

} // namespace panogs
