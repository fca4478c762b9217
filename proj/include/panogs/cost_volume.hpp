#pragma once

// Hierarchical spherical plane sweep between two panoramas.

#include "panogs/core/error.hpp"
#include "panogs/core/image.hpp"
#include "panogs/core/math.hpp"
#include "panogs/core/memory.hpp"
#include "panogs/depth.hpp"
#include "panogs/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace panogs {

using FeatureMap = Image;

/// Where a panorama was taken and the stereo axis shared by both views of a
/// pair (world frame, zero when there is no baseline).
struct FeatureFrame {
    CameraPose pose;
    Vec3 axis = Vec3::Zero();
};

using FeatureProvider = std::function<FeatureMap(const Image&, const FeatureFrame&)>;

// ---------------------------------------------------------------------------
// Feature providers

/// Per channel: the value, its 3x3 mean and its 3x3 standard deviation
/// (horizontal wrap, vertical clamp). Channel layout [values | means | stds].
inline FeatureMap local_stats_features(const Image& img) {
    const int w = img.width(), h = img.height(), c = img.channels();
    FeatureMap out(w, h, 3 * c);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int k = 0; k < c; ++k) {
                double s = 0.0, s2 = 0.0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const double v = img.at(wrap_index(x + dx, w), clamp_index(y + dy, h), k);
                        s += v;
                        s2 += v * v;
                    }
                const double mean = s / 9.0;
                out.at(x, y, k) = img.at(x, y, k);
                out.at(x, y, c + k) = mean;
                out.at(x, y, 2 * c + k) = std::sqrt(std::max(0.0, s2 / 9.0 - mean * mean));
            }
    return out;
}

namespace detail {

inline void normalize_patch(std::span<double> f, int channels, double sharpness) {
    const int dim = static_cast<int>(f.size());
    const int taps = dim / channels;
    for (int k = 0; k < channels; ++k) {
        double mean = 0.0;
        for (int j = k; j < dim; j += channels) mean += f[j];
        mean /= taps;
        for (int j = k; j < dim; j += channels) f[j] -= mean;
    }
    double norm2 = 0.0;
    for (double v : f) norm2 += v * v;
    const double scale = norm2 > 1e-12 ? std::sqrt(sharpness * std::sqrt(static_cast<double>(dim)) / norm2) : 0.0;
    for (double& v : f) v *= scale;
}

} // namespace detail

/// (2r+1)^2 patch of every channel with each channel's patch mean removed,
/// scaled so that the correlation score of a feature with itself is
/// `sharpness`. The score of two features is then `sharpness` times their
/// normalized cross-correlation.
/// Flat patches give the zero vector.
inline FeatureMap patch_features(const Image& img, int radius = 2, double sharpness = 32.0) {
    require(radius >= 0, "patch_features: radius must be non-negative");
    require(sharpness > 0.0, "patch_features: sharpness must be positive");
    const int w = img.width(), h = img.height(), c = img.channels();
    const int side = 2 * radius + 1;
    const int dim = side * side * c;
    FeatureMap out(w, h, dim);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::span<double> f = out.pixel(x, y);
            int i = 0;
            for (int dy = -radius; dy <= radius; ++dy)
                for (int dx = -radius; dx <= radius; ++dx)
                    for (int k = 0; k < c; ++k) f[i++] = img.at(wrap_index(x + dx, w), clamp_index(y + dy, h), k);
            detail::normalize_patch(f, c, sharpness);
        }
    return out;
}

/// Like `patch_features`, but the patch is sampled on the tangent plane of
/// each pixel's ray with its first axis pointing along the stereo axis, one
/// pixel of angle per tap. Both views of a pair see a surface patch with the
/// same orientation, which plain raster patches do not near the poles.
/// Falls back to the east/north frame where the ray is parallel to the axis.
inline FeatureMap tangent_patch_features(const Image& img, const FeatureFrame& frame, int radius = 2,
                                         double sharpness = 32.0) {
    require(radius >= 0, "tangent_patch_features: radius must be non-negative");
    require(sharpness > 0.0, "tangent_patch_features: sharpness must be positive");
    require_erp(img, "tangent_patch_features");
    const int w = img.width(), h = img.height(), c = img.channels();
    const int side = 2 * radius + 1;
    const double step = kTwoPi / w;
    const Vec3 axis = frame.axis.norm() > 0.0 ? Vec3(frame.pose.rotation.conjugate() * frame.axis.normalized())
                                              : Vec3::Zero();
    FeatureMap out(w, h, side * side * c);
    std::vector<double> px(c);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const Vec3 d = pixel_to_dir(x, y, w, h);
            Vec3 t1 = axis - axis.dot(d) * d;
            if (t1.norm() < 1e-3) {
                t1 = Vec3::UnitY().cross(d);
                if (t1.norm() < 1e-9) t1 = Vec3::UnitX();
            }
            t1.normalize();
            const Vec3 t2 = d.cross(t1);
            std::span<double> f = out.pixel(x, y);
            int i = 0;
            for (int b = -radius; b <= radius; ++b)
                for (int a = -radius; a <= radius; ++a) {
                    const PixelCoord q = dir_to_pixel((d + step * (a * t1 + b * t2)).normalized(), w, h);
                    sample_erp(img, q.u, q.v, px);
                    for (int k = 0; k < c; ++k) f[i++] = px[k];
                }
            detail::normalize_patch(f, c, sharpness);
        }
    return out;
}

// ---------------------------------------------------------------------------
// Warping and correlation

/// Source-panorama pixel seeing the point at range `depth` along reference pixel (u, v).
inline PixelCoord warp_pixel(double u, double v, double depth, const CameraPose& ref_pose, const CameraPose& src_pose,
                             int width, int height) {
    const Vec3 p = ref_pose.position + depth * ref_pose.to_world(pixel_to_dir(u, v, width, height));
    const Vec3 d = src_pose.to_camera(p);
    return dir_to_pixel(d.normalized(), width, height);
}

namespace detail {

/// Directions of every pixel centre of a W x H panorama in the world frame of `pose`.
inline tracked_vector<Vec3> world_rays(const CameraPose& pose, int width, int height) {
    tracked_vector<Vec3> rays(static_cast<std::size_t>(width) * height);
    for (int v = 0; v < height; ++v)
        for (int u = 0; u < width; ++u) rays[static_cast<std::size_t>(v) * width + u] = pose.to_world(pixel_to_dir(u, v, width, height));
    return rays;
}

inline void warp_sample(const FeatureMap& src, const Vec3& ref_origin, const Vec3& ray, double depth,
                        const CameraPose& src_pose, std::span<double> out) {
    const Vec3 d = src_pose.to_camera(ref_origin + depth * ray);
    const PixelCoord q = dir_to_pixel(d.normalized(), src.width(), src.height());
    sample_erp(src, q.u, q.v, out);
}

inline double scaled_dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
    return s / std::sqrt(static_cast<double>(a.size()));
}

} // namespace detail

/// Features of `src` resampled onto the reference panorama for one inverse-depth plane.
inline FeatureMap spherical_warp(const FeatureMap& src, const CameraPose& src_pose, const CameraPose& ref_pose,
                                 double inverse_depth) {
    require(inverse_depth > 0.0, "spherical_warp: inverse depth must be positive");
    require_erp(src, "spherical_warp");
    const int w = src.width(), h = src.height();
    const auto rays = detail::world_rays(ref_pose, w, h);
    FeatureMap out(w, h, src.channels());
    const double depth = 1.0 / inverse_depth;
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u)
            detail::warp_sample(src, ref_pose.position, rays[static_cast<std::size_t>(v) * w + u], depth, src_pose,
                                out.pixel(u, v));
    return out;
}

/// Per-pixel <ref, warped> / sqrt(C).
inline Image correlate(const FeatureMap& ref, const FeatureMap& warped) {
    require_same_shape(ref, warped, "correlate");
    Image score(ref.width(), ref.height(), 1);
    for (int y = 0; y < ref.height(); ++y)
        for (int x = 0; x < ref.width(); ++x) score.at(x, y) = detail::scaled_dot(ref.pixel(x, y), warped.pixel(x, y));
    return score;
}

// ---------------------------------------------------------------------------
// Volumes

/// Correlation scores over per-pixel inverse-depth candidates
/// base(p) + k * step, k = 0..count-1.
struct CostVolume {
    int width = 0;
    int height = 0;
    int count = 0;
    double d_min = 0.0;
    double d_max = 0.0;
    double step = 0.0;
    Image base;                     ///< lowest candidate inverse depth per pixel
    tracked_vector<double> scores;  ///< pixel-major, candidate-minor

    double inverse(int x, int y, int k) const { return base.at(x, y) + k * step; }
    std::span<double> at(int x, int y) {
        return {scores.data() + (static_cast<std::size_t>(y) * width + x) * count, static_cast<std::size_t>(count)};
    }
    std::span<const double> at(int x, int y) const {
        return {scores.data() + (static_cast<std::size_t>(y) * width + x) * count, static_cast<std::size_t>(count)};
    }
    /// Candidates of pixel (x, y) as a hypothesis set.
    DepthHypotheses hypotheses(int x, int y) const {
        DepthHypotheses h{d_min, d_max, std::vector<double>(count)};
        for (int k = 0; k < count; ++k) h.inverse[k] = inverse(x, y, k);
        return h;
    }
    /// The score plane of candidate k as a one-channel image.
    Image plane(int k) const {
        Image out(width, height, 1);
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) out.at(x, y) = at(x, y)[k];
        return out;
    }
};

namespace detail {

inline void fill_volume(CostVolume& vol, const FeatureMap& ref, const FeatureMap& src, const CameraPose& ref_pose,
                        const CameraPose& src_pose) {
    require_same_shape(ref, src, "build_volume");
    require_erp(ref, "build_volume");
    const auto rays = world_rays(ref_pose, vol.width, vol.height);
    vol.scores.assign(static_cast<std::size_t>(vol.width) * vol.height * vol.count, 0.0);
    std::vector<double> sample(src.channels());
    for (int y = 0; y < vol.height; ++y)
        for (int x = 0; x < vol.width; ++x) {
            const Vec3& ray = rays[static_cast<std::size_t>(y) * vol.width + x];
            std::span<double> s = vol.at(x, y);
            for (int k = 0; k < vol.count; ++k) {
                warp_sample(src, ref_pose.position, ray, 1.0 / vol.inverse(x, y, k), src_pose, sample);
                s[k] = scaled_dot(ref.pixel(x, y), sample);
            }
        }
}

} // namespace detail

inline CostVolume build_volume(const FeatureMap& ref, const FeatureMap& src, const CameraPose& ref_pose,
                               const CameraPose& src_pose, const DepthHypotheses& hyp) {
    require(hyp.count() >= 2, "build_volume: need at least two candidates");
    CostVolume vol;
    vol.width = ref.width();
    vol.height = ref.height();
    vol.count = hyp.count();
    vol.d_min = hyp.d_min;
    vol.d_max = hyp.d_max;
    vol.step = (hyp.inverse.back() - hyp.inverse.front()) / (hyp.count() - 1);
    vol.base = Image(vol.width, vol.height, 1, hyp.inverse.front());
    detail::fill_volume(vol, ref, src, ref_pose, src_pose);
    return vol;
}

/// Softmax over candidates, weighted mean of the inverse depths, inverted.
inline Image softmax_depth(const CostVolume& vol) {
    Image depth(vol.width, vol.height, 1);
    std::vector<double> inv(vol.count);
    for (int y = 0; y < vol.height; ++y)
        for (int x = 0; x < vol.width; ++x) {
            for (int k = 0; k < vol.count; ++k) inv[k] = vol.inverse(x, y, k);
            depth.at(x, y) = 1.0 / softmax_inverse_depth(vol.at(x, y), inv);
        }
    return depth;
}

/// Adds a residual to a volume; receives the volume, the upsampled coarse
/// inverse depth (empty at the coarsest level) and the reference features.
using VolumeRefiner = std::function<void(CostVolume&, const Image&, const FeatureMap&)>;

/// Replaces every score by its mean over a (2r+1)^2 neighbourhood (horizontal
/// wrap, vertical clamp), candidate by candidate. Averaging matching costs
/// over a support window suppresses isolated false matches.
inline VolumeRefiner box_aggregation_refiner(int radius) {
    require(radius >= 0, "box_aggregation_refiner: radius must be non-negative");
    return [radius](CostVolume& vol, const Image&, const FeatureMap&) {
        if (radius == 0) return;
        const int w = vol.width, h = vol.height, n = vol.count;
        const double norm = 1.0 / ((2 * radius + 1) * (2 * radius + 1));
        tracked_vector<double> rows(vol.scores.size(), 0.0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double* dst = rows.data() + (static_cast<std::size_t>(y) * w + x) * n;
                for (int dx = -radius; dx <= radius; ++dx) {
                    const std::span<const double> src = std::as_const(vol).at(wrap_index(x + dx, w), y);
                    for (int k = 0; k < n; ++k) dst[k] += src[k];
                }
            }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                std::span<double> dst = vol.at(x, y);
                std::fill(dst.begin(), dst.end(), 0.0);
                for (int dy = -radius; dy <= radius; ++dy) {
                    const double* src = rows.data() + (static_cast<std::size_t>(clamp_index(y + dy, h)) * w + x) * n;
                    for (int k = 0; k < n; ++k) dst[k] += src[k];
                }
                for (double& v : dst) v *= norm;
            }
    };
}

struct CostVolumeConfig {
    double d_min = 0.1;
    double d_max = 100.0;
    int candidates = 128;  ///< at the coarsest level
    int coarsest = 3;
    FeatureProvider features = [](const Image& img, const FeatureFrame& frame) {
        return tangent_patch_features(img, frame);
    };
    VolumeRefiner refiner;  ///< identity when empty

    /// Candidate count and window width (in inverse depth) at level l.
    int level_candidates(int level) const { return candidates >> (coarsest - level); }
    double level_window(int level) const { return (1.0 / d_min - 1.0 / d_max) / (1 << (coarsest - level)); }

    void validate() const {
        require(d_min > 0.0 && d_max > d_min, "cost volume: need 0 < d_min < d_max");
        require(coarsest >= 1, "cost volume: coarsest level must be at least 1");
        require(level_candidates(1) >= 2, "cost volume: too few candidates for the finest refined level");
        require(static_cast<bool>(features), "cost volume: feature provider missing");
    }
};

struct LevelDepth {
    CostVolume volume;
    Image depth;
};

/// Volume and depth at level `level` searched around the coarser level's depth.
inline LevelDepth refine_level(const Image& coarse_depth, const FeatureMap& ref, const FeatureMap& src,
                               const CameraPose& ref_pose, const CameraPose& src_pose, int level,
                               const CostVolumeConfig& cfg) {
    cfg.validate();
    require(level >= 1 && level < cfg.coarsest, "refine_level: level must lie strictly between 0 and the coarsest level");
    require(coarse_depth.channels() == 1 && coarse_depth.width() * 2 == ref.width() &&
                coarse_depth.height() * 2 == ref.height(),
            "refine_level: coarse depth must be half the level resolution");
    Image coarse_inv(coarse_depth.width(), coarse_depth.height(), 1);
    for (std::size_t i = 0; i < coarse_inv.size(); ++i) coarse_inv.data()[i] = 1.0 / coarse_depth.data()[i];
    const Image center = upsample2x(coarse_inv);

    const double lo = 1.0 / cfg.d_max, hi = 1.0 / cfg.d_min;
    const double window = cfg.level_window(level);
    LevelDepth out;
    CostVolume& vol = out.volume;
    vol.width = ref.width();
    vol.height = ref.height();
    vol.count = cfg.level_candidates(level);
    vol.d_min = cfg.d_min;
    vol.d_max = cfg.d_max;
    vol.step = window / (vol.count - 1);
    vol.base = Image(vol.width, vol.height, 1);
    for (std::size_t i = 0; i < center.size(); ++i)
        vol.base.data()[i] = std::clamp(center.data()[i] - 0.5 * window, lo, hi - window);
    detail::fill_volume(vol, ref, src, ref_pose, src_pose);
    if (cfg.refiner) cfg.refiner(vol, center, ref);
    out.depth = softmax_depth(vol);
    return out;
}

/// Depths of one reference view at levels coarsest..1 (index l - 1).
struct ViewDepth {
    std::vector<Image> depth;
    std::vector<CostVolume> volume;
    bool degenerate = false;  ///< no baseline, so depth is not observable
};

/// Plane sweep at the coarsest level, then refinement down to level 1, for
/// each view of the pair with the other as source.
inline std::array<ViewDepth, 2> hierarchical_depth(const std::array<Image, 2>& images,
                                                   const std::array<CameraPose, 2>& poses,
                                                   const CostVolumeConfig& cfg, bool keep_volumes = false) {
    cfg.validate();
    const int factor = 1 << cfg.coarsest;
    for (const Image& img : images) {
        require_erp(img, "hierarchical_depth");
        require(img.width() % (2 * factor) == 0, "hierarchical_depth: width must be divisible by 2^(coarsest + 1)");
    }
    require_same_shape(images[0], images[1], "hierarchical_depth");
    for (const CameraPose& p : poses) p.validate();
    const bool degenerate = (poses[0].position - poses[1].position).norm() < 1e-9;

    // The axis sign must not depend on which view is listed first.
    Vec3 axis = poses[1].position - poses[0].position;
    for (int k = 0; k < 3; ++k)
        if (axis[k] != 0.0) {
            if (axis[k] < 0.0) axis = -axis;
            break;
        }
    std::array<std::vector<FeatureMap>, 2> feats;
    for (int i = 0; i < 2; ++i) {
        const FeatureFrame frame{poses[i], degenerate ? Vec3::Zero() : axis};
        feats[i].resize(cfg.coarsest + 1);
        for (int l = 1; l <= cfg.coarsest; ++l) feats[i][l] = cfg.features(downsample_box(images[i], 1 << l), frame);
    }

    std::array<ViewDepth, 2> out;
    for (int i = 0; i < 2; ++i) {
        const int j = 1 - i;
        ViewDepth& vd = out[i];
        vd.degenerate = degenerate;
        vd.depth.resize(cfg.coarsest);
        if (keep_volumes) vd.volume.resize(cfg.coarsest);

        CostVolume vol = build_volume(feats[i][cfg.coarsest], feats[j][cfg.coarsest], poses[i], poses[j],
                                      make_hypotheses(cfg.d_min, cfg.d_max, cfg.candidates));
        if (cfg.refiner) cfg.refiner(vol, Image(), feats[i][cfg.coarsest]);
        vd.depth[cfg.coarsest - 1] = softmax_depth(vol);
        if (keep_volumes) vd.volume[cfg.coarsest - 1] = std::move(vol);

        for (int l = cfg.coarsest - 1; l >= 1; --l) {
            LevelDepth ld = refine_level(vd.depth[l], feats[i][l], feats[j][l], poses[i], poses[j], l, cfg);
            vd.depth[l - 1] = std::move(ld.depth);
            if (keep_volumes) vd.volume[l - 1] = std::move(ld.volume);
        }
    }
    return out;
}

} // namespace panogs
