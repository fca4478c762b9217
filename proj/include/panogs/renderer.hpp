#pragma once

// Differentiable Gaussian splatting into an equirectangular panorama: each
// Gaussian is EWA-projected into the six 90-degree cube faces, every face is
// composited front to back on a 16x16 tile grid, and the padded faces are
// stitched into the panorama. The backward pass replays the compositing from
// a tape in reverse.
//
// Output rasters have four channels: premultiplied RGB and accumulated alpha
// (transparent black background).

#include "panogs/core/error.hpp"
#include "panogs/core/image.hpp"
#include "panogs/core/math.hpp"
#include "panogs/core/memory.hpp"
#include "panogs/cubemap.hpp"
#include "panogs/gaussian.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

namespace panogs {

inline constexpr double kNearPlane = 0.05;
inline constexpr double kCovDilation = 0.3;
inline constexpr double kAlphaMax = 0.99;
inline constexpr double kMinTransmittance = 1e-4;
/// Half the squared Mahalanobis radius of the 99%-mass ellipse (ln 100).
inline constexpr double kSupportPower = 4.605170185988091;
/// exp(-kSupportPower); the kernel is shifted by this so it vanishes on the ellipse.
inline constexpr double kSupportFloor = 0.01;
/// Bound on |x/z| and |y/z| used when linearizing the projection (1.3 x tan 45 deg).
inline constexpr double kJacobianGuard = 1.3;
inline constexpr int kTileSize = 16;
inline constexpr int kRenderChannels = 4;

enum class FaceMode { Batched, Sequential };

struct RenderConfig {
    int width = 0;
    int height = 0;
    int face_resolution = 0;
    FaceMode mode = FaceMode::Batched;
    std::array<bool, kFaceCount> active_faces{true, true, true, true, true, true};

    void validate() const {
        require(width > 0 && width == 2 * height, "render: panorama must have width == 2 * height > 0");
        require(face_resolution >= 8, "render: face resolution must be at least 8");
    }
};

inline RenderConfig make_render_config(int width, int height, int face_resolution = 0,
                                       FaceMode mode = FaceMode::Batched) {
    RenderConfig cfg;
    cfg.width = width;
    cfg.height = height;
    cfg.face_resolution = face_resolution > 0 ? face_resolution : height;
    cfg.mode = mode;
    return cfg;
}

struct Projected2DGaussian {
    Face face = Face::PosZ;
    std::uint32_t index = 0; ///< position in the source GaussianSet
    Vec2 mean = Vec2::Zero();
    Mat2 cov = Mat2::Zero(); ///< dilated image-space covariance
    Vec3 conic = Vec3::Zero(); ///< inverse covariance (a, b, c) of [[a, b], [b, c]]
    double depth = 0.0;
    double opacity = 0.0;
    Vec3 rgb = Vec3::Zero();
    int x_min = 0, x_max = -1, y_min = 0, y_max = -1; ///< clipped pixel bbox of the support
};

/// Rotation taking world vectors into the face frame (right, down, forward).
inline Mat3 world_to_face(const CameraPose& pose, Face face) {
    return face_rows(face) * pose.rotation.conjugate().toRotationMatrix();
}

/// Pinhole intrinsics of an R x R face with a 90-degree field of view.
inline double face_focal(int resolution) { return resolution / 2.0; }
inline double face_center(int resolution) { return resolution / 2.0 - 0.5; }

/// Image-space position of a face-frame point.
inline Vec2 face_project(const Vec3& t, int resolution) {
    const double f = face_focal(resolution), c = face_center(resolution);
    return {f * t.x() / t.z() + c, f * t.y() / t.z() + c};
}

/// Point at which the projection is linearized: t with x/z and y/z clamped
/// to the guard band, so splats far outside the face keep a sane footprint.
inline Vec3 linearization_point(const Vec3& t) {
    const double lim = kJacobianGuard;
    return {std::clamp(t.x() / t.z(), -lim, lim) * t.z(), std::clamp(t.y() / t.z(), -lim, lim) * t.z(), t.z()};
}

/// Jacobian of `face_project` at t.
inline Mat23 face_projection_jacobian(const Vec3& t, int resolution) {
    const double f = face_focal(resolution);
    const double iz = 1.0 / t.z(), iz2 = iz * iz;
    Mat23 j;
    j << f * iz, 0.0, -f * t.x() * iz2, 0.0, f * iz, -f * t.y() * iz2;
    return j;
}

/// Color of a Gaussian seen from the camera center.
inline Vec3 view_color(const Gaussian& g, int sh_degree, const CameraPose& pose) {
    return sh_eval(g.sh, sh_degree, (g.mean - pose.position).normalized());
}

inline std::optional<Projected2DGaussian> project_to_face(const Gaussian& g, int sh_degree, const CameraPose& pose,
                                                          Face face, int resolution, std::uint32_t index = 0) {
    const Mat3 m = world_to_face(pose, face);
    const Vec3 t = m * (g.mean - pose.position);
    if (!(t.z() > kNearPlane)) return std::nullopt;

    Projected2DGaussian p;
    p.face = face;
    p.index = index;
    p.depth = t.z();
    p.mean = face_project(t, resolution);
    const Mat23 tm = face_projection_jacobian(linearization_point(t), resolution) * m;
    p.cov = tm * g.covariance() * tm.transpose();
    p.cov(0, 0) += kCovDilation;
    p.cov(1, 1) += kCovDilation;
    p.cov(1, 0) = p.cov(0, 1);
    const double det = p.cov(0, 0) * p.cov(1, 1) - p.cov(0, 1) * p.cov(0, 1);
    if (!(det > 0.0) || !std::isfinite(det)) return std::nullopt;
    p.conic = {p.cov(1, 1) / det, -p.cov(0, 1) / det, p.cov(0, 0) / det};

    const double ex = std::sqrt(2.0 * kSupportPower * p.cov(0, 0));
    const double ey = std::sqrt(2.0 * kSupportPower * p.cov(1, 1));
    // Padded face rectangle in continuous coordinates, widened by the cull margin.
    const double lo = -1.5 - 1.0, hi = resolution + 0.5 + 1.0;
    if (p.mean.x() + ex < lo || p.mean.x() - ex > hi || p.mean.y() + ey < lo || p.mean.y() - ey > hi)
        return std::nullopt;

    auto clip = [&](double v) { return static_cast<int>(std::clamp(v, -2.0, resolution + 1.0)); };
    p.x_min = std::max(0, clip(std::floor(p.mean.x() - ex)) - 1);
    p.x_max = std::min(resolution - 1, clip(std::ceil(p.mean.x() + ex)) + 1);
    p.y_min = std::max(0, clip(std::floor(p.mean.y() - ey)) - 1);
    p.y_max = std::min(resolution - 1, clip(std::ceil(p.mean.y() + ey)) + 1);

    p.opacity = g.opacity;
    p.rgb = view_color(g, sh_degree, pose);
    return p;
}

/// Gaussians retained by one face, in compositing order (depth, then index).
inline tracked_vector<Projected2DGaussian> project_face(const GaussianSet& set, const CameraPose& pose, Face face,
                                                        int resolution) {
    tracked_vector<Projected2DGaussian> list;
    for (std::size_t i = 0; i < set.size(); ++i)
        if (auto p = project_to_face(set.items[i], set.sh_degree, pose, face, resolution, static_cast<std::uint32_t>(i)))
            list.push_back(*p);
    std::sort(list.begin(), list.end(), [](const Projected2DGaussian& a, const Projected2DGaussian& b) {
        return a.depth != b.depth ? a.depth < b.depth : a.index < b.index;
    });
    return list;
}

namespace detail {

/// Opacity of `p` at pixel (x, y); false outside the 99% ellipse.
inline bool splat_alpha(const Projected2DGaussian& p, double x, double y, double& alpha, double& power,
                        double& kernel) {
    const double dx = x - p.mean.x(), dy = y - p.mean.y();
    power = 0.5 * (p.conic[0] * dx * dx + p.conic[2] * dy * dy) + p.conic[1] * dx * dy;
    if (power > kSupportPower) return false;
    kernel = (std::exp(-power) - kSupportFloor) / (1.0 - kSupportFloor);
    alpha = std::min(kAlphaMax, p.opacity * kernel);
    return true;
}

struct PixelResult {
    std::array<double, kRenderChannels> rgba{};
    double transmittance = 1.0;
    std::uint32_t count = 0; ///< entries of `order` consumed, up to the last composited one
};

/// Front-to-back compositing of the entries `order` (indices into `list`) at (x, y).
inline PixelResult composite(std::span<const Projected2DGaussian> list, std::span<const std::uint32_t> order,
                             double x, double y) {
    PixelResult r;
    double t = 1.0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        const Projected2DGaussian& p = list[order[k]];
        double a, power, kernel;
        if (!splat_alpha(p, x, y, a, power, kernel)) continue;
        const double next = t * (1.0 - a);
        if (next < kMinTransmittance) break;
        for (int c = 0; c < 3; ++c) r.rgba[c] += p.rgb[c] * a * t;
        r.rgba[3] += a * t;
        t = next;
        r.count = static_cast<std::uint32_t>(k + 1);
    }
    r.transmittance = t;
    return r;
}

inline std::uint64_t fnv_mix(std::uint64_t h, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xffu;
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace detail

/// Content hash of a Gaussian set, used to reject stale tapes.
inline std::uint64_t fingerprint(const GaussianSet& set) {
    std::uint64_t h = 14695981039346656037ull;
    h = detail::fnv_mix(h, set.sh_degree);
    h = detail::fnv_mix(h, static_cast<double>(set.size()));
    for (const Gaussian& g : set.items) {
        for (int i = 0; i < 3; ++i) h = detail::fnv_mix(h, g.mean[i]);
        h = detail::fnv_mix(h, g.opacity);
        for (int i = 0; i < 3; ++i) h = detail::fnv_mix(h, g.scale[i]);
        for (int i = 0; i < 4; ++i) h = detail::fnv_mix(h, g.rotation[i]);
        for (double s : g.sh) h = detail::fnv_mix(h, s);
    }
    return h;
}

/// Everything needed to replay one face's compositing in reverse.
struct FaceTape {
    Face face = Face::PosZ;
    int resolution = 0;
    tracked_vector<Projected2DGaussian> list;
    tracked_vector<std::uint32_t> tile_offsets; ///< tiles + 1 prefix offsets into tile_entries
    tracked_vector<std::uint32_t> tile_entries;
    tracked_vector<double> transmittance;       ///< final T per pixel
    tracked_vector<std::uint32_t> count;        ///< consumed entries per pixel
};

inline int tiles_per_side(int resolution) { return (resolution + kTileSize - 1) / kTileSize; }

/// Tiled rasterization of a sorted projected list into an R x R x 4 raster.
/// When `tape` is given it receives the tile lists and per-pixel state.
inline Image rasterize_face(tracked_vector<Projected2DGaussian> list, int resolution, Face face = Face::PosZ,
                            FaceTape* tape = nullptr) {
    require(resolution > 0, "rasterize_face: resolution must be positive");
    const int nt = tiles_per_side(resolution);
    tracked_vector<std::uint32_t> offsets(static_cast<std::size_t>(nt) * nt + 1, 0);
    for (const auto& p : list)
        for (int ty = p.y_min / kTileSize; p.y_min <= p.y_max && ty <= p.y_max / kTileSize; ++ty)
            for (int tx = p.x_min / kTileSize; p.x_min <= p.x_max && tx <= p.x_max / kTileSize; ++tx)
                ++offsets[static_cast<std::size_t>(ty) * nt + tx + 1];
    std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
    tracked_vector<std::uint32_t> entries(offsets.back());
    {
        tracked_vector<std::uint32_t> fill(offsets.begin(), offsets.end() - 1);
        for (std::size_t i = 0; i < list.size(); ++i) {
            const auto& p = list[i];
            for (int ty = p.y_min / kTileSize; p.y_min <= p.y_max && ty <= p.y_max / kTileSize; ++ty)
                for (int tx = p.x_min / kTileSize; p.x_min <= p.x_max && tx <= p.x_max / kTileSize; ++tx)
                    entries[fill[static_cast<std::size_t>(ty) * nt + tx]++] = static_cast<std::uint32_t>(i);
        }
    }

    Image out(resolution, resolution, kRenderChannels);
    tracked_vector<double> trans;
    tracked_vector<std::uint32_t> counts;
    if (tape) {
        trans.resize(static_cast<std::size_t>(resolution) * resolution);
        counts.resize(trans.size());
    }
    for (int y = 0; y < resolution; ++y) {
        const int ty = y / kTileSize;
        for (int x = 0; x < resolution; ++x) {
            const std::size_t tile = static_cast<std::size_t>(ty) * nt + x / kTileSize;
            const std::span<const std::uint32_t> order(entries.data() + offsets[tile], offsets[tile + 1] - offsets[tile]);
            const detail::PixelResult r = detail::composite(list, order, x, y);
            for (int c = 0; c < kRenderChannels; ++c) out.at(x, y, c) = r.rgba[c];
            if (tape) {
                trans[static_cast<std::size_t>(y) * resolution + x] = r.transmittance;
                counts[static_cast<std::size_t>(y) * resolution + x] = r.count;
            }
        }
    }
    if (tape) {
        tape->face = face;
        tape->resolution = resolution;
        tape->list = std::move(list);
        tape->tile_offsets = std::move(offsets);
        tape->tile_entries = std::move(entries);
        tape->transmittance = std::move(trans);
        tape->count = std::move(counts);
    }
    return out;
}

/// Reference rasterizer: every pixel walks the whole sorted list.
inline Image rasterize_face_exhaustive(std::span<const Projected2DGaussian> list, int resolution) {
    std::vector<std::uint32_t> order(list.size());
    std::iota(order.begin(), order.end(), 0u);
    Image out(resolution, resolution, kRenderChannels);
    for (int y = 0; y < resolution; ++y)
        for (int x = 0; x < resolution; ++x) {
            const detail::PixelResult r = detail::composite(list, order, x, y);
            for (int c = 0; c < kRenderChannels; ++c) out.at(x, y, c) = r.rgba[c];
        }
    return out;
}

/// Renders one face of the cube (unpadded, R x R x 4).
inline Image render_face(const GaussianSet& set, const CameraPose& pose, Face face, int resolution,
                         FaceTape* tape = nullptr) {
    return rasterize_face(project_face(set, pose, face, resolution), resolution, face, tape);
}

struct RenderTape {
    RenderConfig config;
    CameraPose pose;
    std::uint64_t fingerprint = 0;
    std::array<std::optional<FaceTape>, kFaceCount> faces;
    StitchMap map;

    std::size_t bytes() const {
        std::size_t b = map.entries.size() * sizeof(StitchMap::Entry);
        for (const auto& f : faces)
            if (f)
                b += f->list.size() * sizeof(Projected2DGaussian) +
                     (f->tile_offsets.size() + f->tile_entries.size() + f->count.size()) * sizeof(std::uint32_t) +
                     f->transmittance.size() * sizeof(double);
        return b;
    }
};

struct RenderResult {
    Image image; ///< W x H x 4: premultiplied RGB + alpha
    std::optional<RenderTape> tape;

    Image rgb() const { return slice_channels(image, 0, 3); }
    Image alpha() const { return slice_channels(image, 3, 1); }
};

inline RenderResult render_pano(const GaussianSet& set, const CameraPose& pose, const RenderConfig& cfg,
                                bool keep_tape = false) {
    cfg.validate();
    pose.validate();
    const int r = cfg.face_resolution;
    RenderResult result;
    std::optional<RenderTape> tape;
    if (keep_tape) {
        tape.emplace();
        tape->config = cfg;
        tape->pose = pose;
        tape->fingerprint = fingerprint(set);
    }
    CubemapFaceSet faces(r, kRenderChannels, 0);
    if (cfg.mode == FaceMode::Batched) {
        std::array<tracked_vector<Projected2DGaussian>, kFaceCount> lists;
        for (Face f : kAllFaces)
            if (cfg.active_faces[static_cast<int>(f)]) lists[static_cast<int>(f)] = project_face(set, pose, f, r);
        for (Face f : kAllFaces) {
            const int i = static_cast<int>(f);
            if (!cfg.active_faces[i]) continue;
            FaceTape* ft = keep_tape ? &tape->faces[i].emplace() : nullptr;
            faces[f] = rasterize_face(std::move(lists[i]), r, f, ft);
        }
    } else {
        for (Face f : kAllFaces) {
            const int i = static_cast<int>(f);
            if (!cfg.active_faces[i]) continue;
            FaceTape* ft = keep_tape ? &tape->faces[i].emplace() : nullptr;
            faces[f] = render_face(set, pose, f, r, ft);
        }
    }
    StitchMap map = make_stitch_map(cfg.width, cfg.height, r);
    result.image = stitch(pad_faces(faces), map);
    if (keep_tape) {
        tape->map = std::move(map);
        result.tape = std::move(tape);
    }
    return result;
}

/// Composites a premultiplied RGBA panorama over a constant background.
inline Image composite_background(const Image& rgba, const Vec3& background) {
    require(rgba.channels() == kRenderChannels, "composite_background: expected an RGBA image");
    Image out(rgba.width(), rgba.height(), 3);
    for (int y = 0; y < rgba.height(); ++y)
        for (int x = 0; x < rgba.width(); ++x)
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = rgba.at(x, y, c) + (1.0 - rgba.at(x, y, 3)) * background[c];
    return out;
}

/// Reference panorama evaluated per ERP pixel: each pixel composites the
/// Gaussians of its face at the exact continuous face coordinate of its ray.
inline Image render_pano_dense_oracle(const GaussianSet& set, const CameraPose& pose, const RenderConfig& cfg) {
    cfg.validate();
    const int r = cfg.face_resolution;
    std::array<tracked_vector<Projected2DGaussian>, kFaceCount> lists;
    std::array<std::vector<std::uint32_t>, kFaceCount> orders;
    for (Face f : kAllFaces) {
        const int i = static_cast<int>(f);
        lists[i] = project_face(set, pose, f, r);
        orders[i].resize(lists[i].size());
        std::iota(orders[i].begin(), orders[i].end(), 0u);
    }
    Image out(cfg.width, cfg.height, kRenderChannels);
    for (int v = 0; v < cfg.height; ++v)
        for (int u = 0; u < cfg.width; ++u) {
            const FaceUV fuv = dir_to_face_uv(pixel_to_dir(u, v, cfg.width, cfg.height), r);
            const int i = static_cast<int>(fuv.face);
            if (!cfg.active_faces[i]) continue;
            const detail::PixelResult px = detail::composite(lists[i], orders[i], fuv.u, fuv.v);
            for (int c = 0; c < kRenderChannels; ++c) out.at(u, v, c) = px.rgba[c];
        }
    return out;
}

// ---------------------------------------------------------------------------
// Backward

/// Gradient w.r.t. one projected entry.
struct ProjectedGrad {
    Vec2 mean = Vec2::Zero();
    Vec3 conic = Vec3::Zero();
    double opacity = 0.0;
    Vec3 rgb = Vec3::Zero();
};

/// Adjoint of `project_to_face` for entry `p`; accumulates into `out`.
inline void project_to_face_backward(const Gaussian& g, int sh_degree, const CameraPose& pose,
                                     const Projected2DGaussian& p, int resolution, const ProjectedGrad& gp,
                                     Gaussian& out) {
    const Mat3 m = world_to_face(pose, p.face);
    const Vec3 t = m * (g.mean - pose.position);
    const Vec3 tl = linearization_point(t);
    const Mat23 j = face_projection_jacobian(tl, resolution);
    const Mat23 tm = j * m;
    const Mat3 sigma = g.covariance();

    // conic = inverse(cov): dCov = -conic * dConic * conic (symmetric form).
    Mat2 conic;
    conic << p.conic[0], p.conic[1], p.conic[1], p.conic[2];
    Mat2 dconic;
    dconic << gp.conic[0], 0.5 * gp.conic[1], 0.5 * gp.conic[1], gp.conic[2];
    const Mat2 dcov = -conic * dconic * conic;

    const Mat3 dsigma = tm.transpose() * dcov * tm;
    const Mat23 dtm = 2.0 * dcov * tm * sigma;
    const Mat23 dj = dtm * m.transpose();

    const double f = face_focal(resolution);
    const double iz = 1.0 / t.z(), iz2 = iz * iz;
    // Mean projection.
    Vec3 dt(gp.mean.x() * f * iz, gp.mean.y() * f * iz,
            -gp.mean.x() * f * t.x() * iz2 - gp.mean.y() * f * t.y() * iz2);
    // Jacobian entries depend on the (clamped) linearization point.
    const double lx = tl.x(), ly = tl.y(), lz3 = iz2 * iz;
    const double dlx = -dj(0, 2) * f * iz2, dly = -dj(1, 2) * f * iz2;
    double dlz = -(dj(0, 0) + dj(1, 1)) * f * iz2 + 2.0 * f * (dj(0, 2) * lx + dj(1, 2) * ly) * lz3;
    // lx = clamp(tx/tz) * tz: passes straight through when unclamped, else scales with tz.
    if (std::abs(t.x() / t.z()) < kJacobianGuard) dt.x() += dlx;
    else dlz += dlx * lx / t.z();
    if (std::abs(t.y() / t.z()) < kJacobianGuard) dt.y() += dly;
    else dlz += dly * ly / t.z();
    dt.z() += dlz;
    out.mean += m.transpose() * dt;

    // sigma = A A^T with A = R(q) diag(s).
    const Mat3 rq = rotation_from_wxyz(g.rotation);
    const Mat3 a = rq * g.scale.asDiagonal();
    const Mat3 da = 2.0 * dsigma * a;
    Mat3 drq;
    for (int i = 0; i < 3; ++i) {
        out.scale[i] += da.col(i).dot(rq.col(i));
        drq.col(i) = da.col(i) * g.scale[i];
    }
    out.rotation += rotation_from_wxyz_backward(g.rotation, drq);
    out.opacity += gp.opacity;

    const Vec3 v = g.mean - pose.position;
    const double len = v.norm();
    const Vec3 dir = v / len;
    Vec3 ddir = Vec3::Zero();
    sh_eval_backward(g.sh, sh_degree, dir, gp.rgb, out.sh, ddir);
    out.mean += (ddir - dir * dir.dot(ddir)) / len;
}

/// Replays one face in reverse. `grad_face` is the R x R x 4 gradient of the
/// unpadded face raster; parameter gradients are added to `grads`.
inline void face_backward(const FaceTape& tape, const GaussianSet& set, const CameraPose& pose, const Image& grad_face,
                          std::span<Gaussian> grads) {
    const int r = tape.resolution;
    require(grad_face.width() == r && grad_face.height() == r && grad_face.channels() == kRenderChannels,
            "face_backward: gradient raster does not match the tape");
    const int nt = tiles_per_side(r);
    tracked_vector<ProjectedGrad> pg(tape.list.size());
    for (int y = 0; y < r; ++y)
        for (int x = 0; x < r; ++x) {
            const std::size_t pix = static_cast<std::size_t>(y) * r + x;
            const std::span<const double> g = grad_face.pixel(x, y);
            if (g[0] == 0.0 && g[1] == 0.0 && g[2] == 0.0 && g[3] == 0.0) continue;
            const std::size_t tile = static_cast<std::size_t>(y / kTileSize) * nt + x / kTileSize;
            const std::uint32_t* order = tape.tile_entries.data() + tape.tile_offsets[tile];
            double t = tape.transmittance[pix];
            std::array<double, kRenderChannels> behind{}; // color composited behind the current entry
            std::array<double, kRenderChannels> last_color{};
            double last_alpha = 0.0;
            for (std::uint32_t k = tape.count[pix]; k-- > 0;) {
                const std::uint32_t idx = order[k];
                const Projected2DGaussian& p = tape.list[idx];
                double a, power, kernel;
                if (!detail::splat_alpha(p, x, y, a, power, kernel)) continue;
                t /= (1.0 - a);
                const std::array<double, kRenderChannels> color{p.rgb[0], p.rgb[1], p.rgb[2], 1.0};
                double da = 0.0;
                for (int c = 0; c < kRenderChannels; ++c) {
                    behind[c] = last_alpha * last_color[c] + (1.0 - last_alpha) * behind[c];
                    da += (color[c] - behind[c]) * g[c];
                }
                da *= t;
                for (int c = 0; c < 3; ++c) pg[idx].rgb[c] += a * t * g[c];
                last_alpha = a;
                last_color = color;
                if (p.opacity * kernel >= kAlphaMax) continue;
                pg[idx].opacity += kernel * da;
                const double dpower = -p.opacity * std::exp(-power) / (1.0 - kSupportFloor) * da;
                const double dx = x - p.mean.x(), dy = y - p.mean.y();
                pg[idx].mean.x() -= (p.conic[0] * dx + p.conic[1] * dy) * dpower;
                pg[idx].mean.y() -= (p.conic[1] * dx + p.conic[2] * dy) * dpower;
                pg[idx].conic[0] += 0.5 * dx * dx * dpower;
                pg[idx].conic[1] += dx * dy * dpower;
                pg[idx].conic[2] += 0.5 * dy * dy * dpower;
            }
        }
    for (std::size_t i = 0; i < tape.list.size(); ++i) {
        const Projected2DGaussian& p = tape.list[i];
        project_to_face_backward(set.items[p.index], set.sh_degree, pose, p, r, pg[i], grads[p.index]);
    }
}

/// Gradient of the unpadded face `face` given the panorama gradient: the
/// stitch adjoint of that face and of its neighbors' borders.
inline Image face_gradient(const Image& grad_pano, const StitchMap& map, Face face) {
    Image g(map.resolution, map.resolution, grad_pano.channels());
    const auto& adjacency = face_adjacency();
    for (Face p : kAllFaces) {
        bool touches = p == face;
        for (const EdgeLink& link : adjacency[static_cast<int>(p)]) touches = touches || link.neighbor == face;
        if (!touches) continue;
        pad_face_backward_to(p, stitch_backward_face(grad_pano, map, p), face, g);
    }
    return g;
}

inline void check_tape(const RenderTape& tape, const GaussianSet& set) {
    if (tape.fingerprint != fingerprint(set))
        throw VerificationError("render_backward: tape does not belong to this Gaussian set");
    for (Face f : kAllFaces)
        if (tape.config.active_faces[static_cast<int>(f)] && !tape.faces[static_cast<int>(f)])
            throw VerificationError("render_backward: tape is missing a face");
}

/// Adjoint of `render_pano`. `grad_pano` is W x H x 4 (RGB + alpha) or
/// W x H x 3 (RGB only).
inline tracked_vector<Gaussian> render_backward(const RenderTape& tape, const GaussianSet& set,
                                                const Image& grad_pano) {
    check_tape(tape, set);
    require(grad_pano.width() == tape.config.width && grad_pano.height() == tape.config.height,
            "render_backward: gradient size does not match the render");
    require(grad_pano.channels() == 3 || grad_pano.channels() == kRenderChannels,
            "render_backward: gradient must have 3 or 4 channels");
    Image g4 = grad_pano;
    if (grad_pano.channels() == 3) g4 = concat_channels(grad_pano, Image(grad_pano.width(), grad_pano.height(), 1));
    tracked_vector<Gaussian> grads(set.size(), Gaussian::zero());
    for (Face f : kAllFaces) {
        const int i = static_cast<int>(f);
        if (!tape.config.active_faces[i]) continue;
        face_backward(*tape.faces[i], set, tape.pose, face_gradient(g4, tape.map, f), grads);
    }
    return grads;
}

} // namespace panogs
