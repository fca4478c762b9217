#pragma once

// Procedural box-room scenes with exact ground-truth depth.

#include "panogs/core/error.hpp"
#include "panogs/core/image.hpp"
#include "panogs/core/math.hpp"
#include "panogs/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace panogs {

struct TextureSpec {
    std::uint64_t seed = 1;
    double checker_size = 0.5;     ///< meters per checker square
    double checker_contrast = 0.1;
    double noise_frequency = 4.0;  ///< lattice cells per meter of the first octave
    double noise_amplitude = 1.0;
    int octaves = 4;
    double persistence = 0.8;      ///< amplitude ratio between successive octaves
};

struct SceneSpec {
    Vec3 half_extents{3.0, 1.5, 3.0};
    TextureSpec texture;
    std::vector<CameraPose> poses;
    int width = 256;
    int supersample = 2;

    void validate() const {
        require(half_extents.minCoeff() > 0.0, "scene: room half-extents must be positive");
        require(width > 0 && width % 2 == 0, "scene: width must be a positive even number");
        require(supersample >= 1, "scene: supersample must be at least 1");
        require(!poses.empty(), "scene: at least one camera pose is required");
        for (const CameraPose& p : poses) {
            p.validate();
            require((p.position.cwiseAbs() - half_extents).maxCoeff() < 0.0, "scene: camera must be strictly inside the room");
        }
    }
};

struct SceneViews {
    std::vector<Image> images; ///< RGB in [0, 1]
    std::vector<Image> depths; ///< range along each pixel's ray, meters
};

namespace detail {

inline std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline double lattice_value(std::uint64_t seed, std::int64_t i, std::int64_t j, std::int64_t k) {
    std::uint64_t h = splitmix(seed);
    h = splitmix(h ^ static_cast<std::uint64_t>(i));
    h = splitmix(h ^ static_cast<std::uint64_t>(j));
    h = splitmix(h ^ static_cast<std::uint64_t>(k));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

/// Trilinear value noise in [0, 1).
inline double value_noise(std::uint64_t seed, const Vec3& p) {
    const double fx = std::floor(p.x()), fy = std::floor(p.y()), fz = std::floor(p.z());
    const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy), iz = static_cast<std::int64_t>(fz);
    const double tx = smoothstep(p.x() - fx), ty = smoothstep(p.y() - fy), tz = smoothstep(p.z() - fz);
    double acc = 0.0;
    for (int c = 0; c < 8; ++c) {
        const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
        const double w = (dx ? tx : 1 - tx) * (dy ? ty : 1 - ty) * (dz ? tz : 1 - tz);
        acc += w * lattice_value(seed, ix + dx, iy + dy, iz + dz);
    }
    return acc;
}

} // namespace detail

/// Distance from `origin` (inside the box) to the wall hit along unit `dir`.
inline double ray_box_range(const Vec3& origin, const Vec3& dir, const Vec3& half_extents) {
    double t = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        if (dir[a] > 0.0) t = std::min(t, (half_extents[a] - origin[a]) / dir[a]);
        else if (dir[a] < 0.0) t = std::min(t, (-half_extents[a] - origin[a]) / dir[a]);
    }
    return t;
}

/// Wall colour at a point on the room surface.
inline Vec3 wall_color(const TextureSpec& tex, const Vec3& half_extents, const Vec3& p) {
    // The wall is the axis where the point is closest to the boundary.
    int axis = 0;
    double best = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        const double gap = half_extents[a] - std::abs(p[a]);
        if (gap < best) {
            best = gap;
            axis = a;
        }
    }
    const int wall = 2 * axis + (p[axis] > 0.0 ? 0 : 1);
    static constexpr std::array<std::array<double, 3>, 6> kTint{{{0.95, 0.65, 0.55},
                                                                 {0.55, 0.8, 0.95},
                                                                 {0.9, 0.9, 0.85},
                                                                 {0.8, 0.75, 0.65},
                                                                 {0.65, 0.9, 0.6},
                                                                 {0.85, 0.7, 0.95}}};

    const int u_axis = (axis + 1) % 3, v_axis = (axis + 2) % 3;
    const auto cu = static_cast<std::int64_t>(std::floor(p[u_axis] / tex.checker_size));
    const auto cv = static_cast<std::int64_t>(std::floor(p[v_axis] / tex.checker_size));
    const double checker = ((cu + cv) & 1) ? 1.0 : -1.0;

    double noise = 0.0, amp = 1.0, norm = 0.0, freq = tex.noise_frequency;
    for (int o = 0; o < tex.octaves; ++o) {
        noise += amp * detail::value_noise(tex.seed + 7919 * o, p * freq);
        norm += amp;
        amp *= tex.persistence;
        freq *= 2.0;
    }
    noise = noise / norm - 0.5;

    const double shade = 0.5 + tex.checker_contrast * 0.5 * checker + tex.noise_amplitude * noise;
    Vec3 rgb;
    for (int c = 0; c < 3; ++c) rgb[c] = std::clamp(kTint[wall][c] * (0.1 + 0.9 * shade), 0.0, 1.0);
    return rgb;
}

/// Exact range per pixel centre of a width x width/2 panorama taken from `pose`.
inline Image scene_depth(const SceneSpec& spec, const CameraPose& pose, int width) {
    const int height = width / 2;
    Image depth(width, height, 1);
    for (int v = 0; v < height; ++v)
        for (int u = 0; u < width; ++u)
            depth.at(u, v) = ray_box_range(pose.position, pose.to_world(pixel_to_dir(u, v, width, height)), spec.half_extents);
    return depth;
}

inline Image scene_image(const SceneSpec& spec, const CameraPose& pose, int width) {
    const int height = width / 2;
    const int s = spec.supersample;
    Image img(width, height, 3);
    for (int v = 0; v < height; ++v)
        for (int u = 0; u < width; ++u) {
            Vec3 acc = Vec3::Zero();
            for (int sy = 0; sy < s; ++sy)
                for (int sx = 0; sx < s; ++sx) {
                    const Vec3 d = pose.to_world(
                        pixel_to_dir(u - 0.5 + (sx + 0.5) / s, v - 0.5 + (sy + 0.5) / s, width, height));
                    const Vec3 hit = pose.position + ray_box_range(pose.position, d, spec.half_extents) * d;
                    acc += wall_color(spec.texture, spec.half_extents, hit);
                }
            acc /= s * s;
            for (int c = 0; c < 3; ++c) img.at(u, v, c) = acc[c];
        }
    return img;
}

inline SceneViews synth_scene(const SceneSpec& spec) {
    spec.validate();
    SceneViews out;
    for (const CameraPose& pose : spec.poses) {
        out.images.push_back(scene_image(spec, pose, spec.width));
        out.depths.push_back(scene_depth(spec, pose, spec.width));
    }
    return out;
}

/// Two cameras `baseline` meters apart along `axis`, symmetric about `center`.
inline std::vector<CameraPose> stereo_pair(const Vec3& center, const Vec3& axis, double baseline,
                                           const Quat& rotation = Quat::Identity()) {
    const Vec3 half = 0.5 * baseline * axis.normalized();
    return {make_pose(center - half, rotation), make_pose(center + half, rotation)};
}

} // namespace panogs
