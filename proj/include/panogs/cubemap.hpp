#pragma once

// Cubemap addressing, one-pixel face padding and bilinear stitching of six
// 90-degree perspective faces into an equirectangular panorama.

#include "panogs/core/error.hpp"
#include "panogs/core/image.hpp"
#include "panogs/core/math.hpp"
#include "panogs/geometry.hpp"

#include <array>
#include <cmath>
#include <string_view>

namespace panogs {

/// Face keys in lexicographic order of their names ("+X" < "+Y" < ... < "-Z").
/// This order is also the fixed face processing order.
enum class Face : int { PosX = 0, PosY, PosZ, NegX, NegY, NegZ };

inline constexpr int kFaceCount = 6;
inline constexpr std::array<Face, kFaceCount> kAllFaces{Face::PosX, Face::PosY, Face::PosZ,
                                                        Face::NegX, Face::NegY, Face::NegZ};

inline constexpr std::string_view face_name(Face f) {
    constexpr std::array<std::string_view, kFaceCount> names{"+X", "+Y", "+Z", "-X", "-Y", "-Z"};
    return names[static_cast<int>(f)];
}

/// Pinhole frame of a face: image u grows along `right`, v along `down`.
struct FaceFrame {
    Vec3 forward;
    Vec3 right;
    Vec3 down;
};

inline const FaceFrame& face_frame(Face f) {
    static const std::array<FaceFrame, kFaceCount> frames{{
        {{1, 0, 0}, {0, 0, -1}, {0, -1, 0}},  // +X
        {{0, 1, 0}, {1, 0, 0}, {0, 0, 1}},    // +Y
        {{0, 0, 1}, {1, 0, 0}, {0, -1, 0}},   // +Z
        {{-1, 0, 0}, {0, 0, 1}, {0, -1, 0}},  // -X
        {{0, -1, 0}, {1, 0, 0}, {0, 0, -1}},  // -Y
        {{0, 0, -1}, {-1, 0, 0}, {0, -1, 0}}, // -Z
    }};
    return frames[static_cast<int>(f)];
}

/// Camera-from-face rotation matrix rows: (right, down, forward).
inline Mat3 face_rows(Face f) {
    const FaceFrame& fr = face_frame(f);
    Mat3 m;
    m.row(0) = fr.right.transpose();
    m.row(1) = fr.down.transpose();
    m.row(2) = fr.forward.transpose();
    return m;
}

struct FaceUV {
    Face face = Face::PosZ;
    double u = 0.0;
    double v = 0.0;
};

/// Face and continuous face coordinates of a camera-frame direction. Ties on
/// face boundaries go to the first face in key order.
inline FaceUV dir_to_face_uv(const Vec3& d, int resolution) {
    const double ax = std::abs(d.x()), ay = std::abs(d.y()), az = std::abs(d.z());
    const double m = std::max({ax, ay, az});
    Face face;
    if (ax == m && d.x() > 0) face = Face::PosX;
    else if (ay == m && d.y() > 0) face = Face::PosY;
    else if (az == m && d.z() > 0) face = Face::PosZ;
    else if (ax == m) face = Face::NegX;
    else if (ay == m) face = Face::NegY;
    else face = Face::NegZ;
    const FaceFrame& fr = face_frame(face);
    const double depth = d.dot(fr.forward);
    const double half = resolution / 2.0;
    return {face, half * (1.0 + d.dot(fr.right) / depth) - 0.5, half * (1.0 + d.dot(fr.down) / depth) - 0.5};
}

/// Unit camera-frame direction through continuous face coordinate (u, v).
inline Vec3 face_uv_to_dir(Face face, double u, double v, int resolution) {
    const FaceFrame& fr = face_frame(face);
    const double a = 2.0 * (u + 0.5) / resolution - 1.0;
    const double b = 2.0 * (v + 0.5) / resolution - 1.0;
    return (fr.forward + a * fr.right + b * fr.down).normalized();
}

/// Six square face rasters with an optional one-pixel border.
struct CubemapFaceSet {
    int resolution = 0;
    int channels = 0;
    int pad = 0;
    std::array<Image, kFaceCount> faces;

    CubemapFaceSet() = default;
    CubemapFaceSet(int res, int ch, int padding = 0) : resolution(res), channels(ch), pad(padding) {
        require(res > 0 && ch > 0, "CubemapFaceSet: resolution and channels must be positive");
        require(padding == 0 || padding == 1, "CubemapFaceSet: pad must be 0 or 1");
        for (auto& f : faces) f = Image(res + 2 * padding, res + 2 * padding, ch);
    }

    Image& operator[](Face f) { return faces[static_cast<int>(f)]; }
    const Image& operator[](Face f) const { return faces[static_cast<int>(f)]; }

    /// Sample at interior pixel (x, y) in unpadded coordinates.
    double& at(Face f, int x, int y, int c) { return faces[static_cast<int>(f)].at(x + pad, y + pad, c); }
    double at(Face f, int x, int y, int c) const { return faces[static_cast<int>(f)].at(x + pad, y + pad, c); }

    void validate() const {
        require(pad == 0 || pad == 1, "CubemapFaceSet: pad must be 0 or 1");
        for (const auto& f : faces)
            require(f.width() == resolution + 2 * pad && f.height() == resolution + 2 * pad && f.channels() == channels,
                    "CubemapFaceSet: faces must be square with equal resolution and channels");
    }
};

enum class Edge : int { Left = 0, Right, Top, Bottom };

/// Which neighbor edge supplies one border of a face. `reversed` flips the
/// along-edge index (i -> R - 1 - i).
struct EdgeLink {
    Face neighbor;
    Edge edge;
    bool reversed;
};

/// Border sources for every (face, side), indexed [face][Edge]. Sides are the
/// face's own left/right/top/bottom borders.
inline const std::array<std::array<EdgeLink, 4>, kFaceCount>& face_adjacency() {
    using F = Face;
    using E = Edge;
    static const std::array<std::array<EdgeLink, 4>, kFaceCount> table{{
        // left, right, top, bottom
        {{{F::PosZ, E::Right, false}, {F::NegZ, E::Left, false}, {F::PosY, E::Right, true}, {F::NegY, E::Right, false}}},  // +X
        {{{F::NegX, E::Top, false}, {F::PosX, E::Top, true}, {F::NegZ, E::Top, true}, {F::PosZ, E::Top, false}}},          // +Y
        {{{F::NegX, E::Right, false}, {F::PosX, E::Left, false}, {F::PosY, E::Bottom, false}, {F::NegY, E::Top, false}}},  // +Z
        {{{F::NegZ, E::Right, false}, {F::PosZ, E::Left, false}, {F::PosY, E::Left, false}, {F::NegY, E::Left, true}}},    // -X
        {{{F::NegX, E::Bottom, true}, {F::PosX, E::Bottom, false}, {F::PosZ, E::Bottom, false}, {F::NegZ, E::Bottom, true}}}, // -Y
        {{{F::PosX, E::Right, false}, {F::NegX, E::Left, false}, {F::PosY, E::Top, true}, {F::NegY, E::Bottom, true}}},    // -Z
    }};
    return table;
}

/// Unpadded pixel coordinate of index `i` along `edge` of an R x R face.
inline std::array<int, 2> edge_pixel(Edge edge, int i, int resolution) {
    switch (edge) {
    case Edge::Left: return {0, i};
    case Edge::Right: return {resolution - 1, i};
    case Edge::Top: return {i, 0};
    case Edge::Bottom: return {i, resolution - 1};
    }
    return {0, 0};
}

/// Padded-raster coordinate of border cell `i` on `side` (pad = 1).
inline std::array<int, 2> border_cell(Edge side, int i, int resolution) {
    switch (side) {
    case Edge::Left: return {0, i + 1};
    case Edge::Right: return {resolution + 1, i + 1};
    case Edge::Top: return {i + 1, 0};
    case Edge::Bottom: return {i + 1, resolution + 1};
    }
    return {0, 0};
}

/// Adds a one-pixel border copied from the four adjacent faces. Corner cells
/// are the mean of their two neighboring border cells.
inline CubemapFaceSet pad_faces(const CubemapFaceSet& in) {
    in.validate();
    require(in.pad == 0, "pad_faces: input is already padded");
    const int r = in.resolution;
    CubemapFaceSet out(r, in.channels, 1);
    const auto& adjacency = face_adjacency();
    for (Face f : kAllFaces) {
        Image& dst = out[f];
        const Image& src = in[f];
        for (int y = 0; y < r; ++y)
            for (int x = 0; x < r; ++x)
                for (int c = 0; c < in.channels; ++c) dst.at(x + 1, y + 1, c) = src.at(x, y, c);
        for (int s = 0; s < 4; ++s) {
            const EdgeLink& link = adjacency[static_cast<int>(f)][s];
            const Image& nb = in[link.neighbor];
            for (int i = 0; i < r; ++i) {
                const auto [sx, sy] = edge_pixel(link.edge, link.reversed ? r - 1 - i : i, r);
                const auto [dx, dy] = border_cell(static_cast<Edge>(s), i, r);
                for (int c = 0; c < in.channels; ++c) dst.at(dx, dy, c) = nb.at(sx, sy, c);
            }
        }
        const int e = r + 1;
        for (int c = 0; c < in.channels; ++c) {
            dst.at(0, 0, c) = 0.5 * (dst.at(0, 1, c) + dst.at(1, 0, c));
            dst.at(e, 0, c) = 0.5 * (dst.at(e, 1, c) + dst.at(r, 0, c));
            dst.at(0, e, c) = 0.5 * (dst.at(0, r, c) + dst.at(1, e, c));
            dst.at(e, e, c) = 0.5 * (dst.at(e, r, c) + dst.at(r, e, c));
        }
    }
    return out;
}

/// Part of the adjoint of `pad_faces`: adds the gradient that the padded
/// face `padded` (gradient `padded_grad`) sends to the unpadded face `target`.
inline void pad_face_backward_to(Face padded, const Image& padded_grad, Face target, Image& grad_target) {
    const int r = padded_grad.width() - 2;
    const int e = r + 1;
    const int channels = padded_grad.channels();
    if (padded == target) {
        for (int y = 0; y < r; ++y)
            for (int x = 0; x < r; ++x)
                for (int c = 0; c < channels; ++c) grad_target.at(x, y, c) += padded_grad.at(x + 1, y + 1, c);
    }
    const auto& adjacency = face_adjacency();
    for (int s = 0; s < 4; ++s) {
        const EdgeLink& link = adjacency[static_cast<int>(padded)][s];
        if (link.neighbor != target) continue;
        const auto side = static_cast<Edge>(s);
        // Each corner cell is the mean of the first/last cells of two borders.
        std::array<int, 2> first_corner{0, 0}, last_corner{0, 0};
        switch (side) {
        case Edge::Left: first_corner = {0, 0}; last_corner = {0, e}; break;
        case Edge::Right: first_corner = {e, 0}; last_corner = {e, e}; break;
        case Edge::Top: first_corner = {0, 0}; last_corner = {e, 0}; break;
        case Edge::Bottom: first_corner = {0, e}; last_corner = {e, e}; break;
        }
        for (int i = 0; i < r; ++i) {
            const auto [sx, sy] = edge_pixel(link.edge, link.reversed ? r - 1 - i : i, r);
            const auto [dx, dy] = border_cell(side, i, r);
            for (int c = 0; c < channels; ++c) {
                double g = padded_grad.at(dx, dy, c);
                if (i == 0) g += 0.5 * padded_grad.at(first_corner[0], first_corner[1], c);
                if (i == r - 1) g += 0.5 * padded_grad.at(last_corner[0], last_corner[1], c);
                grad_target.at(sx, sy, c) += g;
            }
        }
    }
}

/// Adjoint of `pad_faces`.
inline CubemapFaceSet pad_faces_backward(const CubemapFaceSet& padded_grad) {
    require(padded_grad.pad == 1, "pad_faces_backward: gradient must be padded");
    CubemapFaceSet out(padded_grad.resolution, padded_grad.channels, 0);
    for (Face target : kAllFaces)
        for (Face p : kAllFaces) pad_face_backward_to(p, padded_grad[p], target, out[target]);
    return out;
}

/// Per-panorama-pixel lookup into the padded cubemap used by `stitch`.
struct StitchMap {
    int width = 0;
    int height = 0;
    int resolution = 0;
    struct Entry {
        Face face;
        int x0; // padded coordinates of the top-left tap
        int y0;
        double ax;
        double ay;
    };
    tracked_vector<Entry> entries;
};

inline StitchMap make_stitch_map(int width, int height, int resolution) {
    require(width > 0 && width == 2 * height, "stitch: panorama must have width == 2 * height");
    require(resolution > 0, "stitch: face resolution must be positive");
    StitchMap map;
    map.width = width;
    map.height = height;
    map.resolution = resolution;
    map.entries.resize(static_cast<std::size_t>(width) * height);
    for (int v = 0; v < height; ++v)
        for (int u = 0; u < width; ++u) {
            const FaceUV fuv = dir_to_face_uv(pixel_to_dir(u, v, width, height), resolution);
            const double pu = fuv.u + 1.0, pv = fuv.v + 1.0;
            const int x0 = std::clamp(static_cast<int>(std::floor(pu)), 0, resolution);
            const int y0 = std::clamp(static_cast<int>(std::floor(pv)), 0, resolution);
            map.entries[static_cast<std::size_t>(v) * width + u] = {fuv.face, x0, y0, pu - x0, pv - y0};
        }
    return map;
}

inline Image stitch(const CubemapFaceSet& faces, const StitchMap& map) {
    faces.validate();
    require(faces.pad == 1, "stitch: faces must be padded");
    require(faces.resolution == map.resolution, "stitch: face resolution does not match the stitch map");
    Image out(map.width, map.height, faces.channels);
    for (int v = 0; v < map.height; ++v)
        for (int u = 0; u < map.width; ++u) {
            const auto& e = map.entries[static_cast<std::size_t>(v) * map.width + u];
            const Image& f = faces[e.face];
            const double w00 = (1 - e.ax) * (1 - e.ay), w10 = e.ax * (1 - e.ay);
            const double w01 = (1 - e.ax) * e.ay, w11 = e.ax * e.ay;
            for (int c = 0; c < faces.channels; ++c)
                out.at(u, v, c) = w00 * f.at(e.x0, e.y0, c) + w10 * f.at(e.x0 + 1, e.y0, c) +
                                  w01 * f.at(e.x0, e.y0 + 1, c) + w11 * f.at(e.x0 + 1, e.y0 + 1, c);
        }
    return out;
}

inline Image stitch(const CubemapFaceSet& faces, int width, int height) {
    return stitch(faces, make_stitch_map(width, height, faces.resolution));
}

/// Adjoint of `stitch` restricted to one face: gradient w.r.t. that padded face.
inline Image stitch_backward_face(const Image& grad_out, const StitchMap& map, Face face) {
    require(grad_out.width() == map.width && grad_out.height() == map.height, "stitch_backward: gradient size mismatch");
    Image g(map.resolution + 2, map.resolution + 2, grad_out.channels());
    for (int v = 0; v < map.height; ++v)
        for (int u = 0; u < map.width; ++u) {
            const auto& e = map.entries[static_cast<std::size_t>(v) * map.width + u];
            if (e.face != face) continue;
            const double w00 = (1 - e.ax) * (1 - e.ay), w10 = e.ax * (1 - e.ay);
            const double w01 = (1 - e.ax) * e.ay, w11 = e.ax * e.ay;
            for (int c = 0; c < grad_out.channels(); ++c) {
                const double gv = grad_out.at(u, v, c);
                g.at(e.x0, e.y0, c) += w00 * gv;
                g.at(e.x0 + 1, e.y0, c) += w10 * gv;
                g.at(e.x0, e.y0 + 1, c) += w01 * gv;
                g.at(e.x0 + 1, e.y0 + 1, c) += w11 * gv;
            }
        }
    return g;
}

/// Adjoint of `stitch`: gradient w.r.t. all six padded faces.
inline CubemapFaceSet stitch_backward(const Image& grad_out, const StitchMap& map) {
    CubemapFaceSet g(map.resolution, grad_out.channels(), 1);
    for (Face f : kAllFaces) g[f] = stitch_backward_face(grad_out, map, f);
    return g;
}

/// Bilinear resampling of a panorama onto six unpadded faces.
inline CubemapFaceSet erp_to_cubemap(const Image& img, int resolution) {
    require_erp(img, "erp_to_cubemap");
    CubemapFaceSet out(resolution, img.channels(), 0);
    std::vector<double> px(img.channels());
    for (Face f : kAllFaces)
        for (int y = 0; y < resolution; ++y)
            for (int x = 0; x < resolution; ++x) {
                const PixelCoord p = dir_to_pixel(face_uv_to_dir(f, x, y, resolution), img.width(), img.height());
                sample_erp(img, p.u, p.v, px);
                for (int c = 0; c < img.channels(); ++c) out.at(f, x, y, c) = px[c];
            }
    return out;
}

} // namespace panogs
