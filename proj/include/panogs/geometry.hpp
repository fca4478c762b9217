#pragma once

// Equirectangular geometry: pixel <-> direction mapping, the Fibonacci
// lattice used to place Gaussians, per-level Gaussian counts and the
// spherical pixel-density weights.
//
// Conventions (used everywhere in the library):
//   * world/camera frame is y-up, z-forward, x-right;
//   * longitude lon in [-pi, pi) runs left to right across the panorama,
//     latitude lat in [-pi/2, pi/2] runs bottom to top;
//   * pixel (i, j) has its center at continuous coordinate (i, j), so the
//     panorama spans [-0.5, W - 0.5) x [-0.5, H - 0.5].

#include "panogs/core/error.hpp"
#include "panogs/core/image.hpp"
#include "panogs/core/math.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace panogs {

struct PixelCoord {
    double u = 0.0;
    double v = 0.0;
};

/// Unit direction of the continuous pixel (u, v) of a W x H panorama.
///
/// Columns outside the raster wrap (the trigonometry is periodic); rows are
/// clamped to the poles.
inline Vec3 pixel_to_dir(double u, double v, int width, int height) {
    const double lon = kTwoPi * (u + 0.5) / width - kPi;
    double lat = kPi / 2 - kPi * (v + 0.5) / height;
    lat = std::clamp(lat, -kPi / 2, kPi / 2);
    const double c = std::cos(lat);
    return {c * std::sin(lon), std::sin(lat), c * std::cos(lon)};
}

/// Continuous pixel position of a unit direction. At the poles the column is
/// defined as W/2 - 0.5.
inline PixelCoord dir_to_pixel(const Vec3& d, int width, int height) {
    const double lat = std::asin(std::clamp(d.y(), -1.0, 1.0));
    double u;
    if (d.x() == 0.0 && d.z() == 0.0) {
        u = width / 2.0 - 0.5;
    } else {
        const double lon = std::atan2(d.x(), d.z());
        u = (lon + kPi) * width / kTwoPi - 0.5;
        if (u >= width - 0.5) u -= width;
    }
    const double v = (kPi / 2 - lat) * height / kPi - 0.5;
    return {u, v};
}

/// Number of lattice Gaussians for a panorama of the given width: floor(W^2 / pi).
inline std::int64_t lattice_count(int width) {
    require(width >= 3, "lattice_count: width must be at least 3 so that n >= 2");
    const long double w = width;
    return static_cast<std::int64_t>(std::floor(w * w / std::numbers::pi_v<long double>));
}

/// Per-level Gaussian counts, finest level first: n_l = floor((W / 2^l)^2 / pi).
inline std::vector<std::int64_t> pyramid_counts(int width, int levels) {
    require(levels >= 1, "pyramid_counts: need at least one level");
    require(levels <= 30 && width % (1 << (levels - 1)) == 0,
            "pyramid_counts: width must be divisible by 2^(levels-1)");
    std::vector<std::int64_t> counts;
    counts.reserve(levels);
    for (int l = 0; l < levels; ++l) counts.push_back(lattice_count(width >> l));
    return counts;
}

/// Normalized image-plane position of a lattice point: x in [0,1), y in [0,1].
struct LatticePoint {
    double x = 0.0;
    double y = 0.0;
};

/// Fibonacci lattice of one pyramid level: (x_j, y_j) = (frac(j / phi), j / (n - 1)).
struct FibonacciLattice {
    int level = 0;
    std::vector<LatticePoint> points;

    std::size_t size() const noexcept { return points.size(); }
};

inline LatticePoint fibonacci_point(std::int64_t j, std::int64_t n) {
    const double t = static_cast<double>(j) / kGoldenRatio;
    return {t - std::floor(t), static_cast<double>(j) / static_cast<double>(n - 1)};
}

inline FibonacciLattice fibonacci_lattice(std::int64_t n, int level) {
    require(n >= 2, "fibonacci_lattice: need at least two points");
    FibonacciLattice lattice;
    lattice.level = level;
    lattice.points.reserve(static_cast<std::size_t>(n));
    for (std::int64_t j = 0; j < n; ++j) lattice.points.push_back(fibonacci_point(j, n));
    return lattice;
}

/// Latitude of a lattice point. The image-plane y coordinate is mapped with
/// the equal-area rule sin(lat) = 1 - 2y, which makes the lattice uniform on
/// the sphere; y = 0 is the north pole and y = 1 the south pole.
inline double lattice_latitude(const LatticePoint& p) { return std::asin(std::clamp(1.0 - 2.0 * p.y, -1.0, 1.0)); }

/// Camera-frame unit direction of a lattice point.
inline Vec3 lattice_direction(const LatticePoint& p) {
    const double lon = kTwoPi * p.x - kPi;
    const double lat = lattice_latitude(p);
    const double c = std::cos(lat);
    return {c * std::sin(lon), std::sin(lat), c * std::cos(lon)};
}

/// Continuous pixel position of a lattice point on a W x H raster.
inline PixelCoord lattice_pixel(const LatticePoint& p, int width, int height) {
    return {p.x * width - 0.5, (kPi / 2 - lattice_latitude(p)) * height / kPi - 0.5};
}

/// WS-PSNR weight of row v: cos((v + 0.5 - H/2) * pi / H).
inline double ws_row_weight(int v, int height) { return std::cos((v + 0.5 - height / 2.0) * kPi / height); }

inline Image ws_weights(int width, int height) {
    require(width > 0 && width == 2 * height, "ws_weights: width must equal 2 * height");
    Image w(width, height, 1);
    for (int v = 0; v < height; ++v) {
        const double row = ws_row_weight(v, height);
        for (int u = 0; u < width; ++u) w.at(u, v) = row;
    }
    return w;
}

/// Four bilinear taps on a panorama raster: horizontal wrap, vertical clamp.
struct BilinearTaps {
    std::array<int, 2> x{};
    std::array<int, 2> y{};
    std::array<double, 4> w{}; // (x0,y0), (x1,y0), (x0,y1), (x1,y1)
};

inline BilinearTaps erp_taps(double u, double v, int width, int height) {
    BilinearTaps t;
    const double fu = std::floor(u);
    const double ax = u - fu;
    const int x0 = wrap_index(static_cast<int>(fu), width);
    t.x = {x0, x0 + 1 == width ? 0 : x0 + 1};
    double ay;
    if (v <= 0.0) {
        t.y = {0, 0};
        ay = 0.0;
    } else if (v >= height - 1) {
        t.y = {height - 1, height - 1};
        ay = 0.0;
    } else {
        const double fv = std::floor(v);
        const int y0 = static_cast<int>(fv);
        t.y = {y0, std::min(y0 + 1, height - 1)};
        ay = v - fv;
    }
    t.w = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
    return t;
}

/// Bilinear sample of every channel at (u, v) into `out`.
inline void sample_erp(const Image& img, double u, double v, std::span<double> out) {
    const BilinearTaps t = erp_taps(u, v, img.width(), img.height());
    for (int c = 0; c < img.channels(); ++c)
        out[c] = t.w[0] * img.at(t.x[0], t.y[0], c) + t.w[1] * img.at(t.x[1], t.y[0], c) +
                 t.w[2] * img.at(t.x[0], t.y[1], c) + t.w[3] * img.at(t.x[1], t.y[1], c);
}

/// Adjoint of `sample_erp`: scatters `grad` into `img` with the same weights.
inline void scatter_erp(Image& img, double u, double v, std::span<const double> grad) {
    const BilinearTaps t = erp_taps(u, v, img.width(), img.height());
    for (int c = 0; c < img.channels(); ++c) {
        img.at(t.x[0], t.y[0], c) += t.w[0] * grad[c];
        img.at(t.x[1], t.y[0], c) += t.w[1] * grad[c];
        img.at(t.x[0], t.y[1], c) += t.w[2] * grad[c];
        img.at(t.x[1], t.y[1], c) += t.w[3] * grad[c];
    }
}

/// 2x bilinear upsampling of a panorama raster (pixel-center aligned).
inline Image upsample2x(const Image& coarse) {
    Image fine(coarse.width() * 2, coarse.height() * 2, coarse.channels());
    std::vector<double> px(coarse.channels());
    for (int y = 0; y < fine.height(); ++y)
        for (int x = 0; x < fine.width(); ++x) {
            sample_erp(coarse, (x + 0.5) / 2 - 0.5, (y + 0.5) / 2 - 0.5, px);
            for (int c = 0; c < coarse.channels(); ++c) fine.at(x, y, c) = px[c];
        }
    return fine;
}

/// Adjoint of `upsample2x`.
inline Image upsample2x_backward(const Image& grad_fine) {
    Image coarse(grad_fine.width() / 2, grad_fine.height() / 2, grad_fine.channels());
    for (int y = 0; y < grad_fine.height(); ++y)
        for (int x = 0; x < grad_fine.width(); ++x)
            scatter_erp(coarse, (x + 0.5) / 2 - 0.5, (y + 0.5) / 2 - 0.5, grad_fine.pixel(x, y));
    return coarse;
}

} // namespace panogs
