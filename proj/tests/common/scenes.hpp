#pragma once

#include "panogs/core/image.hpp"
#include "panogs/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace panogs::testing {

struct SceneOptions {
    int count = 10;
    int width = 64;       ///< panorama width the footprints are sized for
    double min_depth = 2.0;
    double max_depth = 4.0;
    double min_sigma_px = 5.0; ///< footprint std-dev in face pixels (R = W / 2)
    double max_sigma_px = 9.0;
    double max_opacity = 0.5;
    int sh_degree = 0;
};

/// Gaussians scattered over the whole sphere around `center`.
inline GaussianSet random_scene(unsigned seed, const SceneOptions& opt = {}, const Vec3& center = Vec3::Zero()) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n(0.0, 1.0);
    const double focal = opt.width / 4.0; // face resolution W/2, focal R/2
    GaussianSet set;
    set.sh_degree = opt.sh_degree;
    for (int i = 0; i < opt.count; ++i) {
        Gaussian g;
        const Vec3 dir = Vec3(n(rng), n(rng), n(rng)).normalized();
        const double depth = opt.min_depth + (opt.max_depth - opt.min_depth) * u(rng);
        g.mean = center + depth * dir;
        g.opacity = 0.1 + (opt.max_opacity - 0.1) * u(rng);
        for (int k = 0; k < 3; ++k) {
            const double sigma = opt.min_sigma_px + (opt.max_sigma_px - opt.min_sigma_px) * u(rng);
            g.scale[k] = sigma * depth / focal;
        }
        g.rotation = Vec4(n(rng), n(rng), n(rng), n(rng)).normalized();
        const int k = sh_coeffs_per_channel(opt.sh_degree);
        for (int c = 0; c < 3; ++c) {
            g.sh[c * k] = (u(rng) - 0.5) / kShC0 * 0.8;
            for (int j = 1; j < k; ++j) g.sh[c * k + j] = 0.3 * (u(rng) - 0.5);
        }
        set.items.push_back(g);
    }
    return set;
}

inline Image random_image(int w, int h, int c, unsigned seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Image img(w, h, c);
    for (double& v : img.data()) v = u(rng);
    return img;
}

inline double inner(const Image& a, const Image& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
    return s;
}

inline double max_abs_diff(const Image& a, const Image& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

/// |a - b| / max(|a|, |b|, floor).
inline double relative_error(double a, double b, double floor) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Flat view of the parameters of a Gaussian (mean, opacity, scale, rotation, SH).
inline constexpr int kGaussianParams = 3 + 1 + 3 + 4 + kMaxShCoeffs;

inline double& gaussian_param(Gaussian& g, int i) {
    if (i < 3) return g.mean[i];
    if (i == 3) return g.opacity;
    if (i < 7) return g.scale[i - 4];
    if (i < 11) return g.rotation[i - 7];
    return g.sh[i - 11];
}

inline double gaussian_param(const Gaussian& g, int i) { return gaussian_param(const_cast<Gaussian&>(g), i); }

/// Whether parameter `i` is used at the given SH degree.
inline bool gaussian_param_active(int i, int sh_degree) {
    return i < 11 || i - 11 < 3 * sh_coeffs_per_channel(sh_degree);
}

} // namespace panogs::testing
