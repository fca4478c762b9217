#pragma once

// Deferred blending, image-quality metrics and training losses.

#include "panogs/core/error.hpp"
#include "panogs/core/image.hpp"
#include "panogs/geometry.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace panogs {

/// Distance-weighted blend of the renders from two input views:
/// (d1 * I0 + d0 * I1) / (d0 + d1), d_i the distance from view i to the target.
inline Image deferred_blend(const Image& i0, const Image& i1, double d0, double d1) {
    require_same_shape(i0, i1, "deferred_blend");
    require(d0 >= 0.0 && d1 >= 0.0, "deferred_blend: distances must be non-negative");
    require(d0 + d1 > 0.0, "deferred_blend: distances must not both be zero");
    const double w0 = d1 / (d0 + d1), w1 = d0 / (d0 + d1);
    Image out(i0.width(), i0.height(), i0.channels());
    for (std::size_t k = 0; k < out.size(); ++k) out.data()[k] = w0 * i0.data()[k] + w1 * i1.data()[k];
    return out;
}

inline double mse(const Image& a, const Image& b) {
    require_same_shape(a, b, "mse");
    require(!a.empty(), "mse: empty image");
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a.data()[k] - b.data()[k];
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

/// Gradient of `mse(a, b)` w.r.t. a: 2 (a - b) / N over all N values.
inline Image mse_gradient(const Image& a, const Image& b) {
    require_same_shape(a, b, "mse_gradient");
    Image g(a.width(), a.height(), a.channels());
    const double scale = 2.0 / static_cast<double>(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) g.data()[k] = scale * (a.data()[k] - b.data()[k]);
    return g;
}

/// 10 log10(1 / MSE) for values in [0, 1]; +inf for identical images.
inline double psnr(const Image& a, const Image& b) {
    const double m = mse(a, b);
    return m == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / m);
}

/// PSNR with squared errors weighted by cos(latitude) per row.
inline double ws_psnr(const Image& a, const Image& b) {
    require_same_shape(a, b, "ws_psnr");
    require(!a.empty(), "ws_psnr: empty image");
    double num = 0.0, den = 0.0;
    for (int y = 0; y < a.height(); ++y) {
        const double w = ws_row_weight(y, a.height());
        for (int x = 0; x < a.width(); ++x)
            for (int c = 0; c < a.channels(); ++c) {
                const double d = a.at(x, y, c) - b.at(x, y, c);
                num += w * d * d;
                den += w;
            }
    }
    const double m = num / den;
    return m == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / m);
}

/// "inf" for infinite values, otherwise the number with 17 significant digits.
inline std::string format_db(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
/// data range 1, population covariances, over windows fully inside the
/// image, averaged over channels.
inline double ssim(const Image& a, const Image& b) {
    require_same_shape(a, b, "ssim");
    constexpr int kRadius = 5;
    require(a.width() > 2 * kRadius && a.height() > 2 * kRadius, "ssim: image smaller than the 11x11 window");
    std::array<double, 2 * kRadius + 1> g{};
    double gs = 0.0;
    for (int i = -kRadius; i <= kRadius; ++i) gs += g[i + kRadius] = std::exp(-(i * i) / (2.0 * 1.5 * 1.5));
    for (double& v : g) v /= gs;
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

    const int w = a.width() - 2 * kRadius, h = a.height() - 2 * kRadius;
    double total = 0.0;
    std::vector<double> rows(static_cast<std::size_t>(a.width()) * h * 5);
    for (int c = 0; c < a.channels(); ++c) {
        // Vertical pass of x, y, x^2, y^2, xy, then horizontal pass.
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < a.width(); ++x) {
                double m[5] = {};
                for (int k = 0; k <= 2 * kRadius; ++k) {
                    const double p = a.at(x, y + k, c), q = b.at(x, y + k, c);
                    m[0] += g[k] * p;
                    m[1] += g[k] * q;
                    m[2] += g[k] * p * p;
                    m[3] += g[k] * q * q;
                    m[4] += g[k] * p * q;
                }
                for (int i = 0; i < 5; ++i) rows[(static_cast<std::size_t>(y) * a.width() + x) * 5 + i] = m[i];
            }
        double sum = 0.0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double m[5] = {};
                for (int k = 0; k <= 2 * kRadius; ++k)
                    for (int i = 0; i < 5; ++i) m[i] += g[k] * rows[(static_cast<std::size_t>(y) * a.width() + x + k) * 5 + i];
                const double vx = m[2] - m[0] * m[0], vy = m[3] - m[1] * m[1], cxy = m[4] - m[0] * m[1];
                sum += ((2 * m[0] * m[1] + c1) * (2 * cxy + c2)) /
                       ((m[0] * m[0] + m[1] * m[1] + c1) * (vx + vy + c2));
            }
        total += sum / (static_cast<double>(w) * h);
    }
    return total / a.channels();
}

// ---------------------------------------------------------------------------
// Losses

/// Perceptual metric hook; the default contributes nothing.
using PerceptualMetric = std::function<double(const Image&, const Image&)>;

struct LossConfig {
    double gamma = 0.9;   ///< per-level decay
    double lambda = 0.1;  ///< perceptual weight
    double alpha = 0.05;  ///< depth weight
    PerceptualMetric perceptual;

    void validate() const {
        require(gamma > 0.0 && gamma <= 1.0, "loss: gamma must lie in (0, 1]");
        require(lambda >= 0.0 && alpha >= 0.0, "loss: weights must be non-negative");
    }
};

/// sum_i sum_l gamma^(l-1) mean|D_i^l - gt_i^l|; preds[i][l - 1] is view i at level l.
inline double depth_loss(std::span<const std::vector<Image>> preds, std::span<const std::vector<Image>> gts,
                         double gamma) {
    require(preds.size() == gts.size(), "depth_loss: view count mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        require(preds[i].size() == gts[i].size() && !preds[i].empty(), "depth_loss: level count mismatch");
        double w = 1.0;
        for (std::size_t l = 0; l < preds[i].size(); ++l, w *= gamma) {
            const Image& p = preds[i][l];
            const Image& g = gts[i][l];
            require_same_shape(p, g, "depth_loss");
            double s = 0.0;
            for (std::size_t k = 0; k < p.size(); ++k) s += std::abs(p.data()[k] - g.data()[k]);
            total += w * s / static_cast<double>(p.size());
        }
    }
    return total;
}

/// MSE plus lambda times the perceptual hook.
inline double rgb_loss(const Image& rendered, const Image& target, const LossConfig& cfg) {
    double l = mse(rendered, target);
    if (cfg.perceptual) l += cfg.lambda * cfg.perceptual(rendered, target);
    return l;
}

/// alpha * L_depth + L_rgb.
inline double synthetic_loss(const LossConfig& cfg, double depth, double rgb) { return cfg.alpha * depth + rgb; }

/// sum_l gamma^(l-1) L_rgb(I^l) + L_rgb(I), levels l = 1..3.
inline double real_loss(const LossConfig& cfg, std::span<const double> level_rgb, double rgb) {
    require(level_rgb.size() == 3, "real_loss: one auxiliary render loss per level 1..3 required");
    double total = rgb, w = 1.0;
    for (double v : level_rgb) {
        total += w * v;
        w *= cfg.gamma;
    }
    return total;
}

inline double real_loss(const LossConfig& cfg, std::span<const Image> level_renders, const Image& rendered,
                        const Image& target) {
    require(level_renders.size() == 3, "real_loss: one auxiliary render per level 1..3 required");
    std::array<double, 3> l{};
    for (int k = 0; k < 3; ++k) l[k] = rgb_loss(level_renders[k], target, cfg);
    return real_loss(cfg, l, rgb_loss(rendered, target, cfg));
}

} // namespace panogs
