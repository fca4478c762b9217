#pragma once

#include "panogs/deferred.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace panogs {

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, 1e-12 * max_j |a_j|).
inline double max_relative_error(std::span<const double> a, std::span<const double> b) {
    double scale = 0.0;
    for (double v : a) scale = std::max(scale, std::abs(v));
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double den = std::max({std::abs(a[i]), std::abs(b[i]), 1e-12 * scale});
        if (den > 0.0) worst = std::max(worst, std::abs(a[i] - b[i]) / den);
    }
    return worst;
}

inline std::vector<double> flatten(std::span<const Gaussian> gs) {
    std::vector<double> out;
    out.reserve(gs.size() * (14 + kMaxShCoeffs));
    for (const Gaussian& g : gs) {
        for (int i = 0; i < 3; ++i) out.push_back(g.mean[i]);
        out.push_back(g.opacity);
        for (int i = 0; i < 3; ++i) out.push_back(g.scale[i]);
        for (int i = 0; i < 4; ++i) out.push_back(g.rotation[i]);
        out.insert(out.end(), g.sh.begin(), g.sh.end());
    }
    return out;
}

struct FiniteDifferenceReport {
    std::size_t checked = 0;
    std::size_t passed = 0;
    std::size_t refined = 0; ///< entries that needed a smaller step
    double fraction() const { return checked ? static_cast<double>(passed) / checked : 0.0; }
};

/// Central differences of the end-to-end loss w.r.t. every parameter. An
/// entry passes when |a - b| <= tol * max(|a|, |b|), or when both are below
/// 1e-6 of the largest analytic gradient.
///
/// The splatting forward pass has hard cutoffs, so the loss is only piecewise
/// smooth. When a miss comes with one-sided differences that disagree, the
/// probe straddled a jump and is repeated with h / 10, at most `refinements`
/// times.
inline FiniteDifferenceReport finite_difference_check(const DeferredPipeline& pipe, std::span<const double> grad,
                                                      double h = 1e-5, double tol = 1e-3, int refinements = 2) {
    double scale = 0.0;
    for (double v : grad) scale = std::max(scale, std::abs(v));
    FiniteDifferenceReport r;
    std::vector<double> theta(pipe.theta().begin(), pipe.theta().end());
    const double l0 = pipe.loss();
    auto loss_at = [&](std::size_t i, double x) {
        const double keep = theta[i];
        theta[i] = x;
        const double l = pipe.with_theta(theta).loss();
        theta[i] = keep;
        return l;
    };
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double x = theta[i];
        ++r.checked;
        for (int k = 0; k <= refinements; ++k) {
            const double step = h * std::pow(0.1, k);
            const double lp = loss_at(i, x + step), lm = loss_at(i, x - step);
            const double fd = (lp - lm) / (2 * step);
            const double big = std::max(std::abs(fd), std::abs(grad[i]));
            if (std::abs(fd - grad[i]) <= tol * big || big <= 1e-6 * scale) {
                ++r.passed;
                if (k > 0) ++r.refined;
                break;
            }
            const double fwd = (lp - l0) / step, bwd = (l0 - lm) / step;
            if (std::abs(fwd - bwd) <= tol * std::max(std::abs(fwd), std::abs(bwd))) break;
        }
    }
    return r;
}

/// Small random pipeline for gradient checks.
inline SyntheticPipelineConfig small_pipeline_config(std::uint64_t seed) {
    SyntheticPipelineConfig c;
    c.width = 32;
    c.geometry_width = 32;
    c.candidates = 8;
    c.features = 2;
    c.hidden = 4;
    c.tiles = 1 + static_cast<int>(seed % 2);
    c.sh_degree = static_cast<int>(seed % 2);
    c.seed = seed;
    return c;
}

} // namespace panogs
