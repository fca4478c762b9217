#pragma once

// Inverse-depth hypotheses and the softmax depth-aggregation rule shared by
// the cost volume and the Gaussian decoder.

#include "panogs/core/error.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace panogs {

/// Depth candidates, stored as inverse depths in increasing order (so depth
/// decreases along the sequence), uniformly spaced between 1/d_max and 1/d_min.
struct DepthHypotheses {
    double d_min = 0.0;
    double d_max = 0.0;
    std::vector<double> inverse;

    int count() const noexcept { return static_cast<int>(inverse.size()); }
    double depth(int k) const { return 1.0 / inverse[k]; }
};

/// `count` values linearly spaced on [lo, hi], endpoints exact.
inline std::vector<double> linspace(double lo, double hi, int count) {
    std::vector<double> v(count);
    for (int k = 0; k < count; ++k) v[k] = (k == count - 1) ? hi : lo + (hi - lo) * k / (count - 1);
    return v;
}

inline DepthHypotheses make_hypotheses(double d_min, double d_max, int count) {
    require(d_min > 0.0 && d_max > d_min, "make_hypotheses: need 0 < d_min < d_max");
    require(count >= 2, "make_hypotheses: need at least two candidates");
    return {d_min, d_max, linspace(1.0 / d_max, 1.0 / d_min, count)};
}

/// Softmax weights of `scores` (max-shifted) written to `weights`.
inline void softmax(std::span<const double> scores, std::span<double> weights) {
    const double m = *std::max_element(scores.begin(), scores.end());
    double sum = 0.0;
    for (std::size_t k = 0; k < scores.size(); ++k) {
        weights[k] = std::exp(scores[k] - m);
        sum += weights[k];
    }
    for (double& w : weights) w /= sum;
}

/// Softmax-weighted mean of the candidate inverse depths.
inline double softmax_inverse_depth(std::span<const double> scores, std::span<const double> inverse) {
    std::vector<double> w(scores.size());
    softmax(scores, w);
    double agg = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) agg += w[k] * inverse[k];
    return agg;
}

/// Gradient of the scores given the gradient of the aggregated inverse depth.
inline void softmax_inverse_depth_backward(std::span<const double> scores, std::span<const double> inverse,
                                           double grad_inverse, std::span<double> grad_scores) {
    std::vector<double> w(scores.size());
    softmax(scores, w);
    double agg = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) agg += w[k] * inverse[k];
    for (std::size_t k = 0; k < w.size(); ++k) grad_scores[k] += w[k] * (inverse[k] - agg) * grad_inverse;
}

} // namespace panogs
