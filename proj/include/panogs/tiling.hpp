#pragma once

// Tiled execution of local operators with pre-padding, the toy Gaussian
// head, lattice feature sampling and the coarse-to-fine residual chain.

#include "panogs/core/error.hpp"
#include "panogs/core/image.hpp"
#include "panogs/core/math.hpp"
#include "panogs/gaussian.hpp"
#include "panogs/geometry.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace panogs {

// ---------------------------------------------------------------------------
// Padding

/// The (w + 2p) x (h + 2p) window of `pre_pad(img, p)` whose interior is the
/// region [x0, x0 + w) x [y0, y0 + h). Columns wrap around the panorama,
/// rows outside the image are zero.
inline Image padded_window(const Image& img, int x0, int y0, int w, int h, int p) {
    require(p >= 0 && w >= 0 && h >= 0, "padded_window: sizes must be non-negative");
    Image out(w + 2 * p, h + 2 * p, img.channels());
    for (int j = 0; j < out.height(); ++j) {
        const int y = y0 - p + j;
        if (y < 0 || y >= img.height()) continue;
        for (int i = 0; i < out.width(); ++i) {
            const int x = wrap_index(x0 - p + i, img.width());
            for (int c = 0; c < img.channels(); ++c) out.at(i, j, c) = img.at(x, y, c);
        }
    }
    return out;
}

/// Pads by p pixels: left and right borders wrap, top and bottom are zero.
/// Corners take the wrapped column first, so they are zero.
inline Image pre_pad(const Image& img, int p) { return padded_window(img, 0, 0, img.width(), img.height(), p); }

/// Adds the gradient of a padded window back onto the image it was cut from.
inline void padded_window_backward(const Image& grad_window, int x0, int y0, int p, Image& grad_img) {
    for (int j = 0; j < grad_window.height(); ++j) {
        const int y = y0 - p + j;
        if (y < 0 || y >= grad_img.height()) continue;
        for (int i = 0; i < grad_window.width(); ++i) {
            const int x = wrap_index(x0 - p + i, grad_img.width());
            for (int c = 0; c < grad_img.channels(); ++c) grad_img.at(x, y, c) += grad_window.at(i, j, c);
        }
    }
}

/// Adjoint of `pre_pad`.
inline Image pre_pad_backward(const Image& grad_padded, int p) {
    Image g(grad_padded.width() - 2 * p, grad_padded.height() - 2 * p, grad_padded.channels());
    padded_window_backward(grad_padded, 0, 0, p, g);
    return g;
}

// ---------------------------------------------------------------------------
// Tiles

struct TileRect {
    int x0 = 0;
    int y0 = 0;
    int w = 0;
    int h = 0;
};

/// N x N partition of a raster. The last row and column absorb the remainder.
struct TileGrid {
    int n = 1;
    int width = 0;
    int height = 0;
    int pad = 0;

    TileRect tile(int i, int j) const {
        const int tw = width / n, th = height / n;
        return {i * tw, j * th, i == n - 1 ? width - i * tw : tw, j == n - 1 ? height - j * th : th};
    }

    /// Row-major tile list.
    std::vector<TileRect> tiles() const {
        std::vector<TileRect> out;
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i) out.push_back(tile(i, j));
        return out;
    }

    /// Index of the tile containing pixel (x, y).
    int tile_of(int x, int y) const {
        const int i = std::min(x / (width / n), n - 1), j = std::min(y / (height / n), n - 1);
        return j * n + i;
    }
};

inline TileGrid make_tile_grid(int width, int height, int n, int pad) {
    require(n >= 1, "tile grid: need at least one tile per side");
    require(width >= n && height >= n, "tile grid: raster smaller than the tile count");
    require(pad <= std::min(width / n, height / n), "tile grid: operator radius exceeds the tile size");
    return {n, width, height, pad};
}

// ---------------------------------------------------------------------------
// Local operators

/// Activations kept between forward and backward.
using OperatorTape = std::vector<Image>;

/// Operator whose output at p depends only on input within Chebyshev radius
/// `radius` of p. It maps a raster padded by `radius` on every side to the
/// unpadded output.
struct LocalOperator {
    using Forward = std::function<Image(const Image& padded, std::span<const double> theta, OperatorTape* tape)>;
    /// Returns the gradient w.r.t. the padded input and accumulates into grad_theta.
    /// An empty tape makes the backward recompute the forward.
    using Backward = std::function<Image(const Image& padded, std::span<const double> theta, const OperatorTape& tape,
                                         const Image& grad_out, std::span<double> grad_theta)>;

    int radius = 0;
    int in_channels = 0;
    int out_channels = 0;
    std::vector<double> theta;
    Forward forward;
    Backward backward;
    bool certified = false; ///< set by `certify_locality`

    Image apply(const Image& padded, OperatorTape* tape = nullptr) const {
        require(padded.channels() == in_channels, "local operator: input channel count mismatch");
        require(padded.width() > 2 * radius && padded.height() > 2 * radius, "local operator: input smaller than its padding");
        return forward(padded, theta, tape);
    }

    Image adjoint(const Image& padded, const Image& grad_out, std::span<double> grad_theta,
                  const OperatorTape& tape = {}) const {
        require(grad_theta.size() == theta.size(), "local operator: parameter gradient size mismatch");
        require(grad_out.width() == padded.width() - 2 * radius && grad_out.height() == padded.height() - 2 * radius &&
                    grad_out.channels() == out_channels,
                "local operator: output gradient shape mismatch");
        return backward(padded, theta, tape, grad_out, grad_theta);
    }
};

/// Largest Chebyshev distance (horizontal wrap) between a perturbed input
/// pixel and an output pixel that changed, over `trials` random probes.
inline int probe_radius(const LocalOperator& op, std::uint64_t seed = 0, int trials = 8) {
    const int side = 4 * op.radius + 8;
    const int w = 2 * side, h = side;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_int_distribution<int> ux(0, w - 1), uy(0, h - 1);
    int measured = 0;
    for (int t = 0; t < trials; ++t) {
        Image x(w, h, op.in_channels);
        for (double& v : x.data()) v = u(rng);
        const Image base = op.apply(pre_pad(x, op.radius));
        const int qx = ux(rng), qy = uy(rng);
        for (int c = 0; c < op.in_channels; ++c) x.at(qx, qy, c) += 0.5 + 0.5 * std::abs(u(rng));
        const Image moved = op.apply(pre_pad(x, op.radius));
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                bool changed = false;
                for (int c = 0; c < op.out_channels; ++c) changed = changed || base.at(xx, y, c) != moved.at(xx, y, c);
                if (!changed) continue;
                int dx = std::abs(xx - qx);
                dx = std::min(dx, w - dx);
                measured = std::max({measured, dx, std::abs(y - qy)});
            }
    }
    return measured;
}

/// Marks `op` certified after a randomized probe confirms its declared radius.
inline LocalOperator certify_locality(LocalOperator op, std::uint64_t seed = 0, int trials = 8) {
    require(op.radius >= 0 && static_cast<bool>(op.forward), "certify_locality: operator is incomplete");
    const int measured = probe_radius(op, seed, trials);
    if (measured > op.radius)
        throw VerificationError("certify_locality: output depends on input " + std::to_string(measured) +
                                " pixels away, declared radius is " + std::to_string(op.radius));
    op.certified = true;
    return op;
}

/// Reference: the operator on the whole pre-padded raster.
inline Image run_untiled(const LocalOperator& op, const Image& img, OperatorTape* tape = nullptr) {
    return op.apply(pre_pad(img, op.radius), tape);
}

/// Tile-by-tile execution; bit-identical to `run_untiled`.
inline Image run_tiled(const LocalOperator& op, const Image& img, int n) {
    require(op.certified, "run_tiled: operator locality has not been certified");
    const TileGrid grid = make_tile_grid(img.width(), img.height(), n, op.radius);
    Image out(img.width(), img.height(), op.out_channels);
    for (const TileRect& t : grid.tiles()) {
        const Image part = op.apply(padded_window(img, t.x0, t.y0, t.w, t.h, op.radius));
        for (int y = 0; y < t.h; ++y)
            for (int x = 0; x < t.w; ++x)
                for (int c = 0; c < op.out_channels; ++c) out.at(t.x0 + x, t.y0 + y, c) = part.at(x, y, c);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Toy Gaussian head: three 3x3 valid convolutions, tanh between them.

struct ToyHeadShape {
    int in = 0;
    int hidden = 8;
    int out = 0;

    int layer_in(int l) const { return l == 0 ? in : hidden; }
    int layer_out(int l) const { return l == 2 ? out : hidden; }
    /// Offset of layer l's weights [out][in][3][3]; its biases follow them.
    std::size_t offset(int l) const {
        std::size_t o = 0;
        for (int k = 0; k < l; ++k) o += static_cast<std::size_t>(layer_out(k)) * (layer_in(k) * 9 + 1);
        return o;
    }
    std::size_t size() const { return offset(3); }
};

namespace detail {

/// Valid 3x3 cross-correlation plus bias.
inline Image conv3x3(const Image& in, std::span<const double> w, std::span<const double> b, int out_channels) {
    const int ci = in.channels();
    Image out(in.width() - 2, in.height() - 2, out_channels);
    for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x)
            for (int o = 0; o < out_channels; ++o) {
                double s = b[o];
                const double* wo = w.data() + static_cast<std::size_t>(o) * ci * 9;
                for (int dy = 0; dy < 3; ++dy)
                    for (int dx = 0; dx < 3; ++dx) {
                        const auto px = in.pixel(x + dx, y + dy);
                        for (int c = 0; c < ci; ++c) s += wo[(c * 3 + dy) * 3 + dx] * px[c];
                    }
                out.at(x, y, o) = s;
            }
    return out;
}

/// Adjoint of `conv3x3`: accumulates weight and bias gradients, returns the input gradient.
inline Image conv3x3_backward(const Image& in, std::span<const double> w, const Image& grad_out,
                              std::span<double> grad_w, std::span<double> grad_b) {
    const int ci = in.channels();
    Image grad_in(in.width(), in.height(), ci);
    for (int y = 0; y < grad_out.height(); ++y)
        for (int x = 0; x < grad_out.width(); ++x)
            for (int o = 0; o < grad_out.channels(); ++o) {
                const double g = grad_out.at(x, y, o);
                if (g == 0.0) continue;
                grad_b[o] += g;
                const std::size_t wo = static_cast<std::size_t>(o) * ci * 9;
                for (int dy = 0; dy < 3; ++dy)
                    for (int dx = 0; dx < 3; ++dx) {
                        const auto px = in.pixel(x + dx, y + dy);
                        auto gpx = grad_in.pixel(x + dx, y + dy);
                        for (int c = 0; c < ci; ++c) {
                            const std::size_t k = wo + (c * 3 + dy) * 3 + dx;
                            grad_w[k] += g * px[c];
                            gpx[c] += g * w[k];
                        }
                    }
            }
    return grad_in;
}

inline void tanh_inplace(Image& img) {
    for (double& v : img.data()) v = std::tanh(v);
}

inline std::span<const double> layer_weights(std::span<const double> theta, const ToyHeadShape& s, int l) {
    return theta.subspan(s.offset(l), static_cast<std::size_t>(s.layer_out(l)) * s.layer_in(l) * 9);
}

inline std::span<const double> layer_bias(std::span<const double> theta, const ToyHeadShape& s, int l) {
    return theta.subspan(s.offset(l) + static_cast<std::size_t>(s.layer_out(l)) * s.layer_in(l) * 9,
                         static_cast<std::size_t>(s.layer_out(l)));
}

inline Image toy_forward(const ToyHeadShape& s, const Image& padded, std::span<const double> theta, OperatorTape* tape) {
    Image a1 = conv3x3(padded, layer_weights(theta, s, 0), layer_bias(theta, s, 0), s.hidden);
    tanh_inplace(a1);
    Image a2 = conv3x3(a1, layer_weights(theta, s, 1), layer_bias(theta, s, 1), s.hidden);
    tanh_inplace(a2);
    Image out = conv3x3(a2, layer_weights(theta, s, 2), layer_bias(theta, s, 2), s.out);
    if (tape) {
        tape->clear();
        tape->push_back(std::move(a1));
        tape->push_back(std::move(a2));
    }
    return out;
}

inline Image toy_backward(const ToyHeadShape& s, const Image& padded, std::span<const double> theta,
                          const OperatorTape& tape, const Image& grad_out, std::span<double> grad_theta) {
    OperatorTape local;
    const OperatorTape* t = &tape;
    if (tape.size() != 2) {
        toy_forward(s, padded, theta, &local);
        t = &local;
    }
    const Image& a1 = (*t)[0];
    const Image& a2 = (*t)[1];
    auto gw = [&](int l) {
        return grad_theta.subspan(s.offset(l), static_cast<std::size_t>(s.layer_out(l)) * s.layer_in(l) * 9);
    };
    auto gb = [&](int l) {
        return grad_theta.subspan(s.offset(l) + static_cast<std::size_t>(s.layer_out(l)) * s.layer_in(l) * 9,
                                  static_cast<std::size_t>(s.layer_out(l)));
    };
    Image g2 = conv3x3_backward(a2, layer_weights(theta, s, 2), grad_out, gw(2), gb(2));
    for (std::size_t i = 0; i < g2.size(); ++i) g2.data()[i] *= 1.0 - a2.data()[i] * a2.data()[i];
    Image g1 = conv3x3_backward(a1, layer_weights(theta, s, 1), g2, gw(1), gb(1));
    for (std::size_t i = 0; i < g1.size(); ++i) g1.data()[i] *= 1.0 - a1.data()[i] * a1.data()[i];
    return conv3x3_backward(padded, layer_weights(theta, s, 0), g1, gw(0), gb(0));
}

} // namespace detail

/// Deterministic parameters: weights ~ N(0, gain^2 / (9 * fan_in)), biases ~ N(0, 0.01).
inline std::vector<double> toy_head_theta(const ToyHeadShape& s, std::uint64_t seed, double gain = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> theta(s.size());
    for (int l = 0; l < 3; ++l) {
        const double sd = gain / std::sqrt(9.0 * s.layer_in(l));
        const std::size_t nw = static_cast<std::size_t>(s.layer_out(l)) * s.layer_in(l) * 9;
        for (std::size_t k = 0; k < nw; ++k) theta[s.offset(l) + k] = sd * n(rng);
        for (int o = 0; o < s.layer_out(l); ++o) theta[s.offset(l) + nw + o] = 0.1 * n(rng);
    }
    return theta;
}

/// Centre tap 1 on matching channels, everything else 0 (needs in == hidden == out).
inline std::vector<double> toy_head_identity_theta(const ToyHeadShape& s) {
    require(s.in == s.hidden && s.hidden == s.out, "toy_head_identity_theta: channel counts must agree");
    std::vector<double> theta(s.size(), 0.0);
    for (int l = 0; l < 3; ++l)
        for (int c = 0; c < s.hidden; ++c) theta[s.offset(l) + (static_cast<std::size_t>(c) * s.hidden + c) * 9 + 4] = 1.0;
    return theta;
}

/// The toy head as a certified local operator of radius 3.
inline LocalOperator toy_head(const ToyHeadShape& shape, std::vector<double> theta) {
    require(shape.in > 0 && shape.hidden > 0 && shape.out > 0, "toy_head: channel counts must be positive");
    require(theta.size() == shape.size(), "toy_head: parameter vector has the wrong size");
    LocalOperator op;
    op.radius = 3;
    op.in_channels = shape.in;
    op.out_channels = shape.out;
    op.theta = std::move(theta);
    op.forward = [shape](const Image& padded, std::span<const double> th, OperatorTape* tape) {
        return detail::toy_forward(shape, padded, th, tape);
    };
    op.backward = [shape](const Image& padded, std::span<const double> th, const OperatorTape& tape, const Image& g,
                          std::span<double> gt) { return detail::toy_backward(shape, padded, th, tape, g, gt); };
    return certify_locality(std::move(op));
}

// ---------------------------------------------------------------------------
// Lattice sampling

/// Bilinear feature vector of every lattice point (horizontal wrap), one row per point.
inline RawLevel sample_lattice_features(const Image& raster, const FibonacciLattice& lattice) {
    RawLevel out;
    out.dim = raster.channels();
    out.values.resize(lattice.size() * out.dim);
    for (std::size_t j = 0; j < lattice.size(); ++j) {
        const PixelCoord p = lattice_pixel(lattice.points[j], raster.width(), raster.height());
        sample_erp(raster, p.u, p.v, std::span<double>(out.values.data() + j * out.dim, out.dim));
    }
    return out;
}

/// Adjoint of `sample_lattice_features`: scatters rows into a W x H raster.
inline Image scatter_lattice_features(const RawLevel& rows, const FibonacciLattice& lattice, int width, int height) {
    require(rows.count() == lattice.size(), "scatter_lattice_features: one row per lattice point required");
    Image g(width, height, rows.dim);
    for (std::size_t j = 0; j < lattice.size(); ++j) {
        const PixelCoord p = lattice_pixel(lattice.points[j], width, height);
        scatter_erp(g, p.u, p.v, rows.row(j));
    }
    return g;
}

// ---------------------------------------------------------------------------
// Residual chain

/// fine_out = head(fine_inputs ++ up(coarse)) + up(coarse), with up the 2x
/// bilinear upsampling. An empty `coarse` stands for zeros.
inline Image residual_chain(const LocalOperator& head, const Image& fine_inputs, const Image& coarse, int tiles = 1) {
    require(fine_inputs.channels() + head.out_channels == head.in_channels,
            "residual_chain: head input channels must be fine inputs plus coarse features");
    Image up(fine_inputs.width(), fine_inputs.height(), head.out_channels);
    if (!coarse.empty()) {
        require(coarse.width() * 2 == fine_inputs.width() && coarse.height() * 2 == fine_inputs.height() &&
                    coarse.channels() == head.out_channels,
                "residual_chain: coarse raster must be half the fine size with the head's output channels");
        up = upsample2x(coarse);
    }
    const Image x = concat_channels(fine_inputs, up);
    Image out = tiles == 1 ? run_untiled(head, x) : run_tiled(head, x, tiles);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += up.data()[i];
    return out;
}

} // namespace panogs
