#pragma once

// Gaussian-head pipeline (toy head per level, linear decode to Gaussians,
// cubemap render) and its gradient schedulers: a monolithic full-tape
// adjoint, and the deferred variants that render without a tape, cache the
// image gradient, then replay faces one at a time and head tiles one at a
// time.

#include "panogs/core/error.hpp"
#include "panogs/core/image.hpp"
#include "panogs/core/memory.hpp"
#include "panogs/cost_volume.hpp"
#include "panogs/gaussian.hpp"
#include "panogs/geometry.hpp"
#include "panogs/metrics.hpp"
#include "panogs/renderer.hpp"
#include "panogs/synth.hpp"
#include "panogs/tiling.hpp"

#include <algorithm>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace panogs {

/// One input view: its pose, its W x H x 3 image and its finest refined cost volume.
struct ViewInput {
    CameraPose pose;
    Image image;
    CostVolume volume;
};

struct PipelineSpec {
    int width = 0;     ///< level-0 head resolution W (H = W / 2)
    int levels = 2;
    int features = 4;  ///< head output channels
    int hidden = 8;
    int tiles = 1;     ///< N, tiles per side for every head pass
    DecodeConfig decode;
    RenderConfig render;
    CameraPose target;

    int level_width(int l) const { return width >> l; }
    int level_height(int l) const { return (width >> l) / 2; }

    void validate() const {
        require(width > 0 && width % 2 == 0, "pipeline: width must be a positive even number");
        require(levels >= 1 && levels <= 4, "pipeline: levels must lie in 1..4");
        require(width % (2 << (levels - 1)) == 0, "pipeline: width must be divisible by 2^levels");
        require(features >= 1 && hidden >= 1, "pipeline: channel counts must be positive");
        for (int l = 0; l < levels; ++l) make_tile_grid(level_width(l), level_height(l), tiles, 3);
        require(decode.sh_degree >= 0 && decode.sh_degree <= kMaxShDegree, "pipeline: unsupported SH degree");
        render.validate();
        target.validate();
    }
};

/// Parameter vector layout: per level, the head's parameters, then the
/// linear decode weights [raw][feature] and biases [raw].
struct ParamLayout {
    ToyHeadShape head;
    RawLayout raw;
    int raw_dim = 0;
    int features = 0;
    int levels = 0;

    std::size_t linear_size() const { return static_cast<std::size_t>(raw_dim) * (features + 1); }
    std::size_t per_level() const { return head.size() + linear_size(); }
    std::size_t head_offset(int l) const { return l * per_level(); }
    std::size_t weight_offset(int l) const { return head_offset(l) + head.size(); }
    std::size_t bias_offset(int l) const { return weight_offset(l) + static_cast<std::size_t>(raw_dim) * features; }
    std::size_t size() const { return levels * per_level(); }
};

inline ParamLayout make_param_layout(const PipelineSpec& spec, int candidates) {
    ParamLayout p;
    p.head = {3 + candidates + spec.features, spec.hidden, spec.features};
    p.raw = {candidates, spec.decode.sh_degree};
    p.raw_dim = p.raw.size();
    p.features = spec.features;
    p.levels = spec.levels;
    return p;
}

/// Seeded parameters. Depth logits start at zero so depth follows the cost
/// volume; scales start near two level pixels; rotations near identity.
inline std::vector<double> init_params(const ParamLayout& layout, std::uint64_t seed, double head_gain = 1.0,
                                       double linear_std = 0.1) {
    std::vector<double> theta(layout.size(), 0.0);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int l = 0; l < layout.levels; ++l) {
        const auto head = toy_head_theta(layout.head, seed * 7919 + l, head_gain);
        std::copy(head.begin(), head.end(), theta.begin() + layout.head_offset(l));
        for (std::size_t k = 0; k < static_cast<std::size_t>(layout.raw_dim) * layout.features; ++k)
            theta[layout.weight_offset(l) + k] = linear_std * n(rng);
        double* b = theta.data() + layout.bias_offset(l);
        b[layout.raw.opacity()] = 1.0;
        for (int i = 0; i < 3; ++i) b[layout.raw.scale() + i] = -2.5;
        b[layout.raw.rotation()] = 1.0;
    }
    return theta;
}

enum class BackpropMode { Monolithic, OneStep, TwoStep };

inline std::string mode_name(BackpropMode m) {
    switch (m) {
    case BackpropMode::Monolithic: return "monolithic";
    case BackpropMode::OneStep: return "one-step";
    case BackpropMode::TwoStep: return "two-step";
    }
    return "?";
}

/// Live bytes when a stage started and the peak reached during it.
struct StagePeak {
    std::size_t base = 0;
    std::size_t peak = 0;

    std::size_t growth() const { return peak - base; }
};

struct GradientLedger {
    tracked_vector<Gaussian> grads_gaussians;
    std::vector<double> grads_theta;
    Image grad_image_cache;
    double loss = 0.0;

    std::shared_ptr<MemoryCounter> counter;
    std::size_t peak_live_bytes = 0;
    std::size_t current_live_bytes = 0; ///< live bytes when the run returned (the ledger's own buffers)
    StagePeak forward;
    StagePeak render_stage; ///< render adjoint (step 1 in the two-step mode)
    StagePeak head_stage;   ///< head adjoint (step 2 in the deferred modes)

    /// Drops the gradient buffers; the counter then reads zero.
    void release() {
        grads_gaussians = tracked_vector<Gaussian>();
        grad_image_cache = Image();
    }
};

/// L2 image-loss gradient 2 (I - I^) / N. The perceptual hook has no gradient here.
inline Image cache_image_grad(const Image& rendered, const Image& target, const LossConfig& cfg = {}) {
    require(!cfg.perceptual, "cache_image_grad: the perceptual hook is not differentiable");
    return mse_gradient(rendered, target);
}

/// Face-by-face replay of the render adjoint: each face is re-rendered with
/// a tape, its share of the cached image gradient is pulled back, and the
/// tape is dropped before the next face.
inline tracked_vector<Gaussian> step1_faces(const GaussianSet& set, const CameraPose& pose, const RenderConfig& cfg,
                                            const Image& grad_cache) {
    require(!grad_cache.empty(), "step1_faces: image gradient cache missing");
    require(grad_cache.width() == cfg.width && grad_cache.height() == cfg.height && grad_cache.channels() == 3,
            "step1_faces: image gradient cache has the wrong shape");
    cfg.validate();
    const int r = cfg.face_resolution;
    tracked_vector<Gaussian> grads(set.size(), Gaussian::zero());
    const StitchMap map = make_stitch_map(cfg.width, cfg.height, r);
    const Image g4 = concat_channels(grad_cache, Image(grad_cache.width(), grad_cache.height(), 1));
    for (Face f : kAllFaces) {
        if (!cfg.active_faces[static_cast<int>(f)]) continue;
        FaceTape tape;
        render_face(set, pose, f, r, &tape);
        face_backward(tape, set, pose, face_gradient(g4, map, f), grads);
    }
    return grads;
}

struct ForwardResult {
    GaussianSet gaussians;
    Image image; ///< W x H x 3, premultiplied over black
};

class DeferredPipeline {
public:
    DeferredPipeline(PipelineSpec spec, std::vector<ViewInput> views, Image target, std::vector<double> theta)
        : spec_(std::move(spec)), views_(std::move(views)), target_(std::move(target)), theta_(std::move(theta)) {
        spec_.decode.base_width = spec_.width;
        spec_.validate();
        require(!views_.empty(), "pipeline: at least one view required");
        const int d = views_.front().volume.count;
        for (const ViewInput& v : views_) {
            v.pose.validate();
            require(v.image.width() == spec_.width && v.image.height() == spec_.width / 2 && v.image.channels() == 3,
                    "pipeline: view images must be W x W/2 x 3");
            require(v.volume.count == d && d >= 2, "pipeline: views need cost volumes with the same candidate count");
            require(v.volume.width > 0 && v.volume.width == 2 * v.volume.height &&
                        v.volume.scores.size() == static_cast<std::size_t>(v.volume.width) * v.volume.height * d &&
                        v.volume.base.width() == v.volume.width && v.volume.base.height() == v.volume.height,
                    "pipeline: malformed cost volume");
        }
        require(target_.width() == spec_.render.width && target_.height() == spec_.render.height &&
                    target_.channels() == 3,
                "pipeline: target must match the render size");
        layout_ = make_param_layout(spec_, d);
        require(theta_.size() == layout_.size(), "pipeline: parameter vector has the wrong size");
        for (int l = 0; l < spec_.levels; ++l) {
            const auto first = theta_.begin() + layout_.head_offset(l);
            heads_.push_back(toy_head(layout_.head, std::vector<double>(first, first + layout_.head.size())));
        }
        lattices_ = pyramid_lattices(spec_.width, spec_.levels);
        std::size_t per_view = 0;
        for (const auto& lat : lattices_) per_view += lat.size();
        per_view_ = per_view;
    }

    const PipelineSpec& spec() const { return spec_; }
    const ParamLayout& layout() const { return layout_; }
    std::span<const double> theta() const { return theta_; }
    const Image& target() const { return target_; }
    std::span<const ViewInput> views() const { return views_; }

    /// The same pipeline with other parameters. The heads keep their
    /// locality certificate: the toy head's radius does not depend on theta.
    DeferredPipeline with_theta(std::vector<double> theta) const {
        require(theta.size() == layout_.size(), "pipeline: parameter vector has the wrong size");
        DeferredPipeline out = *this;
        out.theta_ = std::move(theta);
        for (int l = 0; l < spec_.levels; ++l) {
            const auto first = out.theta_.begin() + layout_.head_offset(l);
            std::copy(first, first + layout_.head.size(), out.heads_[l].theta.begin());
        }
        return out;
    }
    std::size_t gaussian_count() const { return per_view_ * views_.size(); }

    /// First consolidated index of view v, level l (view-major, coarse to fine).
    std::size_t offset(int v, int l) const {
        std::size_t o = v * per_view_;
        for (int k = spec_.levels - 1; k > l; --k) o += lattices_[k].size();
        return o;
    }

    // -----------------------------------------------------------------------
    // Forward

    /// Head, decode and render with no retained activations.
    ForwardResult forward_nograd() const {
        ForwardResult out;
        out.gaussians = gaussians();
        RenderConfig rc = spec_.render;
        rc.mode = FaceMode::Sequential;
        out.image = render_pano(out.gaussians, spec_.target, rc).rgb();
        return out;
    }

    /// Gaussians from tiled head passes, fine level features freed as soon as decoded.
    GaussianSet gaussians() const {
        GaussianSet set;
        set.sh_degree = spec_.decode.sh_degree;
        set.items.resize(gaussian_count());
        for (std::size_t v = 0; v < views_.size(); ++v) {
            Image coarse;
            for (int l = spec_.levels - 1; l >= 0; --l) {
                Image f = level_features(static_cast<int>(v), l, coarse, spec_.tiles);
                decode_level(static_cast<int>(v), l, f, set);
                coarse = std::move(f);
            }
        }
        return set;
    }

    struct LevelTape {
        Image input;       ///< padded head input
        OperatorTape head;
        Image features;
    };

    struct ForwardTape {
        std::vector<std::vector<LevelTape>> levels; ///< [view][level]
        GaussianSet gaussians;
        RenderResult render;
    };

    /// Forward keeping every activation the adjoint needs.
    ForwardTape forward_tape() const {
        ForwardTape ft;
        ft.gaussians.sh_degree = spec_.decode.sh_degree;
        ft.gaussians.items.resize(gaussian_count());
        ft.levels.resize(views_.size());
        for (std::size_t v = 0; v < views_.size(); ++v) {
            auto& lv = ft.levels[v];
            lv.resize(spec_.levels);
            for (int l = spec_.levels - 1; l >= 0; --l) {
                const Image& coarse = l + 1 < spec_.levels ? lv[l + 1].features : Image();
                LevelTape& t = lv[l];
                const TileRect full{0, 0, spec_.level_width(l), spec_.level_height(l)};
                t.input = input_window(static_cast<int>(v), l, coarse, full, 3);
                t.features = heads_[l].apply(t.input, &t.head);
                add_residual(t.features, coarse, full);
                decode_level(static_cast<int>(v), l, t.features, ft.gaussians);
            }
        }
        RenderConfig rc = spec_.render;
        rc.mode = FaceMode::Batched;
        ft.render = render_pano(ft.gaussians, spec_.target, rc, true);
        return ft;
    }

    // -----------------------------------------------------------------------
    // Deferred steps

    tracked_vector<Gaussian> step1_faces(const GaussianSet& set, const Image& grad_cache) const {
        require(set.size() == gaussian_count(), "step1_faces: Gaussian set does not belong to this pipeline");
        return panogs::step1_faces(set, spec_.target, spec_.render, grad_cache);
    }

    /// Tile-by-tile replay of the head adjoint. Each Gaussian's gradient is
    /// handled by the tile holding the top-left tap of its bilinear footprint.
    std::vector<double> step2_tiles(std::span<const Gaussian> grads) const {
        require(grads.size() == gaussian_count(), "step2_tiles: one gradient per Gaussian required");
        std::vector<double> grad_theta(layout_.size(), 0.0);
        const int p = 3, fch = spec_.features;
        for (std::size_t vi = 0; vi < views_.size(); ++vi) {
            const int v = static_cast<int>(vi);
            std::vector<Image> feats(spec_.levels + 1);
            for (int l = spec_.levels - 1; l >= 1; --l) feats[l] = level_features(v, l, feats[l + 1], spec_.tiles);

            Image incoming; // gradient w.r.t. this level's features from the finer level
            for (int l = 0; l < spec_.levels; ++l) {
                const int wl = spec_.level_width(l), hl = spec_.level_height(l);
                const Image& coarse = feats[l + 1];
                Image outgoing;
                if (l + 1 < spec_.levels) outgoing = Image(spec_.level_width(l + 1), spec_.level_height(l + 1), fch);
                const TileGrid grid = make_tile_grid(wl, hl, spec_.tiles, p);
                const FibonacciLattice& lat = lattices_[l];

                std::vector<tracked_vector<std::uint32_t>> owned(static_cast<std::size_t>(grid.n) * grid.n);
                for (std::size_t j = 0; j < lat.size(); ++j) {
                    const PixelCoord q = lattice_pixel(lat.points[j], wl, hl);
                    const BilinearTaps t = erp_taps(q.u, q.v, wl, hl);
                    owned[grid.tile_of(t.x[0], t.y[0])].push_back(static_cast<std::uint32_t>(j));
                }

                const auto tiles = grid.tiles();
                for (std::size_t ti = 0; ti < tiles.size(); ++ti) {
                    const TileRect& t = tiles[ti];
                    const TileRect e{t.x0, t.y0, t.w + 1, t.y0 + t.h < hl ? t.h + 1 : t.h};
                    const Image window = input_window(v, l, coarse, e, p);
                    OperatorTape tape;
                    Image feat = heads_[l].apply(window, &tape);
                    add_residual(feat, coarse, e);

                    Image g(e.w, e.h, fch);
                    accumulate_owned(v, l, owned[ti], feat, e, grads, g, grad_theta);
                    owned[ti] = tracked_vector<std::uint32_t>();
                    if (!incoming.empty())
                        for (int y = 0; y < t.h; ++y)
                            for (int x = 0; x < t.w; ++x)
                                for (int c = 0; c < fch; ++c) g.at(x, y, c) += incoming.at(t.x0 + x, t.y0 + y, c);

                    const Image gw = heads_[l].adjoint(window, g, head_grad(grad_theta, l), tape);
                    if (outgoing.empty()) continue;
                    std::vector<double> gu(fch);
                    for (int j = 0; j < gw.height(); ++j) {
                        const int y = e.y0 - p + j;
                        if (y < 0 || y >= hl) continue;
                        for (int i = 0; i < gw.width(); ++i) {
                            const int x = wrap_index(e.x0 - p + i, wl);
                            const bool inside = i >= p && i < p + e.w && j >= p && j < p + e.h;
                            for (int c = 0; c < fch; ++c)
                                gu[c] = gw.at(i, j, 3 + volume_channels() + c) + (inside ? g.at(i - p, j - p, c) : 0.0);
                            scatter_erp(outgoing, (x + 0.5) / 2 - 0.5, (y + 0.5) / 2 - 0.5, gu);
                        }
                    }
                }
                feats[l + 1] = Image();
                incoming = std::move(outgoing);
            }
        }
        return grad_theta;
    }

    // -----------------------------------------------------------------------
    // Schedulers

    /// Full-tape adjoint of the end-to-end L2 loss.
    GradientLedger monolithic_grads() const { return run(BackpropMode::Monolithic); }

    GradientLedger run(BackpropMode mode) const {
        GradientLedger ledger;
        ledger.counter = std::make_shared<MemoryCounter>();
        MemoryScope scope(ledger.counter);
        MemoryCounter& c = *ledger.counter;
        std::size_t overall = 0;
        auto stage = [&](auto&& fn) {
            overall = std::max(overall, c.peak());
            StagePeak sp;
            sp.base = c.current();
            c.reset_peak();
            fn();
            sp.peak = c.peak();
            overall = std::max(overall, sp.peak);
            return sp;
        };

        if (mode == BackpropMode::Monolithic) {
            std::optional<ForwardTape> ft;
            ledger.forward = stage([&] { ft = forward_tape(); });
            ledger.render_stage = stage([&] {
                const Image rgb = ft->render.rgb();
                ledger.loss = mse(rgb, target_);
                ledger.grad_image_cache = mse_gradient(rgb, target_);
                ledger.grads_gaussians = render_backward(*ft->render.tape, ft->gaussians, ledger.grad_image_cache);
            });
            ledger.head_stage = stage([&] {
                ledger.grads_theta = head_backward(*ft, ledger.grads_gaussians);
                ft.reset();
            });
        } else {
            std::optional<GaussianSet> set;
            std::optional<RenderResult> render;
            Image rgb;
            ledger.forward = stage([&] {
                set = gaussians();
                RenderConfig rc = spec_.render;
                rc.mode = mode == BackpropMode::OneStep ? FaceMode::Batched : FaceMode::Sequential;
                render = render_pano(*set, spec_.target, rc, mode == BackpropMode::OneStep);
                rgb = render->rgb();
                ledger.loss = mse(rgb, target_);
                ledger.grad_image_cache = mse_gradient(rgb, target_);
                rgb = Image();
                render->image = Image();
                if (mode == BackpropMode::TwoStep) render.reset();
            });
            ledger.render_stage = stage([&] {
                if (mode == BackpropMode::OneStep)
                    ledger.grads_gaussians = render_backward(*render->tape, *set, ledger.grad_image_cache);
                else
                    ledger.grads_gaussians = step1_faces(*set, ledger.grad_image_cache);
                render.reset();
                set.reset();
            });
            ledger.head_stage = stage([&] { ledger.grads_theta = step2_tiles(ledger.grads_gaussians); });
        }
        ledger.peak_live_bytes = std::max(overall, c.peak());
        ledger.current_live_bytes = c.current();
        return ledger;
    }

    /// Loss of the current parameters (forward only).
    double loss() const { return mse(forward_nograd().image, target_); }

private:
    int volume_channels() const { return views_.front().volume.count; }

    std::span<double> head_grad(std::vector<double>& g, int l) const {
        return std::span<double>(g).subspan(layout_.head_offset(l), layout_.head.size());
    }

    /// Image (box mean) and resampled cost-volume scores at level-l pixel (x, y).
    void static_input(int v, int l, int x, int y, std::span<double> out) const {
        const ViewInput& view = views_[v];
        const int f = 1 << l;
        double acc[3] = {0.0, 0.0, 0.0};
        for (int dy = 0; dy < f; ++dy)
            for (int dx = 0; dx < f; ++dx)
                for (int c = 0; c < 3; ++c) acc[c] += view.image.at(x * f + dx, y * f + dy, c);
        for (int c = 0; c < 3; ++c) out[c] = acc[c] / (f * f);
        const CostVolume& vol = view.volume;
        const double u = (x + 0.5) * vol.width / spec_.level_width(l) - 0.5;
        const double w = (y + 0.5) * vol.height / spec_.level_height(l) - 0.5;
        const BilinearTaps t = erp_taps(u, w, vol.width, vol.height);
        const auto s00 = vol.at(t.x[0], t.y[0]), s10 = vol.at(t.x[1], t.y[0]);
        const auto s01 = vol.at(t.x[0], t.y[1]), s11 = vol.at(t.x[1], t.y[1]);
        for (int k = 0; k < vol.count; ++k)
            out[3 + k] = t.w[0] * s00[k] + t.w[1] * s10[k] + t.w[2] * s01[k] + t.w[3] * s11[k];
    }

    /// Head input over `r` padded by p: wrap left/right, zero above and below.
    Image input_window(int v, int l, const Image& coarse, const TileRect& r, int p) const {
        const int wl = spec_.level_width(l), hl = spec_.level_height(l);
        const int d = volume_channels();
        Image win(r.w + 2 * p, r.h + 2 * p, layout_.head.in);
        for (int j = 0; j < win.height(); ++j) {
            const int y = r.y0 - p + j;
            if (y < 0 || y >= hl) continue;
            for (int i = 0; i < win.width(); ++i) {
                const int x = wrap_index(r.x0 - p + i, wl);
                const std::span<double> px = win.pixel(i, j);
                static_input(v, l, x, y, px);
                if (!coarse.empty()) sample_erp(coarse, (x + 0.5) / 2 - 0.5, (y + 0.5) / 2 - 0.5, px.subspan(3 + d));
            }
        }
        return win;
    }

    /// Adds up(coarse) over the region `r` of the level raster.
    void add_residual(Image& out, const Image& coarse, const TileRect& r) const {
        if (coarse.empty()) return;
        const int wl = coarse.width() * 2;
        std::vector<double> up(coarse.channels());
        for (int j = 0; j < r.h; ++j)
            for (int i = 0; i < r.w; ++i) {
                const int x = wrap_index(r.x0 + i, wl), y = r.y0 + j;
                sample_erp(coarse, (x + 0.5) / 2 - 0.5, (y + 0.5) / 2 - 0.5, up);
                for (int c = 0; c < coarse.channels(); ++c) out.at(i, j, c) += up[c];
            }
    }

    /// Level features head(X) + up(coarse), computed tile by tile.
    Image level_features(int v, int l, const Image& coarse, int tiles) const {
        const TileGrid grid = make_tile_grid(spec_.level_width(l), spec_.level_height(l), tiles, 3);
        Image out(grid.width, grid.height, spec_.features);
        for (const TileRect& t : grid.tiles()) {
            Image part = heads_[l].apply(input_window(v, l, coarse, t, 3));
            add_residual(part, coarse, t);
            for (int y = 0; y < t.h; ++y)
                for (int x = 0; x < t.w; ++x)
                    for (int c = 0; c < spec_.features; ++c) out.at(t.x0 + x, t.y0 + y, c) = part.at(x, y, c);
        }
        return out;
    }

    /// Raw head vector and depth candidates of Gaussian j at level l.
    void raw_vector(int v, int l, std::size_t j, std::span<const double> feat, std::span<double> raw,
                    DepthHypotheses& hyp) const {
        const int fch = spec_.features;
        const double* w = theta_.data() + layout_.weight_offset(l);
        const double* b = theta_.data() + layout_.bias_offset(l);
        for (int r = 0; r < layout_.raw_dim; ++r) {
            double s = b[r];
            for (int c = 0; c < fch; ++c) s += w[static_cast<std::size_t>(r) * fch + c] * feat[c];
            raw[r] = s;
        }
        const CostVolume& vol = views_[v].volume;
        const PixelCoord q = lattice_pixel(lattices_[l].points[j], vol.width, vol.height);
        const BilinearTaps t = erp_taps(q.u, q.v, vol.width, vol.height);
        const auto s00 = vol.at(t.x[0], t.y[0]), s10 = vol.at(t.x[1], t.y[0]);
        const auto s01 = vol.at(t.x[0], t.y[1]), s11 = vol.at(t.x[1], t.y[1]);
        for (int k = 0; k < vol.count; ++k)
            raw[k] += t.w[0] * s00[k] + t.w[1] * s10[k] + t.w[2] * s01[k] + t.w[3] * s11[k];
        const double base = t.w[0] * vol.base.at(t.x[0], t.y[0]) + t.w[1] * vol.base.at(t.x[1], t.y[0]) +
                            t.w[2] * vol.base.at(t.x[0], t.y[1]) + t.w[3] * vol.base.at(t.x[1], t.y[1]);
        hyp.d_min = vol.d_min;
        hyp.d_max = vol.d_max;
        hyp.inverse.resize(vol.count);
        for (int k = 0; k < vol.count; ++k) hyp.inverse[k] = base + k * vol.step;
    }

    void decode_level(int v, int l, const Image& feats, GaussianSet& set) const {
        const FibonacciLattice& lat = lattices_[l];
        const std::size_t o = offset(v, l);
        std::vector<double> f(spec_.features), raw(layout_.raw_dim);
        DepthHypotheses hyp;
        for (std::size_t j = 0; j < lat.size(); ++j) {
            const PixelCoord q = lattice_pixel(lat.points[j], feats.width(), feats.height());
            sample_erp(feats, q.u, q.v, f);
            raw_vector(v, l, j, f, raw, hyp);
            set.items[o + j] = decode_gaussian(raw, {lat.points[j], l, &views_[v].pose}, hyp, spec_.decode);
        }
    }

    /// Decode and linear-layer adjoint of one Gaussian; returns the feature gradient in `gf`.
    void gaussian_backward(int v, int l, std::size_t j, std::span<const double> f, const Gaussian& grad,
                           std::vector<double>& grad_theta, std::span<double> gf, std::vector<double>& raw,
                           std::vector<double>& graw, DepthHypotheses& hyp) const {
        const int fch = spec_.features;
        raw_vector(v, l, j, f, raw, hyp);
        std::fill(graw.begin(), graw.end(), 0.0);
        decode_gaussian_backward(raw, {lattices_[l].points[j], l, &views_[v].pose}, hyp, spec_.decode, grad, 0.0, graw);
        const double* w = theta_.data() + layout_.weight_offset(l);
        double* gw = grad_theta.data() + layout_.weight_offset(l);
        double* gb = grad_theta.data() + layout_.bias_offset(l);
        std::fill(gf.begin(), gf.end(), 0.0);
        for (int r = 0; r < layout_.raw_dim; ++r) {
            gb[r] += graw[r];
            for (int c = 0; c < fch; ++c) {
                gw[static_cast<std::size_t>(r) * fch + c] += graw[r] * f[c];
                gf[c] += w[static_cast<std::size_t>(r) * fch + c] * graw[r];
            }
        }
    }

    /// Feature gradients of the Gaussians in `owned`, scattered into the
    /// extended-tile raster `g` covering region `e`.
    void accumulate_owned(int v, int l, std::span<const std::uint32_t> owned, const Image& feat, const TileRect& e,
                          std::span<const Gaussian> grads, Image& g, std::vector<double>& grad_theta) const {
        const int wl = spec_.level_width(l), hl = spec_.level_height(l), fch = spec_.features;
        const FibonacciLattice& lat = lattices_[l];
        const std::size_t o = offset(v, l);
        std::vector<double> f(fch), gf(fch), raw(layout_.raw_dim), graw(layout_.raw_dim);
        DepthHypotheses hyp;
        for (std::uint32_t j : owned) {
            const PixelCoord q = lattice_pixel(lat.points[j], wl, hl);
            const BilinearTaps t = erp_taps(q.u, q.v, wl, hl);
            const int lx0 = wrap_index(t.x[0] - e.x0, wl), lx1 = lx0 + 1;
            const int ly0 = t.y[0] - e.y0, ly1 = ly0 + (t.y[1] - t.y[0]);
            for (int c = 0; c < fch; ++c)
                f[c] = t.w[0] * feat.at(lx0, ly0, c) + t.w[1] * feat.at(lx1, ly0, c) + t.w[2] * feat.at(lx0, ly1, c) +
                       t.w[3] * feat.at(lx1, ly1, c);
            gaussian_backward(v, l, j, f, grads[o + j], grad_theta, gf, raw, graw, hyp);
            for (int c = 0; c < fch; ++c) {
                g.at(lx0, ly0, c) += t.w[0] * gf[c];
                g.at(lx1, ly0, c) += t.w[1] * gf[c];
                g.at(lx0, ly1, c) += t.w[2] * gf[c];
                g.at(lx1, ly1, c) += t.w[3] * gf[c];
            }
        }
    }

    /// Whole-raster head adjoint over the taped forward.
    std::vector<double> head_backward(const ForwardTape& ft, std::span<const Gaussian> grads) const {
        std::vector<double> grad_theta(layout_.size(), 0.0);
        const int fch = spec_.features, d = volume_channels();
        std::vector<double> f(fch), gf(fch), raw(layout_.raw_dim), graw(layout_.raw_dim);
        DepthHypotheses hyp;
        for (std::size_t vi = 0; vi < views_.size(); ++vi) {
            const int v = static_cast<int>(vi);
            Image incoming;
            for (int l = 0; l < spec_.levels; ++l) {
                const LevelTape& t = ft.levels[v][l];
                const FibonacciLattice& lat = lattices_[l];
                const std::size_t o = offset(v, l);
                Image g(t.features.width(), t.features.height(), fch);
                for (std::size_t j = 0; j < lat.size(); ++j) {
                    const PixelCoord q = lattice_pixel(lat.points[j], g.width(), g.height());
                    sample_erp(t.features, q.u, q.v, f);
                    gaussian_backward(v, l, j, f, grads[o + j], grad_theta, gf, raw, graw, hyp);
                    scatter_erp(g, q.u, q.v, gf);
                }
                if (!incoming.empty())
                    for (std::size_t k = 0; k < g.size(); ++k) g.data()[k] += incoming.data()[k];
                const Image gp = heads_[l].adjoint(t.input, g, head_grad(grad_theta, l), t.head);
                if (l + 1 == spec_.levels) break;
                Image gx = pre_pad_backward(gp, 3);
                Image up = slice_channels(gx, 3 + d, fch);
                for (std::size_t k = 0; k < up.size(); ++k) up.data()[k] += g.data()[k];
                incoming = upsample2x_backward(up);
            }
        }
        return grad_theta;
    }

    PipelineSpec spec_;
    std::vector<ViewInput> views_;
    Image target_;
    std::vector<double> theta_;
    ParamLayout layout_;
    std::vector<LocalOperator> heads_;
    std::vector<FibonacciLattice> lattices_;
    std::size_t per_view_ = 0;
};

// ---------------------------------------------------------------------------
// Synthetic pipelines

struct SyntheticPipelineConfig {
    int width = 64;            ///< head and render width
    int levels = 2;
    int geometry_width = 64;   ///< cost-volume input width, independent of `width`
    int candidates = 16;       ///< at the coarsest cost-volume level
    int features = 4;
    int hidden = 8;
    int tiles = 1;
    int sh_degree = 0;
    int face_resolution = 0;   ///< 0: H
    double baseline = 0.6;
    std::uint64_t seed = 1;
};

/// Two views and a midpoint target in a seeded textured box room.
inline DeferredPipeline make_synthetic_pipeline(const SyntheticPipelineConfig& cfg) {
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> u(-0.3, 0.3), yaw(-kPi, kPi);
    SceneSpec scene;
    scene.texture.seed = cfg.seed;
    scene.supersample = 1;
    const Vec3 center(u(rng), 0.2 * u(rng), u(rng));
    const double a = yaw(rng);
    const Vec3 axis(std::cos(a), 0.0, std::sin(a));
    scene.poses = stereo_pair(center, axis, cfg.baseline);
    const CameraPose target = make_pose(center + Vec3(0.0, 0.05, 0.0), Quat::Identity());

    std::array<Image, 2> geo;
    std::vector<ViewInput> views(2);
    for (int i = 0; i < 2; ++i) {
        views[i].pose = scene.poses[i];
        views[i].image = scene_image(scene, scene.poses[i], cfg.width);
        geo[i] = scene_image(scene, scene.poses[i], cfg.geometry_width);
    }
    CostVolumeConfig cv;
    cv.d_min = 0.5;
    cv.d_max = 10.0;
    cv.candidates = cfg.candidates;
    cv.coarsest = 2;
    auto depth = hierarchical_depth(geo, {scene.poses[0], scene.poses[1]}, cv, true);
    for (int i = 0; i < 2; ++i) views[i].volume = std::move(depth[i].volume[0]);

    PipelineSpec spec;
    spec.width = cfg.width;
    spec.levels = cfg.levels;
    spec.features = cfg.features;
    spec.hidden = cfg.hidden;
    spec.tiles = cfg.tiles;
    spec.decode.sh_degree = cfg.sh_degree;
    spec.render = make_render_config(cfg.width, cfg.width / 2, cfg.face_resolution);
    spec.target = target;
    const ParamLayout layout = make_param_layout(spec, views[0].volume.count);
    return DeferredPipeline(spec, std::move(views), scene_image(scene, target, cfg.width),
                            init_params(layout, cfg.seed));
}

struct MemoryRow {
    BackpropMode mode;
    int resolution; ///< panorama height H
    std::size_t peak_live_bytes;
};

/// Peak live bytes of each mode at each panorama height.
inline std::vector<MemoryRow> memory_report(SyntheticPipelineConfig cfg, std::span<const BackpropMode> modes,
                                            std::span<const int> heights) {
    std::vector<MemoryRow> rows;
    for (int h : heights) {
        cfg.width = 2 * h;
        const DeferredPipeline pipe = make_synthetic_pipeline(cfg);
        for (BackpropMode m : modes) rows.push_back({m, h, pipe.run(m).peak_live_bytes});
    }
    return rows;
}

inline std::string memory_report_csv(std::span<const MemoryRow> rows) {
    std::ostringstream os;
    os << "mode,resolution,peak_live_bytes\n";
    for (const MemoryRow& r : rows) os << mode_name(r.mode) << ',' << r.resolution << ',' << r.peak_live_bytes << '\n';
    return os.str();
}

} // namespace panogs
