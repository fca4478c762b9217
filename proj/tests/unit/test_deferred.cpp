#include "panogs/deferred.hpp"
#include "panogs/verify.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace panogs;

namespace {

SyntheticPipelineConfig config(int width, int tiles, std::uint64_t seed = 3) {
    SyntheticPipelineConfig c;
    c.width = width;
    c.tiles = tiles;
    c.seed = seed;
    return c;
}

std::size_t peak_of(const std::function<void()>& fn) {
    auto counter = std::make_shared<MemoryCounter>();
    {
        MemoryScope scope(counter);
        fn();
    }
    EXPECT_EQ(counter->current(), 0u);
    return counter->peak();
}

} // namespace

TEST(ForwardNograd, ZeroOpacityRendersBlack) {
    const DeferredPipeline p = make_synthetic_pipeline(config(64, 2));
    std::vector<double> theta(p.theta().begin(), p.theta().end());
    const ParamLayout& lay = p.layout();
    for (int l = 0; l < lay.levels; ++l) {
        for (int c = 0; c < lay.features; ++c)
            theta[lay.weight_offset(l) + static_cast<std::size_t>(lay.raw.opacity()) * lay.features + c] = 0.0;
        theta[lay.bias_offset(l) + lay.raw.opacity()] = -1000.0;
    }
    const Image img = p.with_theta(theta).forward_nograd().image;
    for (double v : img.data()) ASSERT_EQ(v, 0.0);
}

TEST(ForwardNograd, MatchesTapedForwardBitExactly) {
    for (int tiles : {1, 2, 4}) {
        const DeferredPipeline p = make_synthetic_pipeline(config(128, tiles, 5));
        const ForwardResult a = p.forward_nograd();
        const auto t = p.forward_tape();
        EXPECT_EQ(a.image, t.render.rgb());
        ASSERT_EQ(a.gaussians.size(), t.gaussians.size());
        for (std::size_t i = 0; i < a.gaussians.size(); ++i) {
            ASSERT_EQ(a.gaussians.items[i].mean, t.gaussians.items[i].mean);
            ASSERT_EQ(a.gaussians.items[i].scale, t.gaussians.items[i].scale);
            ASSERT_EQ(a.gaussians.items[i].sh, t.gaussians.items[i].sh);
        }
        EXPECT_EQ(p.forward_nograd().image, a.image);
    }
}

TEST(ForwardNograd, UsesLessMemoryThanTapedForward) {
    const DeferredPipeline p = make_synthetic_pipeline(config(256, 2));
    const std::size_t nograd = peak_of([&] { p.forward_nograd(); });
    const std::size_t taped = peak_of([&] { p.forward_tape(); });
    EXPECT_LT(nograd, taped);
}

TEST(CacheImageGrad, ZeroWhenRenderMatchesTarget) {
    const Image a(16, 8, 3, 0.3);
    for (const Image g = cache_image_grad(a, a); double v : g.data()) EXPECT_EQ(v, 0.0);
}

TEST(CacheImageGrad, ConstantImageAgainstBlack) {
    const Image r(16, 8, 3, 0.25), t(16, 8, 3, 0.0);
    for (const Image g = cache_image_grad(r, t); double v : g.data()) EXPECT_NEAR(v, 2 * 0.25 / (16 * 8 * 3), 1e-15);
}

TEST(CacheImageGrad, MatchesFiniteDifferences) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image r(32, 16, 3), t(32, 16, 3);
    for (double& v : r.data()) v = u(rng);
    for (double& v : t.data()) v = u(rng);
    const Image g = cache_image_grad(r, t);
    std::uniform_int_distribution<std::size_t> pick(0, r.size() - 1);
    for (int k = 0; k < 50; ++k) {
        const std::size_t i = pick(rng);
        Image p = r, m = r;
        p.data()[i] += 1e-5;
        m.data()[i] -= 1e-5;
        const double fd = (mse(p, t) - mse(m, t)) / 2e-5;
        EXPECT_NEAR(fd, g.data()[i], 1e-6 * std::abs(g.data()[i]) + 1e-12);
    }
}

TEST(CacheImageGrad, RejectsMismatchAndPerceptualHook) {
    EXPECT_THROW(cache_image_grad(Image(8, 4, 3), Image(8, 4, 1)), InvalidInput);
    LossConfig cfg;
    cfg.perceptual = [](const Image&, const Image&) { return 0.0; };
    EXPECT_THROW(cache_image_grad(Image(8, 4, 3), Image(8, 4, 3), cfg), InvalidInput);
}

TEST(Step1Faces, ZeroCacheGivesZeroGrads) {
    const DeferredPipeline p = make_synthetic_pipeline(config(64, 1));
    const GaussianSet set = p.gaussians();
    const auto g = p.step1_faces(set, Image(64, 32, 3));
    for (double v : flatten(g)) ASSERT_EQ(v, 0.0);
    EXPECT_THROW(p.step1_faces(set, Image()), InvalidInput);
}

TEST(Step1Faces, MatchesAllFacesAdjoint) {
    const DeferredPipeline p = make_synthetic_pipeline(config(128, 2, 8));
    const GaussianSet set = p.gaussians();
    const RenderResult r = render_pano(set, p.spec().target, p.spec().render, true);
    const Image cache = cache_image_grad(r.rgb(), p.target());
    const auto a = flatten(render_backward(*r.tape, set, cache));
    const auto b = flatten(p.step1_faces(set, cache));
    EXPECT_LE(max_relative_error(a, b), 1e-6);
}

TEST(Step1Faces, SingleGaussianMatchesMonolithic) {
    GaussianSet set;
    Gaussian g;
    g.mean = Vec3(0.3, 0.2, 1.5);
    g.opacity = 0.7;
    g.scale = Vec3(0.2, 0.1, 0.15);
    g.rotation = Vec4(0.9, 0.1, 0.3, 0.2).normalized();
    g.sh[0] = 0.4;
    g.sh[1] = -0.2;
    g.sh[2] = 0.1;
    set.items.push_back(g);
    const CameraPose pose = make_pose(Vec3::Zero(), Quat::Identity());
    const RenderConfig cfg = make_render_config(128, 64);
    const RenderResult r = render_pano(set, pose, cfg, true);
    const Image cache = cache_image_grad(r.rgb(), Image(128, 64, 3, 0.5));
    const auto a = flatten(render_backward(*r.tape, set, cache));
    const auto b = flatten(step1_faces(set, pose, cfg, cache));
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-7);
}

TEST(Step1Faces, HalvesPeakMemoryAt512) {
    const DeferredPipeline p = make_synthetic_pipeline(config(512, 4));
    GradientLedger mono = p.run(BackpropMode::Monolithic);
    GradientLedger two = p.run(BackpropMode::TwoStep);
    EXPECT_LE(two.render_stage.peak, mono.render_stage.peak / 2);
}

TEST(Step2Tiles, ZeroGradsGiveZeroThetaGrads) {
    const DeferredPipeline p = make_synthetic_pipeline(config(64, 2));
    const tracked_vector<Gaussian> zero(p.gaussian_count(), Gaussian::zero());
    for (double v : p.step2_tiles(zero)) ASSERT_EQ(v, 0.0);
    EXPECT_THROW(p.step2_tiles(std::span<const Gaussian>(zero).subspan(1)), InvalidInput);
}

TEST(Step2Tiles, MatchesMonolithicHeadAdjoint) {
    for (int tiles : {1, 4}) {
        const DeferredPipeline p = make_synthetic_pipeline(config(256, tiles, 11));
        const GradientLedger mono = p.run(BackpropMode::Monolithic);
        EXPECT_LE(max_relative_error(mono.grads_theta, p.step2_tiles(mono.grads_gaussians)), 1e-6) << tiles;
    }
}

TEST(Step2Tiles, HeadStageScalesWithTileArea) {
    std::vector<double> peak;
    for (int tiles : {1, 2, 4})
        peak.push_back(static_cast<double>(make_synthetic_pipeline(config(256, tiles)).run(BackpropMode::TwoStep).head_stage.growth()));
    // a / N^2 + b through N = 1 and 2, checked at N = 4.
    const double a = (peak[0] - peak[1]) / 0.75, b = peak[0] - a;
    EXPECT_GT(a, 0.0);
    EXPECT_GE(b, 0.0);
    EXPECT_NEAR(peak[2], a / 16 + b, 0.15 * (a / 16 + b));
}

TEST(Monolithic, MatchesFiniteDifferences) {
    const DeferredPipeline p = make_synthetic_pipeline(small_pipeline_config(2));
    const GradientLedger g = p.monolithic_grads();
    const FiniteDifferenceReport r = finite_difference_check(p, g.grads_theta);
    EXPECT_GE(r.fraction(), 0.99) << r.passed << " of " << r.checked;
}

TEST(Monolithic, FiniteDifferencesRejectWrongGradients) {
    const DeferredPipeline p = make_synthetic_pipeline(small_pipeline_config(5));
    std::vector<double> g = p.monolithic_grads().grads_theta;
    for (double& v : g) v *= 1.01;
    EXPECT_LT(finite_difference_check(p, g).fraction(), 0.5);
}

TEST(Monolithic, FiniteDifferencesStepOverLossJumps) {
    for (std::uint64_t seed : {5, 9}) {
        const DeferredPipeline p = make_synthetic_pipeline(small_pipeline_config(seed));
        const FiniteDifferenceReport r = finite_difference_check(p, p.monolithic_grads().grads_theta);
        EXPECT_GE(r.fraction(), 0.99) << r.passed << " of " << r.checked;
        EXPECT_GT(r.refined, 0u) << "seed " << seed;
    }
}

TEST(Monolithic, ZeroLossGivesZeroGrads) {
    const DeferredPipeline base = make_synthetic_pipeline(config(64, 1));
    const DeferredPipeline p(base.spec(), {base.views().begin(), base.views().end()}, base.forward_nograd().image,
                             {base.theta().begin(), base.theta().end()});
    const GradientLedger g = p.monolithic_grads();
    EXPECT_EQ(g.loss, 0.0);
    for (double v : g.grads_theta) ASSERT_EQ(v, 0.0);
}

TEST(Composition, DeferredModesMatchMonolithic) {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
        const DeferredPipeline p = make_synthetic_pipeline(small_pipeline_config(seed));
        const GradientLedger mono = p.run(BackpropMode::Monolithic);
        for (BackpropMode m : {BackpropMode::OneStep, BackpropMode::TwoStep}) {
            const GradientLedger g = p.run(m);
            EXPECT_EQ(g.loss, mono.loss);
            EXPECT_LE(max_relative_error(flatten(mono.grads_gaussians), flatten(g.grads_gaussians)), 1e-6);
            EXPECT_LE(max_relative_error(mono.grads_theta, g.grads_theta), 1e-6) << mode_name(m) << " seed " << seed;
        }
    }
}

TEST(Memory, ModeOrdering) {
    for (int width : {128, 256}) {
        const DeferredPipeline p = make_synthetic_pipeline(config(width, 4));
        const std::size_t mono = p.run(BackpropMode::Monolithic).peak_live_bytes;
        const std::size_t one = p.run(BackpropMode::OneStep).peak_live_bytes;
        const std::size_t two = p.run(BackpropMode::TwoStep).peak_live_bytes;
        EXPECT_LT(two, one) << width;
        EXPECT_LT(one, mono) << width;
    }
}

TEST(Memory, DeferredModesCoincideOnOneFaceOneTile) {
    const DeferredPipeline base = make_synthetic_pipeline(config(128, 1));
    PipelineSpec spec = base.spec();
    spec.render.active_faces = {false, false, true, false, false, false};
    const DeferredPipeline p(spec, {base.views().begin(), base.views().end()}, base.target(),
                             {base.theta().begin(), base.theta().end()});
    EXPECT_EQ(p.run(BackpropMode::OneStep).peak_live_bytes, p.run(BackpropMode::TwoStep).peak_live_bytes);
}

TEST(Memory, CounterReturnsToZero) {
    const DeferredPipeline p = make_synthetic_pipeline(config(64, 2));
    for (BackpropMode m : {BackpropMode::Monolithic, BackpropMode::OneStep, BackpropMode::TwoStep}) {
        GradientLedger g = p.run(m);
        EXPECT_GE(g.peak_live_bytes, g.current_live_bytes);
        EXPECT_EQ(g.counter->current(), g.current_live_bytes);
        EXPECT_EQ(g.current_live_bytes, g.grads_gaussians.capacity() * sizeof(Gaussian) +
                                            g.grad_image_cache.size() * sizeof(double));
        g.release();
        EXPECT_EQ(g.counter->current(), 0u) << mode_name(m);
    }
}

TEST(Memory, ReportCsv) {
    SyntheticPipelineConfig c = config(64, 2);
    const std::vector<BackpropMode> modes{BackpropMode::Monolithic, BackpropMode::TwoStep};
    const std::vector<int> heights{32, 64};
    const auto rows = memory_report(c, modes, heights);
    ASSERT_EQ(rows.size(), 4u);
    const std::string csv = memory_report_csv(rows);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "mode,resolution,peak_live_bytes");
    EXPECT_NE(csv.find("two-step,64,"), std::string::npos);
    EXPECT_GT(rows[3].peak_live_bytes, rows[1].peak_live_bytes);
}

TEST(Spec, RejectsInconsistentInputs) {
    const DeferredPipeline p = make_synthetic_pipeline(config(64, 1));
    PipelineSpec spec = p.spec();
    const std::vector<ViewInput> views(p.views().begin(), p.views().end());
    const std::vector<double> theta(p.theta().begin(), p.theta().end());
    EXPECT_THROW(DeferredPipeline(spec, views, p.target(), std::vector<double>(3)), InvalidInput);
    EXPECT_THROW(DeferredPipeline(spec, views, Image(8, 4, 3), theta), InvalidInput);
    spec.tiles = 8;
    EXPECT_THROW(DeferredPipeline(spec, views, p.target(), theta), InvalidInput);
    spec.tiles = 1;
    spec.levels = 6;
    EXPECT_THROW(DeferredPipeline(spec, views, p.target(), theta), InvalidInput);
    EXPECT_THROW(p.with_theta(std::vector<double>(3)), InvalidInput);
}
