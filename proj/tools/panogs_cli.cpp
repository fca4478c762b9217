// panogs_cli: command-line front end of the panogs library.
//
// Exit codes: 0 success, 2 bad input, 3 verification failure, 4 I/O error.

#include "panogs/panogs.hpp"
#include "panogs/io/config.hpp"
#include "panogs/io/pfm.hpp"
#include "panogs/io/png.hpp"
#include "panogs/io/poses.hpp"
#include "panogs/io/psgp.hpp"
#include "panogs/io/scene.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

using namespace panogs;
namespace fs = std::filesystem;

namespace {

constexpr int kExitBadInput = 2;
constexpr int kExitVerification = 3;
constexpr int kExitIo = 4;

Image read_image(const std::string& path) {
    if (fs::path(path).extension() == ".pfm") return io::read_pfm(path);
    return io::read_png(path);
}

void write_image(const std::string& path, const Image& img, int bits) {
    if (fs::path(path).extension() == ".pfm")
        io::write_pfm(path, img);
    else
        io::write_png(path, img, bits);
}

void write_text(const std::string& path, const std::string& text) { io::write_file(path, text); }

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

// ---------------------------------------------------------------------------

struct LatticeArgs {
    int width = 0;
    int levels = 1;
    std::string out;
};

int run_lattice(const LatticeArgs& a) {
    const auto counts = pyramid_counts(a.width, a.levels);
    std::int64_t total = 0;
    for (int l = 0; l < a.levels; ++l) {
        std::printf("level %d: width %d, n = %lld\n", l, a.width >> l, static_cast<long long>(counts[l]));
        total += counts[l];
    }
    if (a.levels > 1) std::printf("total: n = %lld\n", static_cast<long long>(total));
    if (!a.out.empty()) {
        std::string csv = "level,index,x,y,dir_x,dir_y,dir_z\n";
        char line[256];
        for (const FibonacciLattice& lat : pyramid_lattices(a.width, a.levels))
            for (std::size_t j = 0; j < lat.size(); ++j) {
                const Vec3 d = lattice_direction(lat.points[j]);
                std::snprintf(line, sizeof line, "%d,%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", lat.level, j,
                              lat.points[j].x, lat.points[j].y, d.x(), d.y(), d.z());
                csv += line;
            }
        write_text(a.out, csv);
    }
    return 0;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string spec;
    std::string out;
    int width = 0;
    int bits = 8;
};

int run_synth(const SynthArgs& a) {
    SceneSpec spec = io::read_scene(a.spec);
    if (a.width > 0) spec.width = a.width;
    const SceneViews views = synth_scene(spec);
    ensure_dir(a.out);
    for (std::size_t i = 0; i < views.images.size(); ++i) {
        const std::string id = std::to_string(i);
        io::write_png((fs::path(a.out) / ("view" + id + ".png")).string(), views.images[i], a.bits);
        io::write_pfm((fs::path(a.out) / ("depth" + id + ".pfm")).string(), views.depths[i]);
    }
    io::write_poses((fs::path(a.out) / "poses.json").string(), spec.poses);
    write_text((fs::path(a.out) / "scene.json").string(), io::scene_to_json(spec).dump(2) + "\n");
    std::printf("wrote %zu views of %dx%d to %s\n", views.images.size(), spec.width, spec.width / 2, a.out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------

struct DepthOptions {
    double d_min = 0.5;
    double d_max = 10.0;
    int candidates = 128;
    int coarsest = 3;
    int refine_radius = 3;

    CostVolumeConfig config() const {
        CostVolumeConfig c;
        c.d_min = d_min;
        c.d_max = d_max;
        c.candidates = candidates;
        c.coarsest = coarsest;
        if (refine_radius > 0) c.refiner = box_aggregation_refiner(refine_radius);
        return c;
    }

    void add_to(CLI::App* cmd) {
        cmd->add_option("--d-min", d_min, "Nearest depth hypothesis (m)")->capture_default_str();
        cmd->add_option("--d-max", d_max, "Farthest depth hypothesis (m)")->capture_default_str();
        cmd->add_option("--candidates", candidates, "Depth candidates at the coarsest level")->capture_default_str();
        cmd->add_option("--coarsest", coarsest, "Coarsest pyramid level of the sweep")->capture_default_str();
        cmd->add_option("--refine-radius", refine_radius, "Cost aggregation radius, 0 to disable")
            ->capture_default_str();
    }
};

std::array<CameraPose, 2> pair_poses(const std::string& path) {
    const auto poses = io::read_poses(path);
    require(poses.size() >= 2, path + ": at least two poses are required");
    return {poses[0], poses[1]};
}

struct DepthArgs {
    std::string left, right, poses, out, out_right;
    DepthOptions depth;
};

int run_depth(const DepthArgs& a) {
    const std::array<Image, 2> images{read_image(a.left), read_image(a.right)};
    const auto depth = hierarchical_depth(images, pair_poses(a.poses), a.depth.config());
    if (depth[0].degenerate) std::fprintf(stderr, "warning: zero baseline, depth is not observable\n");
    io::write_pfm(a.out, depth[0].depth.front());
    if (!a.out_right.empty()) io::write_pfm(a.out_right, depth[1].depth.front());
    std::printf("depth %dx%d (level 1) written to %s\n", depth[0].depth.front().width(),
                depth[0].depth.front().height(), a.out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------

struct RenderArgs {
    std::string gaussians, pose, out;
    int width = 0;
    int face_res = 0;
    bool sequential = false;
    int bits = 8;
};

int run_render(const RenderArgs& a) {
    const auto pyramids = io::read_psgp(a.gaussians);
    const CameraPose pose = io::read_poses(a.pose).front();
    const int width = a.width > 0 ? a.width : pyramids.front().width;
    const RenderConfig cfg = make_render_config(width, width / 2, a.face_res,
                                                a.sequential ? FaceMode::Sequential : FaceMode::Batched);
    const GaussianSet set = consolidate(pyramids);
    write_image(a.out, render_pano(set, pose, cfg).rgb(), a.bits);
    std::printf("rendered %zu Gaussians at %dx%d (faces %d px) to %s\n", set.size(), cfg.width, cfg.height,
                cfg.face_resolution, a.out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------

struct PipelineArgs {
    std::string pair, out, target, gaussians_out;
    bool blend = false;
    int levels = 2;
    int features = 4;
    int hidden = 8;
    int tiles = 1;
    int sh_degree = 0;
    int face_res = 0;
    std::uint64_t seed = 1;
    int bits = 8;
    DepthOptions depth{0.5, 10.0, 32, 2, 3};
};

int run_pipeline(const PipelineArgs& a) {
    const fs::path dir(a.pair);
    const std::array<Image, 2> images{io::read_png((dir / "view0.png").string()),
                                      io::read_png((dir / "view1.png").string())};
    const auto poses = pair_poses((dir / "poses.json").string());
    CameraPose target = make_pose(0.5 * (poses[0].position + poses[1].position), poses[0].rotation);
    if (!a.target.empty()) target = io::read_poses(a.target).front();

    auto depth = hierarchical_depth(images, poses, a.depth.config(), true);
    std::vector<ViewInput> views(2);
    for (int i = 0; i < 2; ++i) views[i] = {poses[i], images[i], std::move(depth[i].volume.front())};

    PipelineSpec spec;
    spec.width = images[0].width();
    spec.levels = a.levels;
    spec.features = a.features;
    spec.hidden = a.hidden;
    spec.tiles = a.tiles;
    spec.decode.sh_degree = a.sh_degree;
    spec.render = make_render_config(spec.width, spec.width / 2, a.face_res, FaceMode::Sequential);
    spec.target = target;
    const ParamLayout layout = make_param_layout(spec, views[0].volume.count);
    const DeferredPipeline pipe(spec, std::move(views), Image(spec.width, spec.width / 2, 3),
                                init_params(layout, a.seed));

    const GaussianSet set = pipe.gaussians();
    const std::vector<CameraPose> pose_list{poses[0], poses[1]};
    if (!a.gaussians_out.empty())
        io::write_psgp(a.gaussians_out, io::split_pyramids(set, spec.width, spec.levels, pose_list));

    Image out;
    if (a.blend) {
        const auto pyramids = io::split_pyramids(set, spec.width, spec.levels, pose_list);
        std::array<Image, 2> renders;
        for (int i = 0; i < 2; ++i)
            renders[i] = render_pano(consolidate(std::span(&pyramids[i], 1)), target, spec.render).rgb();
        out = deferred_blend(renders[0], renders[1], (poses[0].position - target.position).norm(),
                             (poses[1].position - target.position).norm());
    } else {
        out = render_pano(set, target, spec.render).rgb();
    }
    write_image(a.out, out, a.bits);
    std::printf("%zu Gaussians, %zu head parameters, %s render written to %s\n", set.size(), layout.size(),
                a.blend ? "blended" : "joint", a.out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------

struct MetricsArgs {
    std::string a, b, out;
};

int run_metrics(const MetricsArgs& m) {
    const Image a = read_image(m.a);
    const Image b = read_image(m.b);
    const double p = psnr(a, b), w = ws_psnr(a, b);
    nlohmann::json j;
    j["psnr"] = std::isinf(p) ? nlohmann::json(format_db(p)) : nlohmann::json(p);
    j["ws_psnr"] = std::isinf(w) ? nlohmann::json(format_db(w)) : nlohmann::json(w);
    j["ssim"] = ssim(a, b);
    const std::string text = j.dump(2) + "\n";
    std::fputs(text.c_str(), stdout);
    if (!m.out.empty()) write_text(m.out, text);
    return 0;
}

// ---------------------------------------------------------------------------

struct TileVerifyArgs {
    int width = 256;
    int tiles = 4;
    std::uint64_t seed = 1;
    int channels = 3;
    int hidden = 8;
};

int run_tile_verify(const TileVerifyArgs& a) {
    require(a.width > 0 && a.width % 2 == 0, "tile-verify: width must be a positive even number");
    std::mt19937_64 rng(a.seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Image img(a.width, a.width / 2, a.channels);
    for (double& v : img.data()) v = u(rng);
    const ToyHeadShape shape{a.channels, a.hidden, a.channels};
    const LocalOperator head = toy_head(shape, toy_head_theta(shape, a.seed));
    const Image whole = run_untiled(head, img);
    const Image tiled = run_tiled(head, img, a.tiles);
    std::size_t differing = 0;
    for (std::size_t i = 0; i < whole.size(); ++i) differing += whole.data()[i] != tiled.data()[i];
    std::printf("%dx%d, %d tiles per side, radius %d: %zu of %zu outputs differ\n", img.width(), img.height(), a.tiles,
                head.radius, differing, whole.size());
    if (differing != 0) throw VerificationError("tiled output differs from the untiled output");
    return 0;
}

// ---------------------------------------------------------------------------

struct GradVerifyArgs {
    std::uint64_t seed = 1;
    int width = 32;
    double tol = 1e-6;
    double fd_tol = 1e-3;
    double fd_fraction = 0.99;
    bool skip_fd = false;
};

int run_grad_verify(const GradVerifyArgs& a) {
    SyntheticPipelineConfig cfg = small_pipeline_config(a.seed);
    cfg.width = a.width;
    cfg.geometry_width = a.width;
    const DeferredPipeline pipe = make_synthetic_pipeline(cfg);
    const GradientLedger mono = pipe.run(BackpropMode::Monolithic);
    std::printf("%zu Gaussians, %zu parameters, loss %.17g\n", pipe.gaussian_count(), pipe.theta().size(), mono.loss);
    bool ok = true;
    for (BackpropMode m : {BackpropMode::OneStep, BackpropMode::TwoStep}) {
        const GradientLedger g = pipe.run(m);
        const double eg = max_relative_error(flatten(mono.grads_gaussians), flatten(g.grads_gaussians));
        const double et = max_relative_error(mono.grads_theta, g.grads_theta);
        const bool pass = eg <= a.tol && et <= a.tol;
        std::printf("%s vs monolithic: Gaussian grads %.3g, parameter grads %.3g: %s\n", mode_name(m).c_str(), eg, et,
                    pass ? "ok" : "FAIL");
        ok = ok && pass;
    }
    if (!a.skip_fd) {
        const FiniteDifferenceReport r = finite_difference_check(pipe, mono.grads_theta, 1e-5, a.fd_tol);
        const bool pass = r.fraction() >= a.fd_fraction;
        std::printf("finite differences: %zu of %zu parameters within %.3g (%zu at a smaller step): %s\n", r.passed,
                    r.checked, a.fd_tol, r.refined, pass ? "ok" : "FAIL");
        ok = ok && pass;
    }
    if (!ok) throw VerificationError("gradient verification failed");
    return 0;
}

// ---------------------------------------------------------------------------

struct BenchMemArgs {
    std::vector<int> heights{256, 512};
    std::vector<std::string> modes{"monolithic", "one-step", "two-step"};
    int tiles = 4;
    int levels = 2;
    int geometry_width = 64;
    int candidates = 16;
    std::uint64_t seed = 1;
    std::string out;
    bool check = false;
};

BackpropMode parse_mode(const std::string& name) {
    for (BackpropMode m : {BackpropMode::Monolithic, BackpropMode::OneStep, BackpropMode::TwoStep})
        if (mode_name(m) == name) return m;
    throw InvalidInput("unknown backprop mode \"" + name + "\"");
}

int run_bench_mem(const BenchMemArgs& a) {
    std::vector<BackpropMode> modes;
    for (const auto& n : a.modes) modes.push_back(parse_mode(n));
    SyntheticPipelineConfig cfg;
    cfg.tiles = a.tiles;
    cfg.levels = a.levels;
    cfg.geometry_width = a.geometry_width;
    cfg.candidates = a.candidates;
    cfg.seed = a.seed;
    const auto rows = memory_report(cfg, modes, a.heights);
    const std::string csv = memory_report_csv(rows);
    std::fputs(csv.c_str(), stdout);
    if (!a.out.empty()) write_text(a.out, csv);
    if (a.check) {
        for (int h : a.heights) {
            std::array<std::size_t, 3> peak{};
            std::array<bool, 3> seen{};
            for (const MemoryRow& r : rows)
                if (r.resolution == h) {
                    peak[static_cast<int>(r.mode)] = r.peak_live_bytes;
                    seen[static_cast<int>(r.mode)] = true;
                }
            require(seen[0] && seen[1] && seen[2], "bench-mem --check needs all three modes");
            if (!(peak[2] < peak[1] && peak[1] < peak[0]))
                throw VerificationError("memory ordering two-step < one-step < monolithic violated at H = " +
                                        std::to_string(h));
        }
        std::printf("ordering two-step < one-step < monolithic holds\n");
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Panoramic 3D Gaussian pyramids: lattices, depth, rendering and deferred backpropagation"};
    app.require_subcommand(1);
    int result = 0;
    std::function<int()> action;

    LatticeArgs lattice;
    auto* c = app.add_subcommand("lattice", "Fibonacci lattice counts and points");
    c->add_option("--width", lattice.width, "Panorama width W")->required();
    c->add_option("--levels", lattice.levels, "Pyramid levels")->capture_default_str();
    c->add_option("--out", lattice.out, "CSV of lattice points");
    c->callback([&] { action = [&] { return run_lattice(lattice); }; });

    SynthArgs synth;
    c = app.add_subcommand("synth", "Render a synthetic box room with ground-truth depth");
    c->add_option("--spec", synth.spec, "Scene JSON")->required();
    c->add_option("--out", synth.out, "Output directory")->required();
    c->add_option("--width", synth.width, "Override the panorama width");
    c->add_option("--bits", synth.bits, "PNG bit depth (8 or 16)")->capture_default_str();
    c->callback([&] { action = [&] { return run_synth(synth); }; });

    DepthArgs depth;
    c = app.add_subcommand("depth", "Hierarchical cost-volume depth of a panorama pair");
    c->add_option("--left", depth.left, "Reference panorama")->required();
    c->add_option("--right", depth.right, "Source panorama")->required();
    c->add_option("--poses", depth.poses, "Poses JSON (first two entries)")->required();
    c->add_option("--out", depth.out, "Depth of the left view (PFM, half resolution)")->required();
    c->add_option("--out-right", depth.out_right, "Depth of the right view");
    depth.depth.add_to(c);
    c->callback([&] { action = [&] { return run_depth(depth); }; });

    RenderArgs render;
    c = app.add_subcommand("render", "Render a PSGP Gaussian file as a panorama");
    c->add_option("--gaussians", render.gaussians, "PSGP file")->required();
    c->add_option("--pose", render.pose, "Pose JSON (first entry)")->required();
    c->add_option("--out", render.out, "Output PNG or PFM")->required();
    c->add_option("--width", render.width, "Panorama width (default: the file's W)");
    c->add_option("--face-res", render.face_res, "Cubemap face resolution (default: H)");
    c->add_flag("--sequential", render.sequential, "Render one face at a time");
    c->add_option("--bits", render.bits, "PNG bit depth (8 or 16)")->capture_default_str();
    c->callback([&] { action = [&] { return run_render(render); }; });

    PipelineArgs pipeline;
    c = app.add_subcommand("pipeline", "Depth, Gaussian heads, pyramid and render for a panorama pair");
    c->add_option("--pair", pipeline.pair, "Directory with view0.png, view1.png and poses.json")->required();
    c->add_option("--out", pipeline.out, "Output PNG or PFM")->required();
    c->add_option("--target", pipeline.target, "Target pose JSON (default: midpoint of the pair)");
    c->add_option("--gaussians-out", pipeline.gaussians_out, "Also write the Gaussians as PSGP");
    c->add_flag("--blend", pipeline.blend, "Render each view separately and blend by distance");
    c->add_option("--levels", pipeline.levels, "Pyramid levels")->capture_default_str();
    c->add_option("--features", pipeline.features, "Head output channels")->capture_default_str();
    c->add_option("--hidden", pipeline.hidden, "Head hidden channels")->capture_default_str();
    c->add_option("--tiles", pipeline.tiles, "Tiles per side for the heads")->capture_default_str();
    c->add_option("--sh-degree", pipeline.sh_degree, "SH degree (0 or 1)")->capture_default_str();
    c->add_option("--face-res", pipeline.face_res, "Cubemap face resolution (default: H)");
    c->add_option("--seed", pipeline.seed, "Parameter initialization seed")->capture_default_str();
    c->add_option("--bits", pipeline.bits, "PNG bit depth (8 or 16)")->capture_default_str();
    pipeline.depth.add_to(c);
    c->callback([&] { action = [&] { return run_pipeline(pipeline); }; });

    MetricsArgs metrics;
    c = app.add_subcommand("metrics", "PSNR, WS-PSNR and SSIM between two images");
    c->add_option("--a", metrics.a, "First image (PNG or PFM)")->required();
    c->add_option("--b", metrics.b, "Second image (PNG or PFM)")->required();
    c->add_option("--out", metrics.out, "Also write the JSON here");
    c->callback([&] { action = [&] { return run_metrics(metrics); }; });

    TileVerifyArgs tile;
    c = app.add_subcommand("tile-verify", "Check tiled head execution against the untiled run");
    c->add_option("--width", tile.width, "Panorama width")->capture_default_str();
    c->add_option("--tiles", tile.tiles, "Tiles per side")->capture_default_str();
    c->add_option("--seed", tile.seed, "Random seed")->capture_default_str();
    c->add_option("--channels", tile.channels, "Image channels")->capture_default_str();
    c->add_option("--hidden", tile.hidden, "Head hidden channels")->capture_default_str();
    c->callback([&] { action = [&] { return run_tile_verify(tile); }; });

    GradVerifyArgs grad;
    c = app.add_subcommand("grad-verify", "Check deferred gradients against the monolithic adjoint and finite differences");
    c->add_option("--seed", grad.seed, "Pipeline seed")->capture_default_str();
    c->add_option("--width", grad.width, "Head resolution W")->capture_default_str();
    c->add_option("--tol", grad.tol, "Max relative error between modes")->capture_default_str();
    c->add_option("--fd-tol", grad.fd_tol, "Relative finite-difference tolerance")->capture_default_str();
    c->add_option("--fd-fraction", grad.fd_fraction, "Required passing fraction")->capture_default_str();
    c->add_flag("--skip-fd", grad.skip_fd, "Skip the finite-difference check");
    c->callback([&] { action = [&] { return run_grad_verify(grad); }; });

    BenchMemArgs bench;
    c = app.add_subcommand("bench-mem", "Peak live bytes of each backprop mode");
    c->add_option("--heights", bench.heights, "Panorama heights H")->capture_default_str();
    c->add_option("--modes", bench.modes, "monolithic, one-step, two-step")->capture_default_str();
    c->add_option("--tiles", bench.tiles, "Tiles per side")->capture_default_str();
    c->add_option("--levels", bench.levels, "Pyramid levels")->capture_default_str();
    c->add_option("--geometry-width", bench.geometry_width, "Cost-volume input width")->capture_default_str();
    c->add_option("--candidates", bench.candidates, "Depth candidates")->capture_default_str();
    c->add_option("--seed", bench.seed, "Scene and parameter seed")->capture_default_str();
    c->add_option("--out", bench.out, "CSV output");
    c->add_flag("--check", bench.check, "Fail unless two-step < one-step < monolithic");
    c->callback([&] { action = [&] { return run_bench_mem(bench); }; });

    io::add_config_option(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::FileError& e) {
        app.exit(e);
        return kExitIo;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitBadInput;
    }

    try {
        result = action();
    } catch (const InvalidInput& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitBadInput;
    } catch (const VerificationError& e) {
        std::fprintf(stderr, "verification failed: %s\n", e.what());
        return kExitVerification;
    } catch (const IoError& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return kExitIo;
    }
    return result;
}
