#pragma once

#include "panogs/cost_volume.hpp"
#include "panogs/synth.hpp"

#include <random>

namespace panogs::testing {

/// Seeded box room with a horizontal stereo pair whose baseline lies in [0.5, 1.0] m.
inline SceneSpec box_room(unsigned seed, int width) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    SceneSpec spec;
    spec.width = width;
    spec.texture.seed = seed + 1;
    spec.half_extents = Vec3(2.2 + 1.3 * u(rng), 1.3 + 0.3 * u(rng), 2.2 + 1.3 * u(rng));
    const Vec3 center(0.5 * (u(rng) - 0.5), 0.2 * (u(rng) - 0.5), 0.5 * (u(rng) - 0.5));
    const double heading = kTwoPi * u(rng);
    const Vec3 axis(std::cos(heading), 0.0, std::sin(heading));
    const double baseline = 0.5 + 0.5 * u(rng);
    spec.poses = stereo_pair(center, axis, baseline, yaw_rotation(kTwoPi * u(rng)));
    return spec;
}

/// Cost-volume settings used for depth accuracy checks on box rooms.
inline CostVolumeConfig room_depth_config() {
    CostVolumeConfig cfg;
    cfg.d_min = 0.5;
    cfg.d_max = 10.0;
    cfg.refiner = box_aggregation_refiner(3);
    return cfg;
}

/// Pixels whose 3x3 grey-level standard deviation is at least `threshold`.
inline Image textured_mask(const Image& rgb, double threshold = 0.01) {
    Image grey(rgb.width(), rgb.height(), 1);
    for (int y = 0; y < rgb.height(); ++y)
        for (int x = 0; x < rgb.width(); ++x) grey.at(x, y) = (rgb.at(x, y, 0) + rgb.at(x, y, 1) + rgb.at(x, y, 2)) / 3.0;
    const Image stats = local_stats_features(grey);
    Image mask(rgb.width(), rgb.height(), 1);
    for (int y = 0; y < rgb.height(); ++y)
        for (int x = 0; x < rgb.width(); ++x) mask.at(x, y) = stats.at(x, y, 2) >= threshold ? 1.0 : 0.0;
    return mask;
}

/// Mean |d - gt| / gt over pixels where `mask` is set.
inline double mean_abs_rel(const Image& depth, const Image& gt, const Image& mask) {
    double sum = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < depth.size(); ++i)
        if (mask.data()[i] > 0.0) {
            sum += std::abs(depth.data()[i] - gt.data()[i]) / gt.data()[i];
            ++n;
        }
    return n ? sum / n : 0.0;
}

struct RoomDepthErrors {
    double coarse = 0.0;  ///< level 3
    double fine = 0.0;    ///< level 1
    double textured = 0.0; ///< fraction of level-1 pixels counted
};

/// Hierarchical depth of view 0 of `box_room(seed, 1024)` against ground truth.
inline RoomDepthErrors room_depth_errors(unsigned seed) {
    const SceneSpec spec = box_room(seed, 1024);
    const SceneViews views = synth_scene(spec);
    const auto depth = hierarchical_depth({views.images[0], views.images[1]}, {spec.poses[0], spec.poses[1]},
                                          room_depth_config());
    RoomDepthErrors e;
    for (int l : {3, 1}) {
        const Image gt = scene_depth(spec, spec.poses[0], spec.width >> l);
        const Image mask = textured_mask(downsample_box(views.images[0], 1 << l));
        const double err = mean_abs_rel(depth[0].depth[l - 1], gt, mask);
        (l == 3 ? e.coarse : e.fine) = err;
        if (l == 1) {
            double n = 0;
            for (double m : mask.data()) n += m;
            e.textured = n / mask.size();
        }
    }
    return e;
}

} // namespace panogs::testing
