#include "panogs/geometry.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace panogs;

namespace {

void expect_vec(const Vec3& a, const Vec3& b, double tol) {
    EXPECT_NEAR(a.x(), b.x(), tol);
    EXPECT_NEAR(a.y(), b.y(), tol);
    EXPECT_NEAR(a.z(), b.z(), tol);
}

Image random_image(int w, int h, int c, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Image img(w, h, c);
    for (double& v : img.data()) v = u(rng);
    return img;
}

double dot(const Image& a, const Image& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
    return s;
}

} // namespace

TEST(PixelToDir, CenterIsForward) { expect_vec(pixel_to_dir(511.5, 255.5, 1024, 512), {0, 0, 1}, 1e-12); }

TEST(PixelToDir, TopEdgeIsNorthPole) {
    expect_vec(pixel_to_dir(511.5, -0.5, 1024, 512), {0, 1, 0}, 1e-12);
    expect_vec(pixel_to_dir(31.5, -0.5, 64, 32), {0, 1, 0}, 1e-12);
}

TEST(PixelToDir, QuarterTurnIsRight) { expect_vec(pixel_to_dir(767.5, 255.5, 1024, 512), {1, 0, 0}, 1e-12); }

TEST(PixelToDir, WrapsColumnsAndClampsRows) {
    expect_vec(pixel_to_dir(10.25 + 64, 7.0, 64, 32), pixel_to_dir(10.25, 7.0, 64, 32), 1e-12);
    expect_vec(pixel_to_dir(3.0, -9.0, 64, 32), {0, 1, 0}, 1e-12);
    expect_vec(pixel_to_dir(3.0, 80.0, 64, 32), {0, -1, 0}, 1e-12);
}

TEST(DirToPixel, Forward) {
    const PixelCoord p = dir_to_pixel({0, 0, 1}, 1024, 512);
    EXPECT_NEAR(p.u, 511.5, 1e-12);
    EXPECT_NEAR(p.v, 255.5, 1e-12);
}

TEST(DirToPixel, SouthPole) {
    const PixelCoord p = dir_to_pixel({0, -1, 0}, 1024, 512);
    EXPECT_DOUBLE_EQ(p.u, 511.5);
    EXPECT_NEAR(p.v, 511.5, 1e-12);
}

TEST(DirToPixel, FortyFiveDegrees) {
    const double s = std::sqrt(0.5);
    const PixelCoord p = dir_to_pixel({s, 0, s}, 1024, 512);
    EXPECT_NEAR(p.u, 639.5, 1e-9);
    EXPECT_NEAR(p.v, 255.5, 1e-9);
}

TEST(DirToPixel, RoundTripRandomDirections) {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> n(0.0, 1.0);
    const double max_lat = 89.9 * kPi / 180.0;
    int checked = 0;
    while (checked < 100000) {
        const Vec3 d = Vec3(n(rng), n(rng), n(rng)).normalized();
        if (std::abs(std::asin(d.y())) > max_lat) continue;
        const PixelCoord p = dir_to_pixel(d, 1024, 512);
        ASSERT_GT(pixel_to_dir(p.u, p.v, 1024, 512).dot(d), 1.0 - 1e-10);
        ASSERT_GE(p.u, -0.5);
        ASSERT_LT(p.u, 1023.5);
        ++checked;
    }
}

TEST(DirToPixel, PixelRoundTrip) {
    for (double v : {0.0, 3.25, 100.5, 400.0, 511.0})
        for (double u : {-0.25, 0.0, 17.75, 511.5, 1023.0}) {
            const PixelCoord p = dir_to_pixel(pixel_to_dir(u, v, 1024, 512), 1024, 512);
            EXPECT_NEAR(p.u, u, 1e-6);
            EXPECT_NEAR(p.v, v, 1e-6);
        }
}

TEST(LatticeCount, KnownWidths) {
    EXPECT_EQ(lattice_count(1024), 333772);
    EXPECT_EQ(lattice_count(16), 81);
    EXPECT_EQ(lattice_count(3), 2);
    EXPECT_THROW(lattice_count(2), InvalidInput);
}

TEST(LatticeCount, TwoViewSingleLevelFraction) {
    const double total = 2.0 * lattice_count(1024);
    EXPECT_EQ(total, 667544);
    const double fraction = total / (2.0 * 512 * 1024);
    EXPECT_GE(fraction, 0.6366);
    EXPECT_LE(fraction, 0.6367);
}

TEST(PyramidCounts, DefaultPyramid) {
    EXPECT_EQ(pyramid_counts(1024, 4), (std::vector<std::int64_t>{333772, 83443, 20860, 5215}));
    EXPECT_EQ(pyramid_counts(16, 2), (std::vector<std::int64_t>{81, 20}));
}

TEST(PyramidCounts, TwoViewFullPyramidFraction) {
    std::int64_t total = 0;
    for (auto n : pyramid_counts(1024, 4)) total += 2 * n;
    EXPECT_EQ(total, 886580);
    EXPECT_NEAR(static_cast<double>(total) / (1024.0 * 1024.0), 0.8455, 5e-5);
}

TEST(PyramidCounts, RejectsIndivisibleWidth) {
    EXPECT_THROW(pyramid_counts(1000, 5), InvalidInput);
    EXPECT_THROW(pyramid_counts(64, 0), InvalidInput);
}

TEST(PyramidCounts, StrictlyDecreasingWithQuarterRatio) {
    for (int w : {64, 256, 1024, 2048, 4096}) {
        const auto counts = pyramid_counts(w, 4);
        for (std::size_t l = 1; l < counts.size(); ++l) {
            EXPECT_LT(counts[l], counts[l - 1]);
            EXPECT_GE(4 * counts[l], counts[l - 1] - 4);
            EXPECT_LE(4 * counts[l], counts[l - 1] + 4);
        }
    }
}

TEST(FibonacciLattice, Formula) {
    const FibonacciLattice lat = fibonacci_lattice(101, 2);
    ASSERT_EQ(lat.size(), 101u);
    EXPECT_EQ(lat.level, 2);
    EXPECT_EQ(lat.points[0].x, 0.0);
    EXPECT_EQ(lat.points[0].y, 0.0);
    EXPECT_NEAR(lat.points[1].x, 0.6180339887, 1e-10);
    EXPECT_NEAR(lat.points[1].y, 0.01, 1e-15);
    const double t = 100.0 / kGoldenRatio;
    EXPECT_DOUBLE_EQ(lat.points[100].x, t - std::floor(t));
    EXPECT_EQ(lat.points[100].y, 1.0);
    for (const auto& p : lat.points) {
        EXPECT_GE(p.x, 0.0);
        EXPECT_LT(p.x, 1.0);
    }
    EXPECT_THROW(fibonacci_lattice(1, 0), InvalidInput);
}

TEST(FibonacciLattice, EndpointsAreThePoles) {
    const FibonacciLattice lat = fibonacci_lattice(500, 0);
    expect_vec(lattice_direction(lat.points.front()), {0, 1, 0}, 1e-12);
    expect_vec(lattice_direction(lat.points.back()), {0, -1, 0}, 1e-12);
    const PixelCoord last = lattice_pixel(lat.points.back(), 64, 32);
    EXPECT_NEAR(last.v, 31.5, 1e-12);
}

TEST(FibonacciLattice, DirectionMatchesPixelMapping) {
    const FibonacciLattice lat = fibonacci_lattice(1000, 0);
    for (std::size_t j = 1; j + 1 < lat.size(); j += 37) {
        const PixelCoord p = lattice_pixel(lat.points[j], 256, 128);
        expect_vec(pixel_to_dir(p.u, p.v, 256, 128), lattice_direction(lat.points[j]), 1e-12);
    }
}

// Brute-force nearest neighbors on the unit sphere.
TEST(FibonacciLattice, NearestNeighborSpreadIsBounded) {
    for (std::int64_t n : {1000, 10000, 100000}) {
        const FibonacciLattice lat = fibonacci_lattice(n, 0);
        std::vector<Vec3> dirs;
        dirs.reserve(lat.size());
        for (const auto& p : lat.points) dirs.push_back(lattice_direction(p));
        std::vector<double> best(dirs.size(), -2.0);
        for (std::size_t i = 0; i < dirs.size(); ++i)
            for (std::size_t j = i + 1; j < dirs.size(); ++j) {
                const double d = dirs[i].dot(dirs[j]);
                best[i] = std::max(best[i], d);
                best[j] = std::max(best[j], d);
            }
        double lo = 1e9, hi = 0.0;
        for (double c : best) {
            const double ang = std::acos(std::clamp(c, -1.0, 1.0));
            lo = std::min(lo, ang);
            hi = std::max(hi, ang);
        }
        EXPECT_LT(hi / lo, 2.0) << "n = " << n;
    }
}

TEST(WsWeights, Values) {
    const Image w = ws_weights(1024, 512);
    EXPECT_NEAR(w.at(0, 0), 0.0030680, 5e-8);
    EXPECT_NEAR(w.at(3, 255), std::cos(kPi / 1024), 1e-15);
    EXPECT_NEAR(w.at(3, 256), std::cos(kPi / 1024), 1e-15);
    for (int v = 0; v < 512; ++v) {
        EXPECT_DOUBLE_EQ(w.at(0, v), w.at(0, 511 - v));
        EXPECT_GT(w.at(17, v), 0.0);
        EXPECT_LE(w.at(17, v), 1.0);
    }
    EXPECT_THROW(ws_weights(100, 40), InvalidInput);
}

TEST(WsWeights, SeparableSumAndMean) {
    const int h = 512, wdt = 1024;
    const Image w = ws_weights(wdt, h);
    double total = 0.0, rows = 0.0;
    for (double v : w.data()) total += v;
    for (int v = 0; v < h; ++v) rows += ws_row_weight(v, h);
    EXPECT_NEAR(total, wdt * rows, 1e-9 * total);
    EXPECT_NEAR(total / (wdt * h), 2.0 / kPi, 0.01 * 2.0 / kPi);
}

TEST(Bilinear, SampleScatterAdjoint) {
    const Image x = random_image(32, 16, 3, 1);
    const Image y = random_image(32, 16, 3, 2);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> uu(-3.0, 35.0), vv(-2.0, 18.0), gg(-1.0, 1.0);
    Image scattered(32, 16, 3);
    double lhs = 0.0;
    for (int k = 0; k < 200; ++k) {
        const double u = uu(rng), v = vv(rng);
        std::array<double, 3> s{}, g{gg(rng), gg(rng), gg(rng)};
        sample_erp(x, u, v, s);
        for (int c = 0; c < 3; ++c) lhs += s[c] * g[c];
        scatter_erp(scattered, u, v, g);
    }
    EXPECT_NEAR(lhs, dot(x, scattered), 1e-10);
    (void)y;
}

TEST(Bilinear, WrapsAcrossSeam) {
    Image img(8, 4, 1);
    img.at(7, 1) = 1.0;
    img.at(0, 1) = 3.0;
    std::array<double, 1> s{};
    sample_erp(img, 7.5, 1.0, s);
    EXPECT_DOUBLE_EQ(s[0], 2.0);
    sample_erp(img, -0.5, 1.0, s);
    EXPECT_DOUBLE_EQ(s[0], 2.0);
}

TEST(Upsample, AdjointIdentity) {
    const Image coarse = random_image(16, 8, 2, 4);
    const Image fine = random_image(32, 16, 2, 5);
    EXPECT_NEAR(dot(upsample2x(coarse), fine), dot(coarse, upsample2x_backward(fine)), 1e-10);
}

TEST(Upsample, ConstantStaysConstant) {
    const Image up = upsample2x(Image(16, 8, 1, 0.25));
    for (double v : up.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}
