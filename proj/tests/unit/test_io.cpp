#include "panogs/io/config.hpp"
#include "panogs/io/pfm.hpp"
#include "panogs/io/png.hpp"
#include "panogs/io/poses.hpp"
#include "panogs/io/psgp.hpp"
#include "panogs/io/scene.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

using namespace panogs;
using namespace panogs::io;

namespace {

class TempDir {
public:
    TempDir() {
        path_ = std::filesystem::temp_directory_path() /
                ("panogs_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
                 ::testing::UnitTest::GetInstance()->current_test_info()->name());
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

Image random_image(int w, int h, int c, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(w, h, c);
    for (double& v : img.data()) v = u(rng);
    return img;
}

std::string bytes_of(const std::string& path) {
    const auto b = read_file(path);
    return {b.begin(), b.end()};
}

GaussianPyramid random_pyramid(int width, int levels, int sh_degree, int view, unsigned seed) {
    std::mt19937 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    GaussianPyramid p;
    p.width = width;
    p.view = view;
    p.sh_degree = sh_degree;
    p.pose = make_pose(Vec3(n(rng), n(rng), n(rng)), Quat(n(rng), n(rng), n(rng), n(rng)).normalized());
    p.lattices = pyramid_lattices(width, levels);
    for (const auto& lat : p.lattices) {
        tracked_vector<Gaussian> gs(lat.size());
        for (Gaussian& g : gs) {
            g.mean = Vec3(n(rng), n(rng), n(rng));
            g.opacity = std::abs(n(rng));
            g.scale = Vec3(n(rng), n(rng), n(rng)).cwiseAbs();
            g.rotation = Vec4(n(rng), n(rng), n(rng), n(rng));
            for (int i = 0; i < 3 * sh_coeffs_per_channel(sh_degree); ++i) g.sh[i] = n(rng);
        }
        p.levels.push_back(std::move(gs));
    }
    return p;
}

} // namespace

// ---------------------------------------------------------------------------
// PFM

TEST(Pfm, RoundTripIsBitExactForFloatValues) {
    TempDir dir;
    for (int c : {1, 3}) {
        Image img = random_image(7, 5, c, 3 + c);
        for (double& v : img.data()) v = static_cast<float>(v * 40.0 - 3.0);
        write_pfm(dir.file("a.pfm"), img);
        EXPECT_EQ(read_pfm(dir.file("a.pfm")), img);
    }
}

TEST(Pfm, LayoutIsLittleEndianBottomRowFirst) {
    TempDir dir;
    Image img(2, 2, 1);
    img.at(0, 0, 0) = 1.0f;
    img.at(1, 0, 0) = 2.0f;
    img.at(0, 1, 0) = 3.0f;
    img.at(1, 1, 0) = 4.0f;
    write_pfm(dir.file("a.pfm"), img);
    const std::string b = bytes_of(dir.file("a.pfm"));
    const std::string header = "Pf\n2 2\n-1.0\n";
    ASSERT_EQ(b.size(), header.size() + 16);
    EXPECT_EQ(b.substr(0, header.size()), header);
    // 3.0f = 0x40400000, first sample of the bottom row.
    EXPECT_EQ(b.substr(header.size(), 4), std::string("\x00\x00\x40\x40", 4));
}

TEST(Pfm, ReadsBigEndianFiles) {
    TempDir dir;
    // 1.5f = 0x3FC00000 stored big-endian, positive scale.
    write_file(dir.file("be.pfm"), std::string("PF\n1 1\n1.0\n", 11) + std::string("\x3f\xc0\x00\x00", 4) +
                                       std::string("\x40\x00\x00\x00", 4) + std::string("\xbf\x80\x00\x00", 4));
    const Image img = read_pfm(dir.file("be.pfm"));
    ASSERT_EQ(img.channels(), 3);
    EXPECT_EQ(img.at(0, 0, 0), 1.5);
    EXPECT_EQ(img.at(0, 0, 1), 2.0);
    EXPECT_EQ(img.at(0, 0, 2), -1.0);
}

TEST(Pfm, MalformedFilesRaiseIoError) {
    TempDir dir;
    EXPECT_THROW(read_pfm(dir.file("missing.pfm")), IoError);
    write_file(dir.file("magic.pfm"), "P6\n1 1\n-1.0\nxxxx");
    EXPECT_THROW(read_pfm(dir.file("magic.pfm")), IoError);
    write_file(dir.file("short.pfm"), "Pf\n2 2\n-1.0\nxxxx");
    EXPECT_THROW(read_pfm(dir.file("short.pfm")), IoError);
    write_file(dir.file("header.pfm"), "Pf\nwide 2\n-1.0\n");
    EXPECT_THROW(read_pfm(dir.file("header.pfm")), IoError);
}

TEST(Pfm, RejectsUnsupportedChannelCounts) {
    TempDir dir;
    EXPECT_THROW(write_pfm(dir.file("a.pfm"), Image(2, 2, 2)), InvalidInput);
    EXPECT_THROW(write_pfm(dir.file("a.pfm"), Image(2, 2, 4)), InvalidInput);
}

// ---------------------------------------------------------------------------
// PNG

TEST(Png, EightBitRoundTripOfQuantizedValues) {
    TempDir dir;
    Image img = random_image(9, 4, 3, 11);
    for (double& v : img.data()) v = std::round(v * 255.0) / 255.0;
    write_png(dir.file("a.png"), img);
    EXPECT_EQ(read_png(dir.file("a.png")), img);
}

TEST(Png, SixteenBitRoundTripOfQuantizedValues) {
    TempDir dir;
    Image img = random_image(5, 6, 3, 12);
    for (double& v : img.data()) v = std::round(v * 65535.0) / 65535.0;
    write_png(dir.file("a.png"), img, 16);
    EXPECT_EQ(read_png(dir.file("a.png")), img);
}

TEST(Png, HeaderRecordsSizeDepthAndColorType) {
    TempDir dir;
    write_png(dir.file("a.png"), Image(300, 2, 3, 0.5), 16);
    const std::string b = bytes_of(dir.file("a.png"));
    // Signature (8), IHDR length (4), "IHDR" (4), then width, height, depth, color type.
    ASSERT_GT(b.size(), 26u);
    EXPECT_EQ(b.substr(12, 4), "IHDR");
    EXPECT_EQ(b.substr(16, 4), std::string("\x00\x00\x01\x2c", 4));
    EXPECT_EQ(b.substr(20, 4), std::string("\x00\x00\x00\x02", 4));
    EXPECT_EQ(b[24], 16);
    EXPECT_EQ(b[25], 2);
}

TEST(Png, GreyIsReadAsEqualRgb) {
    TempDir dir;
    Image grey(3, 3, 1);
    for (int i = 0; i < 9; ++i) grey.data()[i] = i / 255.0;
    write_png(dir.file("g.png"), grey);
    const Image rgb = read_png(dir.file("g.png"));
    ASSERT_EQ(rgb.channels(), 3);
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x)
            for (int c = 0; c < 3; ++c) EXPECT_EQ(rgb.at(x, y, c), grey.at(x, y, 0));
}

TEST(Png, ClampsOutOfRangeValues) {
    TempDir dir;
    Image img(1, 1, 3);
    img.at(0, 0, 0) = -0.5;
    img.at(0, 0, 1) = 2.0;
    img.at(0, 0, 2) = 0.5;
    write_png(dir.file("a.png"), img);
    const Image back = read_png(dir.file("a.png"));
    EXPECT_EQ(back.at(0, 0, 0), 0.0);
    EXPECT_EQ(back.at(0, 0, 1), 1.0);
    EXPECT_EQ(back.at(0, 0, 2), 128.0 / 255.0);
}

TEST(Png, BadFilesRaiseIoError) {
    TempDir dir;
    EXPECT_THROW(read_png(dir.file("missing.png")), IoError);
    write_file(dir.file("text.png"), "definitely not a png file");
    EXPECT_THROW(read_png(dir.file("text.png")), IoError);
    write_png(dir.file("a.png"), random_image(16, 16, 3, 1));
    std::string b = bytes_of(dir.file("a.png"));
    write_file(dir.file("cut.png"), b.substr(0, b.size() / 2));
    EXPECT_THROW(read_png(dir.file("cut.png")), IoError);
    EXPECT_THROW(write_png(dir.file("x.png"), Image(2, 2, 3), 12), InvalidInput);
    EXPECT_THROW(write_png(dir.file("x.png"), Image(2, 2, 2)), InvalidInput);
}

// ---------------------------------------------------------------------------
// PSGP

TEST(Psgp, WriteReadWriteIsByteIdentical) {
    TempDir dir;
    for (int sh : {0, 1}) {
        const std::vector<GaussianPyramid> pyr{random_pyramid(16, 2, sh, 0, 1), random_pyramid(16, 2, sh, 1, 2)};
        write_psgp(dir.file("a.psgp"), pyr);
        const auto back = read_psgp(dir.file("a.psgp"));
        write_psgp(dir.file("b.psgp"), back);
        EXPECT_EQ(bytes_of(dir.file("a.psgp")), bytes_of(dir.file("b.psgp")));
        ASSERT_EQ(back.size(), 2u);
        EXPECT_EQ(back[1].view, 1);
        EXPECT_EQ(back[0].pose.position, pyr[0].pose.position);
        EXPECT_EQ(back[0].pose.rotation.coeffs(), pyr[0].pose.rotation.coeffs());
        EXPECT_EQ(back[0].levels[1].size(), 20u);
        EXPECT_EQ(back[0].levels[0][5].mean.x(), static_cast<float>(pyr[0].levels[0][5].mean.x()));
    }
}

TEST(Psgp, HeaderLayoutAndLength) {
    TempDir dir;
    const std::vector<GaussianPyramid> pyr{random_pyramid(16, 2, 1, 0, 3)};
    write_psgp(dir.file("a.psgp"), pyr);
    const std::string b = bytes_of(dir.file("a.psgp"));
    EXPECT_EQ(b.substr(0, 4), "PSGP");
    EXPECT_EQ(b.substr(4, 4), std::string("\x01\x00\x00\x00", 4));
    EXPECT_EQ(b.substr(8, 4), std::string("\x10\x00\x00\x00", 4));
    EXPECT_EQ(b.substr(24, 8), std::string("\x51\x00\x00\x00\x00\x00\x00\x00", 8));
    EXPECT_EQ(b.substr(32, 8), std::string("\x14\x00\x00\x00\x00\x00\x00\x00", 8));
    // 24 header + 16 counts + 56 pose + 101 records of 23 floats.
    EXPECT_EQ(b.size(), 24u + 16u + 56u + 101u * 23u * 4u);
}

TEST(Psgp, RejectsCountMismatchAndBadLength) {
    TempDir dir;
    write_psgp(dir.file("a.psgp"), std::vector<GaussianPyramid>{random_pyramid(16, 2, 0, 0, 4)});
    const std::string b = bytes_of(dir.file("a.psgp"));

    std::string wrong = b;
    wrong[24] = 80;
    write_file(dir.file("count.psgp"), wrong);
    EXPECT_THROW(read_psgp(dir.file("count.psgp")), IoError);

    write_file(dir.file("short.psgp"), b.substr(0, b.size() - 1));
    EXPECT_THROW(read_psgp(dir.file("short.psgp")), IoError);
    write_file(dir.file("long.psgp"), b + "x");
    EXPECT_THROW(read_psgp(dir.file("long.psgp")), IoError);

    std::string magic = b;
    magic[0] = 'X';
    write_file(dir.file("magic.psgp"), magic);
    EXPECT_THROW(read_psgp(dir.file("magic.psgp")), IoError);

    std::string version = b;
    version[4] = 2;
    write_file(dir.file("version.psgp"), version);
    EXPECT_THROW(read_psgp(dir.file("version.psgp")), IoError);

    std::string width = b;
    width[8] = 17;
    write_file(dir.file("width.psgp"), width);
    EXPECT_THROW(read_psgp(dir.file("width.psgp")), IoError);
}

TEST(Psgp, WriterRejectsInconsistentPyramids) {
    TempDir dir;
    auto p = random_pyramid(16, 2, 0, 0, 5);
    p.levels[1].pop_back();
    EXPECT_THROW(write_psgp(dir.file("a.psgp"), std::vector<GaussianPyramid>{p}), InvalidInput);
    const std::vector<GaussianPyramid> mixed{random_pyramid(16, 2, 0, 0, 6), random_pyramid(16, 2, 1, 1, 7)};
    EXPECT_THROW(write_psgp(dir.file("a.psgp"), mixed), InvalidInput);
}

TEST(Psgp, SplitInvertsConsolidate) {
    const std::vector<GaussianPyramid> pyr{random_pyramid(16, 2, 1, 0, 8), random_pyramid(16, 2, 1, 1, 9)};
    const GaussianSet set = consolidate(pyr);
    const std::vector<CameraPose> poses{pyr[0].pose, pyr[1].pose};
    const auto back = split_pyramids(set, 16, 2, poses);
    ASSERT_EQ(back.size(), 2u);
    for (int v = 0; v < 2; ++v)
        for (int l = 0; l < 2; ++l) {
            ASSERT_EQ(back[v].levels[l].size(), pyr[v].levels[l].size());
            for (std::size_t j = 0; j < pyr[v].levels[l].size(); ++j)
                EXPECT_EQ(back[v].levels[l][j].mean, pyr[v].levels[l][j].mean);
        }
    EXPECT_THROW(split_pyramids(set, 16, 1, poses), InvalidInput);
}

// ---------------------------------------------------------------------------
// Poses

TEST(Poses, ParsesArrayAndSingleObject) {
    const auto list = parse_poses(R"([{"position": [1, 2, 3], "quaternion": [1, 0, 0, 0]},
                                      {"position": [0, 0, 0.5], "quaternion": [0, 0, 1, 0]}])");
    ASSERT_EQ(list.size(), 2u);
    EXPECT_EQ(list[0].position, Vec3(1, 2, 3));
    EXPECT_EQ(list[1].rotation.y(), 1.0);
    const auto one = parse_poses(R"({"position": [0, 1, 0], "quaternion": [1, 0, 0, 0]})");
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one[0].position.y(), 1.0);
}

TEST(Poses, NormalizesQuaternion) {
    const auto p = parse_poses(R"({"position": [0, 0, 0], "quaternion": [2, 0, 0, 0]})");
    EXPECT_EQ(p[0].rotation.w(), 1.0);
}

TEST(Poses, WriteReadRoundTripIsExact) {
    TempDir dir;
    const std::vector<CameraPose> poses{random_pyramid(16, 1, 0, 0, 1).pose, random_pyramid(16, 1, 0, 0, 2).pose};
    write_poses(dir.file("p.json"), poses);
    const auto back = read_poses(dir.file("p.json"));
    ASSERT_EQ(back.size(), 2u);
    for (int i = 0; i < 2; ++i) {
        EXPECT_EQ(back[i].position, poses[i].position);
        EXPECT_EQ(back[i].rotation.coeffs(), poses[i].rotation.coeffs());
    }
}

TEST(Poses, ErrorsAreClassified) {
    EXPECT_THROW(parse_poses("[{\"position\": [0, 0"), IoError);
    EXPECT_THROW(parse_poses("[]"), InvalidInput);
    EXPECT_THROW(parse_poses(R"({"position": [0, 0, 0]})"), InvalidInput);
    EXPECT_THROW(parse_poses(R"({"position": [0, 0], "quaternion": [1, 0, 0, 0]})"), InvalidInput);
    EXPECT_THROW(parse_poses(R"({"position": [0, 0, 0], "quaternion": [0, 0, 0, 0]})"), InvalidInput);
    EXPECT_THROW(parse_poses(R"({"position": [0, "a", 0], "quaternion": [1, 0, 0, 0]})"), InvalidInput);
    EXPECT_THROW(read_poses("/nonexistent/poses.json"), IoError);
}

// ---------------------------------------------------------------------------
// Scene specs

TEST(Scene, JsonRoundTripPreservesEveryField) {
    SceneSpec spec;
    spec.half_extents = Vec3(2.5, 1.25, 4.0);
    spec.width = 128;
    spec.supersample = 3;
    spec.texture.seed = 99;
    spec.texture.checker_size = 0.25;
    spec.texture.octaves = 2;
    spec.poses = {make_pose(Vec3(0.1, 0.2, -0.3), yaw_rotation(0.7))};
    const SceneSpec back = scene_from_json(nlohmann::json::parse(scene_to_json(spec).dump()));
    EXPECT_EQ(back.half_extents, spec.half_extents);
    EXPECT_EQ(back.width, 128);
    EXPECT_EQ(back.supersample, 3);
    EXPECT_EQ(back.texture.seed, 99u);
    EXPECT_EQ(back.texture.checker_size, 0.25);
    EXPECT_EQ(back.texture.octaves, 2);
    EXPECT_EQ(back.poses[0].position, spec.poses[0].position);
    EXPECT_EQ(back.poses[0].rotation.coeffs(), spec.poses[0].rotation.coeffs());
}

TEST(Scene, DefaultsApplyToMissingKeys) {
    const SceneSpec s = scene_from_json(nlohmann::json::parse(R"({"poses": [{"position": [0, 0, 0], "quaternion": [1, 0, 0, 0]}]})"));
    const SceneSpec d;
    EXPECT_EQ(s.half_extents, d.half_extents);
    EXPECT_EQ(s.width, d.width);
    EXPECT_EQ(s.texture.noise_frequency, d.texture.noise_frequency);
}

TEST(Scene, RejectsBadSpecs) {
    const std::string pose = R"({"position": [0, 0, 0], "quaternion": [1, 0, 0, 0]})";
    EXPECT_THROW(scene_from_json(nlohmann::json::parse("{}")), InvalidInput);
    EXPECT_THROW(scene_from_json(nlohmann::json::parse(R"({"colour": 1, "poses": [)" + pose + "]}")), InvalidInput);
    EXPECT_THROW(scene_from_json(nlohmann::json::parse(R"({"width": 1.5, "poses": [)" + pose + "]}")), InvalidInput);
    EXPECT_THROW(scene_from_json(nlohmann::json::parse(R"({"texture": {"sed": 1}, "poses": [)" + pose + "]}")),
                 InvalidInput);
    EXPECT_THROW(scene_from_json(nlohmann::json::parse(
                     R"({"half_extents": [1, 1, 1], "poses": [{"position": [2, 0, 0], "quaternion": [1, 0, 0, 0]}]})")),
                 InvalidInput);
    EXPECT_THROW(read_scene("/nonexistent/scene.json"), IoError);
}

// ---------------------------------------------------------------------------
// Config files

namespace {

struct ConfigApp {
    CLI::App app{"test"};
    CLI::App* sub = nullptr;
    int width = 0;
    double gamma = 0.0;
    bool flag = false;
    std::vector<int> heights;
    std::string name;

    ConfigApp() {
        sub = app.add_subcommand("run");
        sub->add_option("--width", width);
        sub->add_option("--gamma", gamma);
        sub->add_flag("--flag", flag);
        sub->add_option("--heights", heights);
        sub->add_option("--name", name);
        add_config_option(app);
    }
};

// CLI11 consumes argument vectors back to front.
void parse_args(CLI::App& app, std::vector<std::string> args) {
    std::reverse(args.begin(), args.end());
    app.parse(args);
}

} // namespace

TEST(Config, JsonValuesReachSubcommandOptions) {
    TempDir dir;
    write_file(dir.file("c.json"),
               R"({"width": 64, "gamma": 0.25, "flag": true, "heights": [256, 512], "name": "room"})");
    ConfigApp c;
    parse_args(c.app, {"run", "--config", dir.file("c.json")});
    EXPECT_EQ(c.width, 64);
    EXPECT_EQ(c.gamma, 0.25);
    EXPECT_TRUE(c.flag);
    EXPECT_EQ(c.heights, (std::vector<int>{256, 512}));
    EXPECT_EQ(c.name, "room");
}

TEST(Config, TomlValuesReachSubcommandOptions) {
    TempDir dir;
    write_file(dir.file("c.toml"), "width = 32\nheights = [128, 256]\nflag = true\n");
    ConfigApp c;
    parse_args(c.app, {"run", "--config", dir.file("c.toml")});
    EXPECT_EQ(c.width, 32);
    EXPECT_EQ(c.heights, (std::vector<int>{128, 256}));
    EXPECT_TRUE(c.flag);
}

TEST(Config, FlagsOverrideFileValues) {
    TempDir dir;
    write_file(dir.file("c.json"), R"({"width": 64})");
    ConfigApp c;
    parse_args(c.app, {"run", "--width", "8", "--config", dir.file("c.json")});
    EXPECT_EQ(c.width, 8);
}

TEST(Config, UnknownKeysAndBadJsonAreErrors) {
    TempDir dir;
    write_file(dir.file("extra.json"), R"({"depth": 3})");
    ConfigApp a;
    EXPECT_THROW(parse_args(a.app, {"run", "--config", dir.file("extra.json")}), CLI::ConfigError);
    write_file(dir.file("bad.json"), "{\"width\": ");
    ConfigApp b;
    EXPECT_THROW(parse_args(b.app, {"run", "--config", dir.file("bad.json")}), CLI::ConfigError);
}
