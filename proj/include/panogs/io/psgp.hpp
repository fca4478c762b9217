#pragma once

// PSGP: binary Gaussian pyramids, little-endian.
//
//   "PSGP" | u32 version | u32 W | u32 L | u32 sh_degree | u32 views
//   u64 counts[L]                      (must equal pyramid_counts(W, L))
//   f64 pose[views][7]                 (position xyz, quaternion wxyz)
//   f32 record[views][L][counts[l]]    (mean 3, opacity, scale 3, quat wxyz, SH 3K)
//
// Levels are stored finest first; records follow lattice order.

#include "panogs/gaussian.hpp"
#include "panogs/io/binary.hpp"

#include <span>

namespace panogs::io {

inline constexpr std::uint32_t kPsgpVersion = 1;

inline std::size_t psgp_record_floats(int sh_degree) { return 11 + 3 * sh_coeffs_per_channel(sh_degree); }

inline std::string encode_psgp(std::span<const GaussianPyramid> pyramids) {
    require(!pyramids.empty(), "write_psgp: need at least one pyramid");
    const GaussianPyramid& first = pyramids.front();
    const int levels = static_cast<int>(first.levels.size());
    const auto counts = pyramid_counts(first.width, levels);
    for (const auto& p : pyramids) {
        require(p.width == first.width && p.sh_degree == first.sh_degree &&
                    static_cast<int>(p.levels.size()) == levels,
                "write_psgp: pyramids disagree on width, levels or SH degree");
        for (int l = 0; l < levels; ++l)
            require(static_cast<std::int64_t>(p.levels[l].size()) == counts[l],
                    "write_psgp: level size does not match the lattice count");
    }
    std::string out = "PSGP";
    for (std::uint32_t v : {kPsgpVersion, static_cast<std::uint32_t>(first.width), static_cast<std::uint32_t>(levels),
                            static_cast<std::uint32_t>(first.sh_degree), static_cast<std::uint32_t>(pyramids.size())})
        put_le(out, v);
    for (auto c : counts) put_le(out, static_cast<std::uint64_t>(c));
    for (const auto& p : pyramids) {
        for (int i = 0; i < 3; ++i) put_le(out, p.pose.position[i]);
        for (double q : {p.pose.rotation.w(), p.pose.rotation.x(), p.pose.rotation.y(), p.pose.rotation.z()})
            put_le(out, q);
    }
    const int sh = 3 * sh_coeffs_per_channel(first.sh_degree);
    for (const auto& p : pyramids)
        for (const auto& level : p.levels)
            for (const Gaussian& g : level) {
                for (int i = 0; i < 3; ++i) put_le(out, static_cast<float>(g.mean[i]));
                put_le(out, static_cast<float>(g.opacity));
                for (int i = 0; i < 3; ++i) put_le(out, static_cast<float>(g.scale[i]));
                for (int i = 0; i < 4; ++i) put_le(out, static_cast<float>(g.rotation[i]));
                for (int i = 0; i < sh; ++i) put_le(out, static_cast<float>(g.sh[i]));
            }
    return out;
}

inline std::vector<GaussianPyramid> decode_psgp(const std::vector<char>& bytes, const std::string& what = "PSGP") {
    if (bytes.size() < 4 || std::string(bytes.data(), 4) != "PSGP") throw IoError(what + ": not a PSGP file");
    Reader in(bytes, what);
    in.get<std::uint32_t>();
    if (in.get<std::uint32_t>() != kPsgpVersion) throw IoError(what + ": unsupported PSGP version");
    const auto width = in.get<std::uint32_t>();
    const auto levels = in.get<std::uint32_t>();
    const auto sh_degree = in.get<std::uint32_t>();
    const auto views = in.get<std::uint32_t>();
    if (width == 0 || width > (1u << 20) || levels == 0 || levels > 16 || sh_degree > kMaxShDegree || views == 0 ||
        views > 1024)
        throw IoError(what + ": implausible PSGP header");
    std::vector<std::int64_t> expected;
    try {
        expected = pyramid_counts(static_cast<int>(width), static_cast<int>(levels));
    } catch (const InvalidInput&) {
        throw IoError(what + ": PSGP width and level count are inconsistent");
    }
    std::uint64_t total = 0;
    for (std::uint32_t l = 0; l < levels; ++l) {
        const auto c = in.get<std::uint64_t>();
        if (c != static_cast<std::uint64_t>(expected[l])) throw IoError(what + ": level counts do not match the lattice");
        total += c;
    }
    std::vector<GaussianPyramid> out(views);
    const auto lattices = pyramid_lattices(static_cast<int>(width), static_cast<int>(levels));
    for (auto& p : out) {
        Vec3 pos;
        for (int i = 0; i < 3; ++i) pos[i] = in.get<double>();
        const double w = in.get<double>(), x = in.get<double>(), y = in.get<double>(), z = in.get<double>();
        try {
            p.pose = make_pose(pos, Quat(w, x, y, z));
        } catch (const InvalidInput& e) {
            throw IoError(what + ": " + e.what());
        }
        p.width = static_cast<int>(width);
        p.sh_degree = static_cast<int>(sh_degree);
        p.lattices = lattices;
    }
    const std::size_t floats = psgp_record_floats(static_cast<int>(sh_degree));
    if (in.remaining() != total * views * floats * 4) throw IoError(what + ": payload length does not match the header");
    const int sh = 3 * sh_coeffs_per_channel(static_cast<int>(sh_degree));
    for (std::uint32_t v = 0; v < views; ++v) {
        out[v].view = static_cast<int>(v);
        for (std::uint32_t l = 0; l < levels; ++l) {
            tracked_vector<Gaussian> gs(static_cast<std::size_t>(expected[l]));
            for (Gaussian& g : gs) {
                for (int i = 0; i < 3; ++i) g.mean[i] = in.get<float>();
                g.opacity = in.get<float>();
                for (int i = 0; i < 3; ++i) g.scale[i] = in.get<float>();
                for (int i = 0; i < 4; ++i) g.rotation[i] = in.get<float>();
                for (int i = 0; i < sh; ++i) g.sh[i] = in.get<float>();
            }
            out[v].levels.push_back(std::move(gs));
        }
    }
    return out;
}

inline void write_psgp(const std::string& path, std::span<const GaussianPyramid> pyramids) {
    write_file(path, encode_psgp(pyramids));
}

inline std::vector<GaussianPyramid> read_psgp(const std::string& path) { return decode_psgp(read_file(path), path); }

/// Inverse of `consolidate`: cuts a flat set back into one pyramid per pose.
inline std::vector<GaussianPyramid> split_pyramids(const GaussianSet& set, int width, int levels,
                                                   std::span<const CameraPose> poses) {
    const auto counts = pyramid_counts(width, levels);
    std::int64_t per_view = 0;
    for (auto c : counts) per_view += c;
    require(static_cast<std::int64_t>(set.size()) == per_view * static_cast<std::int64_t>(poses.size()),
            "split_pyramids: set size does not match views x pyramid size");
    std::vector<GaussianPyramid> out;
    auto it = set.items.begin();
    for (std::size_t v = 0; v < poses.size(); ++v) {
        GaussianPyramid p;
        p.width = width;
        p.view = static_cast<int>(v);
        p.sh_degree = set.sh_degree;
        p.pose = poses[v];
        p.lattices = pyramid_lattices(width, levels);
        p.levels.resize(levels);
        for (int l = levels - 1; l >= 0; --l) {
            p.levels[l].assign(it, it + counts[l]);
            it += counts[l];
        }
        out.push_back(std::move(p));
    }
    return out;
}

} // namespace panogs::io
