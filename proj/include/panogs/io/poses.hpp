#pragma once

// Poses as JSON: [{"position": [x, y, z], "quaternion": [w, x, y, z]}, ...].
// A single object is read as a one-element list.

#include "panogs/core/math.hpp"
#include "panogs/io/binary.hpp"

#include <json.hpp>

#include <cmath>
#include <vector>

namespace panogs::io {

inline CameraPose pose_from_json(const nlohmann::json& j) {
    require(j.is_object() && j.contains("position") && j.contains("quaternion"),
            "pose must be an object with position and quaternion");
    const auto& p = j.at("position");
    const auto& q = j.at("quaternion");
    require(p.is_array() && p.size() == 3 && q.is_array() && q.size() == 4,
            "pose position needs 3 numbers and quaternion 4");
    for (const auto* a : {&p, &q})
        for (const auto& v : *a) require(v.is_number(), "pose entries must be numbers");
    Quat rot(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>());
    const double n = rot.norm();
    require(std::isfinite(n) && n > 1e-12, "pose quaternion must be nonzero");
    if (std::abs(n - 1.0) > 1e-12) rot.normalize();
    return make_pose(Vec3(p[0].get<double>(), p[1].get<double>(), p[2].get<double>()), rot);
}

inline nlohmann::json pose_to_json(const CameraPose& pose) {
    return {{"position", {pose.position.x(), pose.position.y(), pose.position.z()}},
            {"quaternion", {pose.rotation.w(), pose.rotation.x(), pose.rotation.y(), pose.rotation.z()}}};
}

inline std::vector<CameraPose> parse_poses(const std::string& text, const std::string& what = "poses") {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError(what + ": " + e.what());
    }
    std::vector<CameraPose> out;
    if (j.is_object()) {
        out.push_back(pose_from_json(j));
    } else {
        require(j.is_array() && !j.empty(), what + ": expected a pose object or a non-empty array");
        for (const auto& e : j) out.push_back(pose_from_json(e));
    }
    return out;
}

inline std::vector<CameraPose> read_poses(const std::string& path) {
    const auto bytes = read_file(path);
    return parse_poses(std::string(bytes.begin(), bytes.end()), path);
}

inline void write_poses(const std::string& path, std::span<const CameraPose> poses) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& p : poses) j.push_back(pose_to_json(p));
    write_file(path, j.dump(2) + "\n");
}

} // namespace panogs::io
