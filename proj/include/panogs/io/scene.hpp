#pragma once

// Scene specs as JSON. Every key is optional except "poses":
//   {"half_extents": [3, 1.5, 3], "width": 256, "supersample": 2,
//    "texture": {"seed": 1, "checker_size": 0.5, ...}, "poses": [...]}

#include "panogs/io/poses.hpp"
#include "panogs/synth.hpp"

#include <set>

namespace panogs::io {

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& known, const std::string& what) {
    require(j.is_object(), what + " must be a JSON object");
    for (const auto& [key, value] : j.items()) require(known.count(key) == 1, what + ": unknown key \"" + key + "\"");
}

template <typename T>
void read_number(const nlohmann::json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if constexpr (std::is_integral_v<T>)
        require(v.is_number_integer(), std::string(key) + " must be an integer");
    else
        require(v.is_number(), std::string(key) + " must be a number");
    out = v.get<T>();
}

} // namespace detail

inline SceneSpec scene_from_json(const nlohmann::json& j) {
    detail::check_keys(j, {"half_extents", "width", "supersample", "texture", "poses"}, "scene");
    SceneSpec spec;
    if (j.contains("half_extents")) {
        const auto& h = j.at("half_extents");
        require(h.is_array() && h.size() == 3 && h[0].is_number() && h[1].is_number() && h[2].is_number(),
                "half_extents needs 3 numbers");
        spec.half_extents = Vec3(h[0].get<double>(), h[1].get<double>(), h[2].get<double>());
    }
    detail::read_number(j, "width", spec.width);
    detail::read_number(j, "supersample", spec.supersample);
    if (j.contains("texture")) {
        const auto& t = j.at("texture");
        detail::check_keys(t,
                           {"seed", "checker_size", "checker_contrast", "noise_frequency", "noise_amplitude", "octaves",
                            "persistence"},
                           "texture");
        TextureSpec& tex = spec.texture;
        detail::read_number(t, "seed", tex.seed);
        detail::read_number(t, "checker_size", tex.checker_size);
        detail::read_number(t, "checker_contrast", tex.checker_contrast);
        detail::read_number(t, "noise_frequency", tex.noise_frequency);
        detail::read_number(t, "noise_amplitude", tex.noise_amplitude);
        detail::read_number(t, "octaves", tex.octaves);
        detail::read_number(t, "persistence", tex.persistence);
    }
    require(j.contains("poses") && j.at("poses").is_array() && !j.at("poses").empty(), "scene: poses array required");
    for (const auto& p : j.at("poses")) spec.poses.push_back(pose_from_json(p));
    spec.validate();
    return spec;
}

inline nlohmann::json scene_to_json(const SceneSpec& spec) {
    const TextureSpec& t = spec.texture;
    nlohmann::json j = {
        {"half_extents", {spec.half_extents.x(), spec.half_extents.y(), spec.half_extents.z()}},
        {"width", spec.width},
        {"supersample", spec.supersample},
        {"texture",
         {{"seed", t.seed},
          {"checker_size", t.checker_size},
          {"checker_contrast", t.checker_contrast},
          {"noise_frequency", t.noise_frequency},
          {"noise_amplitude", t.noise_amplitude},
          {"octaves", t.octaves},
          {"persistence", t.persistence}}},
        {"poses", nlohmann::json::array()}};
    for (const auto& p : spec.poses) j["poses"].push_back(pose_to_json(p));
    return j;
}

inline SceneSpec read_scene(const std::string& path) {
    const auto bytes = read_file(path);
    try {
        return scene_from_json(nlohmann::json::parse(bytes.begin(), bytes.end()));
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError(path + ": " + e.what());
    }
}

} // namespace panogs::io
