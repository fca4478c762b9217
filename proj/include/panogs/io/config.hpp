#pragma once

// Config files for CLI11 apps: JSON when the file starts with '{', TOML otherwise.
// Nested JSON objects map to subcommand sections; arrays give multiple values.
// Top-level keys that are not options of the main app go to the subcommand
// selected on the command line.

#include <CLI11.hpp>
#include <json.hpp>

#include <istream>
#include <iterator>
#include <string>
#include <vector>

namespace panogs::io {

class JsonOrTomlConfig : public CLI::ConfigTOML {
public:
    explicit JsonOrTomlConfig(const CLI::App* app = nullptr) : app_(app) {}

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        std::string text(std::istreambuf_iterator<char>(input), {});
        const auto first = text.find_first_not_of(" \t\r\n");
        std::vector<CLI::ConfigItem> out;
        if (first == std::string::npos || text[first] != '{') {
            std::istringstream toml(text);
            out = CLI::ConfigTOML::from_config(toml);
        } else {
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(text);
            } catch (const nlohmann::json::parse_error& e) {
                throw CLI::ConfigError(std::string("invalid JSON config: ") + e.what());
            }
            flatten(j, {}, out);
        }
        if (app_ != nullptr && app_->get_subcommands().size() == 1) {
            const std::string sub = app_->get_subcommands().front()->get_name();
            for (auto& item : out)
                if (item.parents.empty() && item.name != "++" && item.name != "--" &&
                    app_->get_option_no_throw("--" + item.name) == nullptr)
                    item.parents.push_back(sub);
        }
        return out;
    }

private:
    const CLI::App* app_;

    static std::string scalar(const nlohmann::json& v) {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_null()) return "";
        if (v.is_object() || v.is_array()) throw CLI::ConfigError("nested arrays are not supported in config values");
        return v.dump();
    }

    static void flatten(const nlohmann::json& obj, const std::vector<std::string>& parents,
                        std::vector<CLI::ConfigItem>& out) {
        for (const auto& [key, value] : obj.items()) {
            if (value.is_object()) {
                auto sub = parents;
                sub.push_back(key);
                flatten(value, sub, out);
                continue;
            }
            CLI::ConfigItem item;
            item.parents = parents;
            item.name = key;
            if (value.is_array())
                for (const auto& e : value) item.inputs.push_back(scalar(e));
            else
                item.inputs.push_back(scalar(value));
            out.push_back(std::move(item));
        }
    }
};

/// Adds `--config` to the top-level `app`, accepting JSON or TOML. Unknown
/// keys are errors, and the option may follow the subcommand name.
inline CLI::Option* add_config_option(CLI::App& app) {
    app.config_formatter(std::make_shared<JsonOrTomlConfig>(&app));
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.fallthrough();
    for (CLI::App* sub : app.get_subcommands([](CLI::App*) { return true; })) sub->fallthrough();
    return app.set_config("--config", "", "TOML or JSON file of option values");
}

} // namespace panogs::io
