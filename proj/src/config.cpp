#include "lapfusion/config.hpp"

#include "lapfusion/error.hpp"

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace lapfusion {

namespace {

using Setter = std::function<void(const toml::node&)>;

template <typename T>
T value_of(const toml::node& node, const std::string& key)
{
    if constexpr (std::is_same_v<T, double>) {
        if (auto v = node.value<double>()) {
            return *v;
        }
    } else if constexpr (std::is_same_v<T, bool>) {
        if (node.is_boolean()) {
            return *node.value<bool>();
        }
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (node.is_string()) {
            return *node.value<std::string>();
        }
    } else {
        if (node.is_integer()) {
            return static_cast<T>(*node.value<std::int64_t>());
        }
    }
    throw ConfigError("config: key '" + key + "' has the wrong type");
}

template <typename T>
std::pair<std::string, Setter> bind_value(const std::string& key, T& target)
{
    return {key, [&target, key](const toml::node& n) { target = value_of<T>(n, key); }};
}

std::pair<std::string, Setter> bind_path(const std::string& key, std::filesystem::path& target)
{
    return {key, [&target, key](const toml::node& n) { target = value_of<std::string>(n, key); }};
}

} // namespace

void RunConfig::validate() const
{
    fusion.validate();
    if (threads < 0) {
        throw ConfigError("config: threads must be non-negative");
    }
    if (!(scale >= 0.0) || !std::isfinite(scale)) {
        throw ConfigError("config: scale must be a non-negative number");
    }
    if (frames < 1) {
        throw ConfigError("config: synth frames must be at least 1");
    }
    if (!(max_bend > 0.0) || max_bend >= 3.0) {
        throw ConfigError("config: synth max_bend must be in (0, 3)");
    }
    if (scan.points < 1 || scan.noise < 0.0) {
        throw ConfigError("config: synth points must be positive and noise non-negative");
    }
    if (wrinkles.amplitude < 0.0 || !(wrinkles.wavelength > 0.0) || wrinkles.rest_fraction < 0.0 ||
        wrinkles.rest_fraction > 1.0 || !(wrinkles.bulge_width > 0.0)) {
        throw ConfigError("config: synth wrinkle parameters out of range");
    }
}

RunConfig parse_run_config(const std::string& toml_text, const std::string& source)
{
    toml::table root;
    try {
        root = toml::parse(toml_text, source);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << "config: " << source << ":" << e.source().begin.line << ": " << e.description();
        throw ConfigError(msg.str());
    }

    RunConfig c;
    FusionConfig& f = c.fusion;
    std::string target = to_string(f.target);
    std::int64_t seed = static_cast<std::int64_t>(f.seed);
    std::int64_t scan_seed = static_cast<std::int64_t>(c.scan.seed);
    std::vector<double> camera;

    std::map<std::string, std::map<std::string, Setter>> schema;
    schema["paths"] = {bind_path("rig", c.rig),
                       bind_path("poses", c.poses),
                       bind_path("scans", c.scans),
                       bind_path("output", c.output),
                       bind_path("checkpoint", c.checkpoint),
                       bind_path("target_rig", c.target_rig),
                       bind_path("target_checkpoint", c.target_checkpoint)};
    schema["run"] = {bind_value("threads", c.threads), bind_value("deterministic", c.deterministic)};
    schema["base"] = {bind_value("layers", f.base_layers),
                      bind_value("width", f.base_width),
                      bind_value("epochs", f.base_epochs),
                      bind_value("batch_frames", f.base_batch_frames),
                      bind_value("points_per_frame", f.base_points_per_frame),
                      bind_value("lambda_r", f.lambda_r),
                      bind_value("lambda_a", f.lambda_a),
                      bind_value("depth_falloff", f.depth_falloff),
                      bind_value("displacement_scale", f.displacement_scale),
                      bind_value("visibility_tolerance", f.visibility_tolerance)};
    schema["detail"] = {bind_value("layers", f.detail_layers), bind_value("width", f.detail_width),
                        bind_value("epochs", f.detail_epochs), bind_value("batch_points", f.detail_batch_points),
                        bind_value("target", target)};
    schema["training"] = {bind_value("learning_rate", f.learning_rate), bind_value("frequencies", f.frequencies),
                          bind_value("include_input", f.include_input), bind_value("k_neighbors", f.k_neighbors),
                          bind_value("seed", seed)};
    schema["reconstruction"] = {bind_value("subdivision", f.subdivision), bind_value("anchors", f.anchors),
                                bind_value("anchor_weight", f.anchor_weight), bind_value("scale", c.scale)};
    schema["synth"] = {bind_value("joints", c.rig_spec.joints),
                       bind_value("radius", c.rig_spec.radius),
                       bind_value("length", c.rig_spec.length),
                       bind_value("edge", c.rig_spec.edge),
                       bind_value("blend", c.rig_spec.blend),
                       bind_value("frames", c.frames),
                       bind_value("max_bend", c.max_bend),
                       bind_value("amplitude", c.wrinkles.amplitude),
                       bind_value("wavelength", c.wrinkles.wavelength),
                       bind_value("rest_fraction", c.wrinkles.rest_fraction),
                       bind_value("offset", c.wrinkles.offset),
                       bind_value("bulge", c.wrinkles.bulge),
                       bind_value("bulge_width", c.wrinkles.bulge_width),
                       bind_value("round", c.wrinkles.round),
                       bind_value("points", c.scan.points),
                       bind_value("noise", c.scan.noise),
                       bind_value("seed", scan_seed),
                       {"camera", [&camera](const toml::node& n) {
                            const toml::array* arr = n.as_array();
                            if (!arr || arr->size() != 3) {
                                throw ConfigError("config: synth.camera must be an array of three numbers");
                            }
                            for (const toml::node& v : *arr) {
                                camera.push_back(value_of<double>(v, "synth.camera"));
                            }
                        }}};

    for (const auto& [section, node] : root) {
        const std::string name(section.str());
        const auto it = schema.find(name);
        if (it == schema.end()) {
            throw ConfigError("config: unknown section [" + name + "]");
        }
        const toml::table* table = node.as_table();
        if (!table) {
            throw ConfigError("config: '" + name + "' must be a table");
        }
        for (const auto& [key, value] : *table) {
            const std::string k(key.str());
            const auto setter = it->second.find(k);
            if (setter == it->second.end()) {
                throw ConfigError("config: unknown key '" + k + "' in [" + name + "]");
            }
            setter->second(value);
        }
    }

    if (target == "laplacian") {
        f.target = DetailTarget::Laplacian;
    } else if (target == "displacement") {
        f.target = DetailTarget::Displacement;
    } else {
        throw ConfigError("config: detail.target must be \"laplacian\" or \"displacement\", got \"" + target + "\"");
    }
    if (seed < 0 || scan_seed < 0) {
        throw ConfigError("config: seeds must be non-negative");
    }
    f.seed = static_cast<std::uint64_t>(seed);
    c.scan.seed = static_cast<std::uint64_t>(scan_seed);
    if (!camera.empty()) {
        c.scan.camera = Vec3(camera[0], camera[1], camera[2]);
    }
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config " + path.string());
    }
    std::ostringstream text;
    text << in.rdbuf();
    RunConfig c = parse_run_config(text.str(), path.string());
    // Relative paths in the file are relative to the file itself.
    const std::filesystem::path base = path.parent_path();
    for (std::filesystem::path* p : {&c.rig, &c.poses, &c.scans, &c.output, &c.checkpoint, &c.target_rig,
                                     &c.target_checkpoint}) {
        if (!p->empty() && p->is_relative()) {
            *p = base / *p;
        }
    }
    return c;
}

void require_exists(const std::filesystem::path& path, const char* what)
{
    if (path.empty()) {
        throw ConfigError(std::string("no ") + what + " path given");
    }
    if (!std::filesystem::exists(path)) {
        throw IoError(std::string(what) + " not found: " + path.string());
    }
}

} // namespace lapfusion
