#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "neuron_lab/experiments.hpp"

namespace neuron_lab {

// Schema violation; what() starts with the dotted path of the offending field.
struct ConfigError : std::invalid_argument {
    std::string field;
    ConfigError(const std::string& field_path, const std::string& message)
        : std::invalid_argument(field_path + ": " + message), field(field_path) {}
};

struct SweepAxis {
    std::string path;  // dotted path into the config, e.g. "params.epsilon"
    std::vector<nlohmann::json> values;
};

struct RunConfig {
    ExperimentSpec spec;
    std::optional<std::filesystem::path> out;
    std::vector<SweepAxis> sweep;
    // The config as given, with command-line overrides applied.
    nlohmann::json source;
};

// Top-level keys: experiment, n_trials, seed, workers, out, tolerance_scale,
// trajectories, engine, distribution, params, optimizer, and (for sweeps
// only) sweep. Which keys params, optimizer and distribution accept
// depends on the experiment; anything else is rejected.
RunConfig parse_run_config(const nlohmann::json& j, bool allow_sweep = false);
RunConfig load_run_config(const std::filesystem::path& path, bool allow_sweep = false);

// Copy of j with the value at a dotted path replaced (objects are created
// along the way).
nlohmann::json with_value(nlohmann::json j, const std::string& path, const nlohmann::json& value);

// Cross product of the sweep axes; each entry is one full config without
// the sweep key.
std::vector<nlohmann::json> sweep_points(const RunConfig& cfg);

// Reproducibility record written next to every result.
nlohmann::ordered_json make_manifest(const RunConfig& cfg, const std::vector<std::string>& argv);

inline constexpr const char* kArtifactVersion = "1.0.0";

}  // namespace neuron_lab
