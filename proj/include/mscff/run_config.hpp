#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mscff/inference.hpp"
#include "mscff/network.hpp"
#include "mscff/synthetic.hpp"
#include "mscff/training.hpp"

namespace mscff {

/// Everything a command can be configured with, as one flat JSON object.
/// Scene bands follow `in_channels`; `scene_count` is the number of scenes
/// `synth` writes.
struct RunConfig {
    NetworkConfig network;
    TrainConfig train;
    InferenceConfig inference;
    SceneSpec scene;
    std::size_t scene_count = 20;

    /// Runs every module's validate(); ConfigError on the first failure.
    void validate() const;
};

/// Key names accepted by apply_json / apply_override, sorted.
std::vector<std::string> run_config_keys();

/// Applies each key of a JSON object. ConfigError on unknown keys, wrong
/// value types or a document that is not an object. Does not validate.
void apply_json(RunConfig& cfg, const std::string& json_text);
/// `value` is parsed as JSON when possible and as a bare string otherwise.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

RunConfig load_run_config(const std::filesystem::path& path);

/// Every key with its current value, as a JSON object.
std::string to_json(const RunConfig& cfg);

}  // namespace mscff
