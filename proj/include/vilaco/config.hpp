#pragma once

// JSON run configuration with dotted key=value overrides.
// Precedence: command-line flag > config file > built-in default.

#include "vilaco/model.hpp"
#include "vilaco/trainer.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace vilaco {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

std::string config_to_json(const RunConfig& cfg);
// Fields absent from the document keep their value in `base`. Unknown keys
// and type mismatches throw ConfigError.
RunConfig config_from_json(std::string_view text, const RunConfig& base = {});
RunConfig load_config_file(const std::filesystem::path& path, const RunConfig& base = {});
// "train.lr=0.001"; the key must already exist.
void apply_override(RunConfig& cfg, std::string_view assignment);
// Every dotted key, in document order.
std::vector<std::string> config_keys();

}  // namespace vilaco
