#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace procdata::pipeline {

inline constexpr const char* kVersion = "0.1.0";

// Environment variables with this prefix override config keys; "__"
// separates nesting levels (PROCDATA_CFG_HMM__RESTARTS=5 sets hmm.restarts).
inline constexpr const char* kEnvPrefix = "PROCDATA_CFG_";

const std::vector<std::string>& subcommands();

// Every recognised key with its default value.
nlohmann::json default_config();

// Overlays `user` on `base`. Keys absent from `base` and values whose JSON
// type differs from the base value raise CONFIG_ERROR naming the key.
nlohmann::json merge(const nlohmann::json& base, const nlohmann::json& user, const std::string& path = "");

// Sets one dotted key; `value` is parsed as JSON and falls back to a string.
void apply_override(nlohmann::json& config, const std::string& dotted_key, const std::string& value);

// Applies PROCDATA_CFG_* variables from the process environment, sorted by name.
void apply_environment(nlohmann::json& config);

// Parses config text (empty means defaults) and applies the environment.
nlohmann::json load_config(const std::string& text);

struct RunSummary {
  std::string out_dir;                // directory holding this subcommand's outputs
  std::vector<std::string> outputs;   // relative to out_dir
  std::vector<std::string> notes;
};

// Runs one subcommand against a resolved config. Writes outputs, the
// resolved config and a run manifest under <out_dir>/<subcommand>/.
// Throws procdata::Error.
RunSummary run(const std::string& subcommand, const nlohmann::json& config);

}  // namespace procdata::pipeline
