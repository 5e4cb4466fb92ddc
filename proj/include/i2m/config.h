// Tool configuration: key-value files, flag overrides and credential lookup.
#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "i2m/orchestrator.h"
#include "i2m/vlm.h"

namespace i2m::config {

// "key = value" lines. '#' starts a comment outside quotes; values may be
// double-quoted (with \" \\ \n \t escapes). No sections, no duplicates.
// Throws Error("BAD_CONFIG") naming the line.
std::map<std::string, std::string> parse_key_values(std::string_view text);

struct ToolConfig {
  orchestrator::PipelineConfig pipeline;
  vlm::ClientConfig client;
  std::string chat_endpoint;
  std::string chat_model;
  std::string embed_endpoint;
  std::string embed_model;
  std::string api_key;                   // from the file; lowest priority
  std::string api_key_env = "I2M_API_KEY";
  int timeout_seconds = 120;
  std::filesystem::path template_dir;    // empty = bundled templates
};

// Keys accepted by apply_key_values, sorted.
const std::vector<std::string>& known_keys();

// Applies parsed values; unknown keys and bad values throw BAD_CONFIG.
void apply_key_values(ToolConfig& config, const std::map<std::string, std::string>& values);

// parse_key_values + apply_key_values over defaults. Throws IO_FAILURE.
ToolConfig load_config(const std::filesystem::path& path);

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
EnvLookup process_env();

// Flag, then the environment variable named in the config, then the file.
std::string resolve_api_key(const std::optional<std::string>& flag, const ToolConfig& config, const EnvLookup& env);

}  // namespace i2m::config
