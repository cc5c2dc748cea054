#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"
#include "realdesc/backbone.hpp"
#include "realdesc/descriptions.hpp"
#include "realdesc/multires.hpp"
#include "realdesc/training.hpp"
#include "realdesc/zeroshot.hpp"

namespace realdesc {

/// Everything a command needs to reproduce a run.
struct RunConfig {
  std::string backbone = "vit-b-32";
  std::string dataset;
  DescriptionStyle style = DescriptionStyle::kOxford;
  EvalMode mode = EvalMode::kWithName;
  bool multires = false;
  MultiResConfig multires_config;
  ScheduleSpec schedule;
  FreezePolicy freeze;
  CurationSpec curation;
  std::map<std::string, std::string> paths;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  std::string path(const std::string& key, const std::string& fallback = {}) const;
};

/// Replaces ${NAME} and ${NAME:-default} in every string of the document.
/// An unset variable without a default is a ConfigError.
nlohmann::json interpolate_env(const nlohmann::json& j);

/// Reads a JSON config file and interpolates environment variables.
nlohmann::json load_config_file(const std::filesystem::path& path);

/// defaults < config file < flag overrides (RFC 7386 merge patches).
RunConfig resolve_config(const nlohmann::json& file, const nlohmann::json& overrides);

}  // namespace realdesc
