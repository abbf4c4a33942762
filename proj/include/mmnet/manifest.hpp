#pragma once

#include <map>
#include <string>

#include "json.hpp"

namespace mmnet {

/// Record of one CLI invocation, sufficient to replay it.
struct RunManifest {
  std::string command;
  nlohmann::json config;   // resolved TrainConfig
  nlohmann::json options;  // command-specific settings outside the config
  uint64_t seed = 0;
  std::string started;
  std::string finished;
  std::map<std::string, std::string> artifacts;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

/// UTC time as ISO 8601.
std::string utc_timestamp();
void write_manifest(const std::string& path, const RunManifest& m);
RunManifest read_manifest(const std::string& path);

}  // namespace mmnet
