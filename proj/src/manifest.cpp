#include "mmnet/manifest.hpp"

#include <chrono>
#include <ctime>
#include <fstream>

#include "mmnet/checkpoint.hpp"
#include "mmnet/errors.hpp"

namespace mmnet {

nlohmann::json RunManifest::to_json() const {
  return {{"command", command}, {"config", config},     {"options", options},    {"seed", seed},
          {"started", started}, {"finished", finished}, {"artifacts", artifacts}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.config = j.at("config");
    m.options = j.value("options", nlohmann::json::object());
    m.seed = j.at("seed").get<uint64_t>();
    m.started = j.value("started", "");
    m.finished = j.value("finished", "");
    m.artifacts = j.value("artifacts", std::map<std::string, std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed run manifest: ") + e.what());
  }
  return m;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const std::string& path, const RunManifest& m) {
  write_file_atomic(path, m.to_json().dump(2) + "\n");
}

RunManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest " + path);
  try {
    return RunManifest::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("manifest " + path + " is not valid JSON: " + e.what());
  }
}

}  // namespace mmnet
