#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "farm/api.hpp"
#include "farm/chamber.hpp"
#include "farm/telemetry.hpp"

namespace farm {

// farmctl.json
struct Config {
  std::string bus_endpoint = "tcp://127.0.0.1:7700";
  std::string api_bind = api::kDefaultBind;
  std::optional<std::filesystem::path> recipe_path;
  std::optional<std::filesystem::path> model_path;
  std::filesystem::path data_dir = "data";
  std::filesystem::path ui_dir;
  json sim = json::object();  // scenario document for the embedded simulator
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline json read_json_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

// Relative paths inside the file resolve against the file's directory.
inline Config load_config(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& s) {
    std::filesystem::path p(s);
    return p.is_absolute() || base.empty() ? p : base / p;
  };
  Config c;
  try {
    if (j.contains("bus")) c.bus_endpoint = j["bus"].value("endpoint", c.bus_endpoint);
    if (j.contains("api")) c.api_bind = j["api"].value("bind", c.api_bind);
    if (j.contains("recipe_path")) c.recipe_path = resolve(j["recipe_path"].get<std::string>());
    if (j.contains("model_path")) c.model_path = resolve(j["model_path"].get<std::string>());
    if (j.contains("data_dir")) c.data_dir = resolve(j["data_dir"].get<std::string>());
    if (j.contains("ui_dir")) c.ui_dir = resolve(j["ui_dir"].get<std::string>());
    if (j.contains("sim")) c.sim = j["sim"];
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return c;
}

inline std::filesystem::path config_path(const std::optional<std::string>& explicit_path) {
  if (explicit_path) return *explicit_path;
  if (const char* env = std::getenv("FARMCTL_CONFIG"); env && *env) return env;
  return "farmctl.json";
}

// Embedded-simulator scenario: the `sim` block with defaults for anything missing.
inline ScenarioSpec sim_spec_from_config(const json& sim) {
  json doc = {{"duration_s", kDaySeconds}, {"dt_s", 1.0}, {"seed", 1}};
  for (auto it = sim.begin(); it != sim.end(); ++it) doc[it.key()] = *it;
  return scenario_from_json(doc);
}

}  // namespace farm
