#pragma once

#include <string>

#include "json.hpp"
#include "sgt/model.hpp"

namespace sgt {

/// Raised when a declarative config lacks a field or has the wrong type.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// j[key] with an error naming `path.key` when absent.
const nlohmann::json& require_field(const nlohmann::json& j, const std::string& key,
                                    const std::string& path);

template <typename T>
T field(const nlohmann::json& j, const std::string& key, const std::string& path) {
  const auto& v = require_field(j, key, path);
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config field '" + (path.empty() ? key : path + "." + key) +
                      "' has the wrong type: " + e.what());
  }
}

nlohmann::json to_json(const SgtConfig& c);
SgtConfig sgt_config_from_json(const nlohmann::json& j, const std::string& path = "model");

/// FNV-1a 64 of the canonical (sorted-key, compact) dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);

}  // namespace sgt
