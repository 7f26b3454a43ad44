#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace dyne {

// Versioned JSON container for model parameters: metadata plus named flat
// float64 arrays. Loading validates the schema version and, when given, the
// expected kind.
struct Checkpoint {
  static constexpr int kSchemaVersion = 1;

  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, std::vector<double>> arrays;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path, const std::string& expected_kind = "");

  const std::vector<double>& array(const std::string& name) const;
};

}  // namespace dyne
