#include "dyne/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

namespace dyne {

void Checkpoint::save(const std::string& path) const {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = kind;
  j["meta"] = meta;
  nlohmann::json arr = nlohmann::json::object();
  for (const auto& [name, values] : arrays) arr[name] = values;
  j["arrays"] = arr;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  os << j.dump();
  os << "\n";
  if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

Checkpoint Checkpoint::load(const std::string& path, const std::string& expected_kind) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint: '" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.contains("schema_version") || !j["schema_version"].is_number_integer())
    throw std::runtime_error("checkpoint: '" + path + "' has no schema_version field");
  if (j["schema_version"].get<int>() != kSchemaVersion)
    throw std::runtime_error("checkpoint: unsupported schema version in '" + path + "'");
  Checkpoint c;
  c.kind = j.value("kind", "");
  if (!expected_kind.empty() && c.kind != expected_kind)
    throw std::runtime_error("checkpoint: '" + path + "' holds a '" + c.kind + "' checkpoint, expected '" +
                             expected_kind + "'");
  c.meta = j.value("meta", nlohmann::json::object());
  for (const auto& [name, values] : j.at("arrays").items())
    c.arrays[name] = values.get<std::vector<double>>();
  return c;
}

const std::vector<double>& Checkpoint::array(const std::string& name) const {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw std::runtime_error("checkpoint: missing array '" + name + "'");
  return it->second;
}

}  // namespace dyne
