#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

namespace dyne {

// Bad usage: malformed config, unknown key, unparsable value. Exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Missing upstream artifact (names the stage that produces it). Exit code 3.
struct DependencyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Key-value run configuration with nested sections:
//
//   env = PointMass2D
//   seed = 1
//   [repr]
//   k = 4
//
// Keys are addressed as "key" (global) or "section.key". Unknown keys are
// rejected against a fixed schema. CLI overrides take precedence over file
// values, which take precedence over built-in defaults.
class RunConfig {
 public:
  static RunConfig parse_file(const std::string& path);
  static RunConfig parse_text(const std::string& text);

  void apply_override(const std::string& assignment);  // "section.key=value"
  void set(const std::string& qualified_key, const std::string& value);

  bool has(const std::string& qualified_key) const;
  std::string get_str(const std::string& qualified_key, const std::string& def) const;
  long get_int(const std::string& qualified_key, long def) const;
  double get_num(const std::string& qualified_key, double def) const;
  bool get_bool(const std::string& qualified_key, bool def) const;

  // Throws ConfigError on any key outside the schema.
  void validate() const;

  // Sorted "key = value" listing; identical configs produce identical text.
  std::string canonical() const;
  uint64_t hash() const;  // FNV-1a over canonical()

 private:
  std::map<std::string, std::string> values_;  // qualified key -> raw string
};

}  // namespace dyne
