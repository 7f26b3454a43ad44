#include "dyne/config.hpp"

#include <algorithm>
#include <array>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace dyne {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// section -> allowed keys ("" = global)
const std::map<std::string, std::array<const char*, 24>>& schema() {
  static const std::map<std::string, std::array<const char*, 24>> s = {
      {"", {"env", "seed", "precision"}},
      {"collect", {"n_steps", "with_frames"}},
      {"repr",
       {"mode", "k", "z_a_dim", "z_s_dim", "beta", "gamma_a", "kl_cycles", "learning_rate", "batch_size",
        "n_updates", "holdout_frac", "likelihood_scale", "log_interval"}},
      {"decoder", {"lambda", "learning_rate", "batch_size", "n_updates", "log_interval"}},
      {"rl",
       {"algo", "steps", "discount", "tau", "expl_noise", "target_noise", "noise_clip", "policy_delay",
        "batch_size", "warmup_steps", "actor_lr", "critic_lr", "z_max", "eval_interval", "n_eval",
        "replay_capacity", "obs"}},
      {"analyze", {"n_episodes", "horizon", "n_sequences", "n_states", "n_pairs", "policy_kind"}},
      {"sweep", {"ks", "seeds", "budget", "workers"}},
  };
  return s;
}

}  // namespace

RunConfig RunConfig::parse_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError("config line " + std::to_string(lineno) + ": unterminated section");
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    cfg.values_[section.empty() ? key : section + "." + key] = value;
  }
  return cfg;
}

RunConfig RunConfig::parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_text(ss.str());
}

void RunConfig::apply_override(const std::string& assignment) {
  size_t eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "': expected key=value");
  std::string key = trim(assignment.substr(0, eq));
  std::string value = trim(assignment.substr(eq + 1));
  if (key.empty()) throw ConfigError("override '" + assignment + "': empty key");
  values_[key] = value;
}

void RunConfig::set(const std::string& qualified_key, const std::string& value) {
  values_[qualified_key] = value;
}

bool RunConfig::has(const std::string& k) const { return values_.count(k) > 0; }

std::string RunConfig::get_str(const std::string& k, const std::string& def) const {
  auto it = values_.find(k);
  return it == values_.end() ? def : it->second;
}

long RunConfig::get_int(const std::string& k, long def) const {
  auto it = values_.find(k);
  if (it == values_.end()) return def;
  char* end = nullptr;
  long v = std::strtol(it->second.c_str(), &end, 10);
  if (end == it->second.c_str() || *end != '\0')
    throw ConfigError("config key '" + k + "': '" + it->second + "' is not an integer");
  return v;
}

double RunConfig::get_num(const std::string& k, double def) const {
  auto it = values_.find(k);
  if (it == values_.end()) return def;
  char* end = nullptr;
  double v = std::strtod(it->second.c_str(), &end);
  if (end == it->second.c_str() || *end != '\0')
    throw ConfigError("config key '" + k + "': '" + it->second + "' is not a number");
  return v;
}

bool RunConfig::get_bool(const std::string& k, bool def) const {
  auto it = values_.find(k);
  if (it == values_.end()) return def;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + k + "': '" + v + "' is not a boolean");
}

void RunConfig::validate() const {
  for (const auto& [qk, value] : values_) {
    (void)value;
    size_t dot = qk.find('.');
    std::string section = dot == std::string::npos ? "" : qk.substr(0, dot);
    std::string key = dot == std::string::npos ? qk : qk.substr(dot + 1);
    auto it = schema().find(section);
    if (it == schema().end()) throw ConfigError("config: unknown section '" + section + "'");
    bool ok = false;
    for (const char* allowed : it->second)
      if (allowed && key == allowed) ok = true;
    if (!ok) throw ConfigError("config: unknown key '" + qk + "'");
  }
}

std::string RunConfig::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) {  // std::map iterates in sorted order
    out += k;
    out += " = ";
    out += v;
    out += "\n";
  }
  return out;
}

uint64_t RunConfig::hash() const {
  uint64_t h = 1469598103934665603ull;
  for (char c : canonical()) {
    h ^= static_cast<uint8_t>(c);
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace dyne
