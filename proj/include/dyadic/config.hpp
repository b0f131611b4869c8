#pragma once

// Experiment configuration: a flat map from dotted keys to JSON values.
//
// Text form, one assignment per line:
//
//   seed = 42
//   [model]
//   kind = "geometric"
//   lambda = 2.0
//   [run]
//   t_grid = [0, 0.25, 0.5, 1.0]
//
// A [section] header prefixes the keys that follow it. Values use JSON
// syntax; a bare word that is not valid JSON is taken as a string. A .json
// file is accepted too: nested objects are flattened, and a manifest's
// "config" member is used when present, so a run can be repeated from its
// manifest.
//
// Every key must be consumed by the subcommand that reads the config;
// leftovers are reported as unknown before any computation starts.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dyadic/error.hpp"

namespace dyadic::config {

using Json = nlohmann::json;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline Json parse_value(const std::string& text) {
  const std::string v = trim(text);
  if (v.empty()) throw Error(ErrorKind::ConfigError, "empty value");
  auto parsed = Json::parse(v, nullptr, false);
  if (!parsed.is_discarded()) return parsed;
  const char c = v.front();
  if (c == '[' || c == '{' || c == '"') throw Error(ErrorKind::ConfigError, "malformed value: " + v);
  return v;
}

class Config {
 public:
  void set(const std::string& key, Json value) {
    if (key.empty()) throw Error(ErrorKind::ConfigError, "empty key");
    values_[key] = std::move(value);
  }

  /// "key=value" as given on the command line.
  void set_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::ConfigError, "expected key=value, got '" + assignment + "'");
    set(trim(assignment.substr(0, eq)), parse_value(assignment.substr(eq + 1)));
  }

  void merge(const Config& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
  }

  bool has(const std::string& key) const { return values_.contains(key); }
  void erase(const std::string& key) { values_.erase(key); }

  const Json* find(const std::string& key) const {
    used_.insert(key);
    const auto it = values_.find(key);
    return it == values_.end() ? nullptr : &it->second;
  }

  double number(const std::string& key, double fallback) const {
    const Json* v = find(key);
    if (!v) return remember(key, fallback);
    if (!v->is_number()) throw Error(ErrorKind::ConfigError, key + " must be a number");
    return remember(key, v->get<double>());
  }

  long long integer(const std::string& key, long long fallback) const {
    const Json* v = find(key);
    if (!v) return remember(key, fallback);
    if (v->is_number_integer()) return remember(key, v->get<long long>());
    if (v->is_number_float()) {
      const double d = v->get<double>();
      if (d == static_cast<double>(static_cast<long long>(d))) return remember(key, static_cast<long long>(d));
    }
    throw Error(ErrorKind::ConfigError, key + " must be an integer");
  }

  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) const {
    const Json* v = find(key);
    if (!v) return remember(key, fallback);
    if (v->is_number_unsigned()) return remember(key, v->get<std::uint64_t>());
    if (v->is_number_integer() && v->get<long long>() >= 0) {
      return remember(key, static_cast<std::uint64_t>(v->get<long long>()));
    }
    throw Error(ErrorKind::ConfigError, key + " must be a non-negative integer");
  }

  bool boolean(const std::string& key, bool fallback) const {
    const Json* v = find(key);
    if (!v) return remember(key, fallback);
    if (!v->is_boolean()) throw Error(ErrorKind::ConfigError, key + " must be true or false");
    return remember(key, v->get<bool>());
  }

  std::string string(const std::string& key, const std::string& fallback) const {
    const Json* v = find(key);
    if (!v) return remember(key, fallback);
    if (!v->is_string()) throw Error(ErrorKind::ConfigError, key + " must be a string");
    return remember(key, v->get<std::string>());
  }

  std::vector<double> numbers(const std::string& key, const std::vector<double>& fallback) const {
    const Json* v = find(key);
    if (!v) return remember(key, fallback);
    if (v->is_number()) return remember(key, std::vector<double>{v->get<double>()});
    if (!v->is_array()) throw Error(ErrorKind::ConfigError, key + " must be an array of numbers");
    std::vector<double> out;
    for (const auto& e : *v) {
      if (!e.is_number()) throw Error(ErrorKind::ConfigError, key + " must be an array of numbers");
      out.push_back(e.get<double>());
    }
    return remember(key, out);
  }

  std::vector<std::string> strings(const std::string& key, const std::vector<std::string>& fallback) const {
    const Json* v = find(key);
    if (!v) return remember(key, fallback);
    if (v->is_string()) return remember(key, std::vector<std::string>{v->get<std::string>()});
    if (!v->is_array()) throw Error(ErrorKind::ConfigError, key + " must be an array of strings");
    std::vector<std::string> out;
    for (const auto& e : *v) {
      if (!e.is_string()) throw Error(ErrorKind::ConfigError, key + " must be an array of strings");
      out.push_back(e.get<std::string>());
    }
    return remember(key, out);
  }

  /// Throws ConfigError naming every key nobody asked for.
  void reject_unknown() const {
    std::string unknown;
    for (const auto& [k, v] : values_) {
      if (!used_.contains(k)) unknown += (unknown.empty() ? "" : ", ") + k;
    }
    if (!unknown.empty()) throw Error(ErrorKind::ConfigError, "unknown config keys: " + unknown);
  }

  const std::map<std::string, Json>& values() const { return values_; }

  Json to_json() const {
    Json j = Json::object();
    for (const auto& [k, v] : values_) j[k] = v;
    return j;
  }

  /// Every value read so far, defaults included: the effective configuration.
  const Json& resolved() const { return resolved_; }

 private:
  template <class T>
  T remember(const std::string& key, T value) const {
    resolved_[key] = value;
    return value;
  }

  std::map<std::string, Json> values_;
  mutable std::set<std::string> used_;
  mutable Json resolved_ = Json::object();
};

inline void flatten_into(Config& cfg, const Json& j, const std::string& prefix) {
  for (const auto& [k, v] : j.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object()) {
      flatten_into(cfg, v, key);
    } else {
      cfg.set(key, v);
    }
  }
}

inline Config parse_text(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // Strip a comment unless the '#' sits inside a quoted string.
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    const std::string s = trim(line);
    if (s.empty()) continue;
    if (s.front() == '[' && s.back() == ']' && s.find('=') == std::string::npos) {
      section = trim(s.substr(1, s.size() - 2));
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::ConfigError, "line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(s.substr(0, eq));
    if (key.empty()) throw Error(ErrorKind::ConfigError, "line " + std::to_string(lineno) + ": empty key");
    try {
      cfg.set(section.empty() ? key : section + "." + key, parse_value(s.substr(eq + 1)));
    } catch (const Error& e) {
      throw Error(ErrorKind::ConfigError, "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

inline Config parse_json(const std::string& text) {
  const auto j = Json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorKind::ConfigError, "config JSON must be an object");
  Config cfg;
  flatten_into(cfg, j.contains("config") && j["config"].is_object() ? j["config"] : j, "");
  return cfg;
}

inline Config load_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::ConfigError, "cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (path.extension() == ".json" || (first != std::string::npos && text[first] == '{')) return parse_json(text);
  return parse_text(text);
}

}  // namespace dyadic::config
