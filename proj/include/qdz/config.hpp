#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "qdz/errors.hpp"

namespace qdz {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t");
  return s.substr(begin, end - begin + 1);
}

}  // namespace detail

/// Flat `key = value` settings file. One setting per line, `#` starts a
/// comment, later assignments override earlier ones. Keys are stored sorted
/// so serialization (manifests) is reproducible.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    KeyValueConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config: missing '=' at " + path.string() + ":" +
                          std::to_string(line_no));
      }
      const std::string key = detail::trim(line.substr(0, eq));
      if (key.empty()) {
        throw ConfigError("config: empty key at " + path.string() + ":" +
                          std::to_string(line_no));
      }
      cfg.entries_[key] = detail::trim(line.substr(eq + 1));
    }
    return cfg;
  }

  /// Applies a `key=value` override (CLI --set).
  void set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("--set expects key=value, got '" + assignment + "'");
    }
    const std::string key = detail::trim(assignment.substr(0, eq));
    if (key.empty()) throw ConfigError("--set: empty key");
    entries_[key] = detail::trim(assignment.substr(eq + 1));
  }

  void set_value(const std::string& key, const std::string& value) {
    entries_[key] = value;
  }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second;
  }

  std::string require_string(const std::string& key) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) {
      throw ConfigError("config: missing required key '" + key + "'");
    }
    return it->second;
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    return parse_int(key, it->second);
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    const std::int64_t v = get_int(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ConfigError("config: key '" + key + "' must be non-negative");
    return static_cast<std::uint64_t>(v);
  }

  double get_double(const std::string& key, double fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    try {
      std::size_t used = 0;
      const double v = std::stod(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument(it->second);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config: key '" + key + "' is not a number: " + it->second);
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    throw ConfigError("config: key '" + key + "' expects on/off, got " + v);
  }

  /// Comma-separated unsigned list, e.g. `bits = 2,4,8`.
  std::vector<std::uint32_t> get_u32_list(const std::string& key,
                                          std::vector<std::uint32_t> fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    std::vector<std::uint32_t> out;
    std::stringstream ss(it->second);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      const std::int64_t v = parse_int(key, detail::trim(cell));
      if (v < 0) throw ConfigError("config: key '" + key + "' must be non-negative");
      out.push_back(static_cast<std::uint32_t>(v));
    }
    if (out.empty()) throw ConfigError("config: key '" + key + "' has no values");
    return out;
  }

  /// Rejects any key outside `allowed`. Meta keys shared by every command
  /// (command, seed, version) are always allowed so manifests reload as
  /// configs.
  void reject_unknown(const std::set<std::string>& allowed) const {
    for (const auto& [key, value] : entries_) {
      if (key == "command" || key == "seed" || key == "version") continue;
      if (!allowed.count(key)) {
        throw ConfigError("config: unknown key '" + key + "'");
      }
    }
  }

  const std::map<std::string, std::string>& entries() const { return entries_; }

  /// Deterministic serialization: sorted `key = value` lines.
  std::string serialize() const {
    std::string out;
    for (const auto& [key, value] : entries_) {
      out += key;
      out += " = ";
      out += value;
      out += "\n";
    }
    return out;
  }

 private:
  static std::int64_t parse_int(const std::string& key, const std::string& text) {
    try {
      std::size_t used = 0;
      const std::int64_t v = std::stoll(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config: key '" + key + "' is not an integer: " + text);
    }
  }

  std::map<std::string, std::string> entries_;
};

}  // namespace qdz
