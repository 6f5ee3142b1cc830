#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "depscreen/common.hpp"

namespace depscreen {

// Flat `key = value` configuration file; '#' starts a comment. One file
// drives every pipeline command so an experiment is reproducible from a
// single artifact. Unknown keys are rejected to catch typos.
class Config {
 public:
  static Config load(const std::filesystem::path& path,
                     const std::set<std::string>& known_keys) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    Config config;
    config.raw_ = buffer.str();
    config.path_ = path;

    std::istringstream lines(config.raw_);
    std::string line;
    int line_no = 0;
    while (std::getline(lines, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      const std::string t = trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                          ": expected key = value");
      }
      const std::string key = trim(t.substr(0, eq));
      const std::string value = trim(t.substr(eq + 1));
      if (key.empty()) {
        throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": empty key");
      }
      if (!known_keys.count(key)) {
        throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                          ": unknown key '" + key + "'");
      }
      config.values_[key] = value;
    }
    return config;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing required config key '" + key + "'");
    return it->second;
  }
  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  int get_int(const std::string& key) const { return parse_int(key, get_string(key)); }
  int get_int(const std::string& key, int fallback) const {
    return has(key) ? get_int(key) : fallback;
  }

  std::uint64_t get_uint64(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    try {
      return std::stoull(get_string(key));
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' is not an unsigned integer");
    }
  }

  double get_double(const std::string& key) const {
    return parse_double(key, get_string(key));
  }
  double get_double(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
  }

  std::filesystem::path get_path(const std::string& key) const { return get_string(key); }
  std::filesystem::path get_path(const std::string& key,
                                 const std::filesystem::path& fallback) const {
    return has(key) ? std::filesystem::path(get_string(key)) : fallback;
  }

  // comma-separated pair, e.g. "0.5,0.5"
  std::pair<double, double> get_pair(const std::string& key) const {
    const std::string v = get_string(key);
    const auto comma = v.find(',');
    if (comma == std::string::npos) {
      throw ConfigError("config key '" + key + "' must be two comma-separated numbers");
    }
    return {parse_double(key, trim(v.substr(0, comma))),
            parse_double(key, trim(v.substr(comma + 1)))};
  }
  std::pair<double, double> get_pair(const std::string& key,
                                     std::pair<double, double> fallback) const {
    return has(key) ? get_pair(key) : fallback;
  }

  std::string hash_hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(raw_)));
    return buf;
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static int parse_int(const std::string& key, const std::string& value) {
    try {
      size_t used = 0;
      const int v = std::stoi(value, &used);
      if (used != value.size()) throw std::invalid_argument("trailing junk");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' is not an integer: '" + value + "'");
    }
  }

  static double parse_double(const std::string& key, const std::string& value) {
    try {
      size_t used = 0;
      const double v = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument("trailing junk");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' is not a number: '" + value + "'");
    }
  }

  std::map<std::string, std::string> values_;
  std::string raw_;
  std::filesystem::path path_;
};

}  // namespace depscreen
