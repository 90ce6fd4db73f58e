#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pft {

// `key = value` configuration files, '#' starts a comment.
class KvConfig {
 public:
  KvConfig() = default;

  static KvConfig parse(const std::string& text, const std::string& origin = "<string>") {
    KvConfig cfg;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                                 ": expected 'key = value', got: " + trimmed);
      std::string key = trim(trimmed.substr(0, eq));
      std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                                 ": empty key");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  static KvConfig load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read config: " + path);
    std::stringstream buf;
    buf << is.rdbuf();
    return parse(buf.str(), path);
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write config: " + path);
    for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  void set(const std::string& key, const std::string& value) {
    values_[key] = value;
  }
  void set(const std::string& key, double value) {
    std::ostringstream ss;
    ss.precision(17);
    ss << value;
    values_[key] = ss.str();
  }
  void set(const std::string& key, std::int64_t value) {
    values_[key] = std::to_string(value);
  }

  std::string get_string(const std::string& key, const std::string& dflt) const {
    auto it = values_.find(key);
    return it == values_.end() ? dflt : it->second;
  }

  std::string require_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end())
      throw std::runtime_error("missing required config key: " + key);
    return it->second;
  }

  double get_double(const std::string& key, double dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    try {
      std::size_t pos = 0;
      double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument(it->second);
      return v;
    } catch (const std::exception&) {
      throw std::runtime_error("config key '" + key +
                               "' is not a number: " + it->second);
    }
  }

  std::int64_t get_int(const std::string& key, std::int64_t dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    try {
      std::size_t pos = 0;
      std::int64_t v = std::stoll(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument(it->second);
      return v;
    } catch (const std::exception&) {
      throw std::runtime_error("config key '" + key +
                               "' is not an integer: " + it->second);
    }
  }

  bool get_bool(const std::string& key, bool dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw std::runtime_error("config key '" + key +
                             "' is not a boolean: " + it->second);
  }

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace pft
