// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vimco {

/// Flat key-value configuration with dotted keys ("train.k = 5"). Values are
/// stored as strings; typed getters parse on demand. Later sources override
/// earlier ones, which is how command-line flags win over the file.
class KvConfig {
 public:
  static KvConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config file: " + path);
    KvConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string stripped = strip(line.substr(0, line.find('#')));
      if (stripped.empty()) continue;
      const auto eq = stripped.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                    ": expected 'key = value'");
      const std::string key = strip(stripped.substr(0, eq));
      const std::string value = strip(stripped.substr(eq + 1));
      if (key.empty()) throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": empty key");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_str(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  int get_int(const std::string& key, int fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return parse<int>(key, it->second);
  }

  std::uint32_t get_u32(const std::string& key, std::uint32_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return static_cast<std::uint32_t>(parse<unsigned long>(key, it->second));
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return parse<double>(key, it->second);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw std::invalid_argument("config value for " + key + " is not a boolean: " + v);
  }

  std::vector<int> get_ints(const std::string& key, std::vector<int> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<int> out;
    for (const auto& tok : split_commas(it->second)) out.push_back(parse<int>(key, tok));
    return out;
  }

  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<double> out;
    for (const auto& tok : split_commas(it->second)) out.push_back(parse<double>(key, tok));
    return out;
  }

  /// Fully-resolved listing, sorted by key; this is what run directories echo.
  std::string resolved() const {
    std::ostringstream out;
    for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
    return out.str();
  }

 private:
  static std::string strip(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::string tok;
    std::istringstream in(s);
    while (std::getline(in, tok, ',')) {
      tok = strip(tok);
      if (!tok.empty()) out.push_back(tok);
    }
    return out;
  }

  template <class T>
  static T parse(const std::string& key, const std::string& v) {
    std::istringstream in(v);
    T out;
    in >> out;
    if (!in || !(in >> std::ws).eof())
      throw std::invalid_argument("config value for " + key + " is not parseable: " + v);
    return out;
  }

  std::map<std::string, std::string> values_;
};

}  // namespace vimco
