#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace pathscan {

// Flat key/value settings read from TOML-style text:
//
//   seed = 7
//   [scanpath]
//   lr = 3e-3          # comment
//   class_weights = [1, 2, 0.5]
//   sampling = "sample"
//
// Keys under a [section] header are stored as "section.key". Values are
// numbers, booleans, quoted strings, or flat arrays of those.
class Config {
 public:
  static Config parse(const std::string& text);
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, nlohmann::json value);

  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::vector<double> get_doubles(const std::string& key,
                                  const std::vector<double>& fallback) const;

  // Nested by section, e.g. {"seed": 7, "scanpath": {"lr": 0.003}}.
  nlohmann::json to_json() const;
  std::string to_text() const;

  const std::map<std::string, nlohmann::json>& values() const { return values_; }

 private:
  const nlohmann::json* find(const std::string& key) const;
  std::map<std::string, nlohmann::json> values_;
};

}  // namespace pathscan
