#include "pathscan/config.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "pathscan/error.hpp"
#include "pathscan/io.hpp"

namespace pathscan {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Drops a trailing # comment that is not inside a quoted string.
std::string strip_comment(const std::string& s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && quoted) {
      ++i;
    } else if (s[i] == '"') {
      quoted = !quoted;
    } else if (s[i] == '#' && !quoted) {
      return s.substr(0, i);
    }
  }
  return s;
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '_' || c == '-' || c == '.';
    if (!ok) return false;
  }
  return true;
}

bool scalar(const json& v) { return v.is_number() || v.is_boolean() || v.is_string(); }

[[noreturn]] void bad_type(const std::string& key, const char* want) {
  fail(ErrorKind::kInvalidConfig, "config key '" + key + "' must be " + want);
}

}  // namespace

Config Config::parse(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string raw, section;
  std::size_t line = 0;
  auto error = [&](const std::string& what) {
    fail(ErrorKind::kFormat, "config line " + std::to_string(line) + ": " + what);
  };
  while (std::getline(in, raw)) {
    ++line;
    const std::string s = trim(strip_comment(raw));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') error("unterminated section header");
      section = trim(s.substr(1, s.size() - 2));
      if (!valid_key(section)) error("bad section name '" + section + "'");
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) error("expected key = value");
    const std::string key = trim(s.substr(0, eq));
    if (!valid_key(key)) error("bad key '" + key + "'");
    json value;
    try {
      value = json::parse(trim(s.substr(eq + 1)));
    } catch (const json::parse_error&) {
      error("bad value for '" + key + "'");
    }
    const bool ok = scalar(value) ||
                    (value.is_array() && std::all_of(value.begin(), value.end(), scalar));
    if (!ok) error("value for '" + key + "' must be a scalar or a flat array");
    const std::string full = section.empty() ? key : section + "." + key;
    if (cfg.has(full)) error("duplicate key '" + full + "'");
    cfg.values_[full] = std::move(value);
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) { return parse(read_text_file(path)); }

void Config::set(const std::string& key, json value) { values_[key] = std::move(value); }

const json* Config::find(const std::string& key) const {
  auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
  const json* v = find(key);
  if (!v) return fallback;
  if (!v->is_number()) bad_type(key, "a number");
  return v->get<double>();
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
  const json* v = find(key);
  if (!v) return fallback;
  if (v->is_number_integer()) return v->get<std::int64_t>();
  if (v->is_number_float()) {
    const double d = v->get<double>();
    if (std::floor(d) == d && std::abs(d) < 9e15) return static_cast<std::int64_t>(d);
  }
  bad_type(key, "an integer");
}

std::size_t Config::get_size(const std::string& key, std::size_t fallback) const {
  if (!has(key)) return fallback;
  const std::int64_t v = get_int(key, 0);
  if (v < 0) bad_type(key, "non-negative");
  return static_cast<std::size_t>(v);
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
  const json* v = find(key);
  if (!v) return fallback;
  if (v->is_number_unsigned()) return v->get<std::uint64_t>();
  return static_cast<std::uint64_t>(get_size(key, 0));
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  const json* v = find(key);
  if (!v) return fallback;
  if (!v->is_boolean()) bad_type(key, "true or false");
  return v->get<bool>();
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  const json* v = find(key);
  if (!v) return fallback;
  if (!v->is_string()) bad_type(key, "a quoted string");
  return v->get<std::string>();
}

std::vector<double> Config::get_doubles(const std::string& key,
                                        const std::vector<double>& fallback) const {
  const json* v = find(key);
  if (!v) return fallback;
  if (!v->is_array()) bad_type(key, "an array of numbers");
  std::vector<double> out;
  for (const json& x : *v) {
    if (!x.is_number()) bad_type(key, "an array of numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

json Config::to_json() const {
  json out = json::object();
  for (const auto& [key, value] : values_) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) {
      out[key] = value;
    } else {
      out[key.substr(0, dot)][key.substr(dot + 1)] = value;
    }
  }
  return out;
}

std::string Config::to_text() const {
  std::ostringstream os;
  std::string section;
  for (const auto& [key, value] : values_) {
    if (key.find('.') == std::string::npos) os << key << " = " << value.dump() << '\n';
  }
  for (const auto& [key, value] : values_) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) continue;
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      os << '[' << sec << "]\n";
      section = sec;
    }
    os << key.substr(dot + 1) << " = " << value.dump() << '\n';
  }
  return os.str();
}

}  // namespace pathscan
