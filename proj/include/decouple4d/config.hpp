#ifndef DECOUPLE4D_CONFIG_HPP
#define DECOUPLE4D_CONFIG_HPP

#include <charconv>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "decouple4d/error.hpp"

namespace decouple4d {

/// Ordered key=value pairs from a config file.
using ConfigMap = std::map<std::string, std::string>;

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace config_detail

/// Parses `key=value` lines. Blank lines and lines starting with '#' are
/// skipped; a later duplicate key overrides an earlier one.
inline ConfigMap parse_config(const std::string& text, const std::string& what = "config") {
  ConfigMap out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = config_detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::InvalidConfig, what + ":" + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = config_detail::trim(t.substr(0, eq));
    if (key.empty()) throw Error(ErrorCode::InvalidConfig, what + ":" + std::to_string(lineno) + ": empty key");
    out[key] = config_detail::trim(t.substr(eq + 1));
  }
  return out;
}

inline std::string format_config(const ConfigMap& cfg) {
  std::string out;
  for (const auto& [k, v] : cfg) out += k + "=" + v + "\n";
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidConfig, key + ": '" + v + "' is not a number");
  }
}

inline long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw Error(ErrorCode::InvalidConfig, key + ": '" + v + "' is not an integer");
  }
  return out;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw Error(ErrorCode::InvalidConfig, key + ": '" + v + "' is not an unsigned integer");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorCode::InvalidConfig, key + ": '" + v + "' is not a boolean");
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) {
    cur = config_detail::trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

/// Shortest decimal text that reads back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace decouple4d

#endif  // DECOUPLE4D_CONFIG_HPP
