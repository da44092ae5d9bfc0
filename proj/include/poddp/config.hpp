#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>

#include "poddp/types.hpp"

namespace poddp {

/// Resolved numeric parameters of an experiment, ordered by key.
using ParameterSet = std::map<std::string, double>;

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_number(const std::string& text, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw ConfigError(where + ": '" + text + "' is not a number");
  }
  if (used != text.size()) throw ConfigError(where + ": '" + text + "' is not a number");
  return v;
}

}  // namespace detail

/// Parses "key = value" (or "key=value") assignments.
inline std::pair<std::string, double> parse_assignment(std::string_view text,
                                                       const std::string& where = "override") {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos) throw ConfigError(where + ": expected key=value");
  std::string key = detail::trim(text.substr(0, eq));
  std::string value = detail::trim(text.substr(eq + 1));
  if (key.empty()) throw ConfigError(where + ": empty key");
  return {key, detail::parse_number(value, where + " '" + key + "'")};
}

/// Key-value text format: one "key = value" per line; '#' starts a comment.
inline ParameterSet parse_parameters(std::string_view text, const std::string& source) {
  ParameterSet out;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto [key, value] = parse_assignment(line, source + ":" + std::to_string(lineno));
    if (out.contains(key)) throw ConfigError(source + ": duplicate key '" + key + "'");
    out.emplace(std::move(key), value);
  }
  return out;
}

inline ParameterSet load_parameter_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_parameters(buf.str(), path);
}

/// Overwrites known keys; unknown keys are an error.
inline void apply_overrides(ParameterSet& base, const ParameterSet& overrides) {
  for (const auto& [key, value] : overrides) {
    auto it = base.find(key);
    if (it == base.end()) throw ConfigError("unknown parameter '" + key + "'");
    it->second = value;
  }
}

/// Shortest text that parses back to exactly `v`.
inline std::string format_number(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string canonical_text(const ParameterSet& params) {
  std::string out;
  for (const auto& [key, value] : params) out += key + " = " + format_number(value) + "\n";
  return out;
}

/// 64-bit FNV-1a of the experiment name and canonical parameter listing, hex.
inline std::string config_hash(const std::string& experiment, const ParameterSet& params) {
  const std::string text = "experiment = " + experiment + "\n" + canonical_text(params);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace poddp
