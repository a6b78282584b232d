// Copyright 2026 The sbnd Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

// Minimal TOML subset for run configurations:
//   # comment
//   key = value
//   [section]            keys below are addressed as "section.key"
// Values: "string", true/false, integers, floats, and single-line arrays of
// those ([1, 2.5, "x"]). Every key read through a Config is marked used so
// that leftovers can be reported as typos.

#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "sbnd/errors.hpp"

namespace sbnd {

struct ConfigValue {
  using Array = std::vector<ConfigValue>;
  std::variant<bool, std::int64_t, double, std::string, Array> v;

  bool is_number() const {
    return std::holds_alternative<std::int64_t>(v) || std::holds_alternative<double>(v);
  }
  std::string to_string() const;
};

inline std::string ConfigValue::to_string() const {
  struct Visitor {
    std::string operator()(bool b) const { return b ? "true" : "false"; }
    std::string operator()(std::int64_t i) const { return std::to_string(i); }
    std::string operator()(double d) const {
      char buf[64];
      std::string r(buf, std::to_chars(buf, buf + sizeof buf, d).ptr);
      // Keep floats distinguishable from integers on re-parse.
      if (r.find_first_of(".eEn") == std::string::npos) r += ".0";
      return r;
    }
    std::string operator()(const std::string& s) const { return '"' + s + '"'; }
    std::string operator()(const Array& a) const {
      std::string r = "[";
      for (std::size_t i = 0; i < a.size(); ++i) r += (i ? ", " : "") + a[i].to_string();
      return r + "]";
    }
  };
  return std::visit(Visitor{}, v);
}

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

class ValueParser {
 public:
  ValueParser(std::string_view s, int line) : s_(s), line_(line) {}

  ConfigValue parse_all() {
    ConfigValue v = parse();
    skip_ws();
    if (pos_ != s_.size()) fail("trailing characters after value");
    return v;
  }

 private:
  [[noreturn]] void fail(const std::string& m) const {
    throw ConfigError("config line " + std::to_string(line_) + ": " + m);
  }
  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  ConfigValue parse() {
    skip_ws();
    if (pos_ >= s_.size()) fail("missing value");
    const char c = s_[pos_];
    if (c == '"') return parse_string();
    if (c == '[') return parse_array();
    if (s_.compare(pos_, 4, "true") == 0) {
      pos_ += 4;
      return {true};
    }
    if (s_.compare(pos_, 5, "false") == 0) {
      pos_ += 5;
      return {false};
    }
    return parse_number();
  }

  ConfigValue parse_string() {
    ++pos_;
    std::string out;
    while (pos_ < s_.size() && s_[pos_] != '"') {
      if (s_[pos_] == '\\' && pos_ + 1 < s_.size()) {
        const char e = s_[++pos_];
        out += e == 'n' ? '\n' : e == 't' ? '\t' : e;
      } else {
        out += s_[pos_];
      }
      ++pos_;
    }
    if (pos_ >= s_.size()) fail("unterminated string");
    ++pos_;
    return {out};
  }

  ConfigValue parse_array() {
    ++pos_;
    ConfigValue::Array a;
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == ']') {
      ++pos_;
      return {a};
    }
    for (;;) {
      a.push_back(parse());
      skip_ws();
      if (pos_ >= s_.size()) fail("unterminated array");
      if (s_[pos_] == ',') {
        ++pos_;
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == ']') {
          ++pos_;
          return {a};
        }
        continue;
      }
      if (s_[pos_] == ']') {
        ++pos_;
        return {a};
      }
      fail("expected ',' or ']' in array");
    }
  }

  ConfigValue parse_number() {
    std::size_t end = pos_;
    while (end < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[end])) ||
                               s_[end] == '.' || s_[end] == '-' || s_[end] == '+' || s_[end] == '_'))
      ++end;
    std::string tok;
    for (std::size_t i = pos_; i < end; ++i)
      if (s_[i] != '_') tok += s_[i];
    if (tok.empty()) fail("unrecognized value");
    const bool is_float = tok.find_first_of(".eE") != std::string::npos || tok == "inf" ||
                          tok == "+inf" || tok == "-inf" || tok == "nan";
    pos_ = end;
    if (!is_float) {
      std::int64_t i = 0;
      const char* first = tok.data() + (tok[0] == '+' ? 1 : 0);
      const auto r = std::from_chars(first, tok.data() + tok.size(), i);
      if (r.ec != std::errc() || r.ptr != tok.data() + tok.size()) fail("bad integer '" + tok + "'");
      return {i};
    }
    try {
      std::size_t used = 0;
      const double d = std::stod(tok, &used);
      if (used != tok.size()) fail("bad number '" + tok + "'");
      return {d};
    } catch (const std::logic_error&) {
      fail("bad number '" + tok + "'");
    }
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  int line_;
};

/// Strips a trailing comment that is not inside a string.
inline std::string strip_comment(const std::string& line) {
  bool in_str = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_str = !in_str;
    if (line[i] == '#' && !in_str) return line.substr(0, i);
  }
  return line;
}

}  // namespace detail

class Config {
 public:
  static Config parse(const std::string& text) {
    Config c;
    std::istringstream in(text);
    std::string raw, section;
    int line = 0;
    while (std::getline(in, raw)) {
      ++line;
      const std::string s = detail::trim(detail::strip_comment(raw));
      if (s.empty()) continue;
      if (s.front() == '[') {
        if (s.back() != ']' || s.size() < 3)
          throw ConfigError("config line " + std::to_string(line) + ": bad section header");
        section = detail::trim(std::string_view(s).substr(1, s.size() - 2));
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(line) + ": expected key = value");
      const std::string key = detail::trim(std::string_view(s).substr(0, eq));
      if (key.empty() || key.find_first_of(" \t\"") != std::string::npos)
        throw ConfigError("config line " + std::to_string(line) + ": bad key");
      const std::string full = section.empty() ? key : section + "." + key;
      if (c.values_.count(full))
        throw ConfigError("config line " + std::to_string(line) + ": duplicate key " + full);
      c.values_[full] = detail::ValueParser(std::string_view(s).substr(eq + 1), line).parse_all();
    }
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, ConfigValue v) { values_[key] = std::move(v); }

  std::int64_t get_int(const std::string& key, std::int64_t def) const {
    const ConfigValue* v = find(key);
    if (!v) return def;
    if (const auto* i = std::get_if<std::int64_t>(&v->v)) return *i;
    throw ConfigError(key + ": expected an integer");
  }
  double get_double(const std::string& key, double def) const {
    const ConfigValue* v = find(key);
    if (!v) return def;
    return as_double(key, *v);
  }
  bool get_bool(const std::string& key, bool def) const {
    const ConfigValue* v = find(key);
    if (!v) return def;
    if (const auto* b = std::get_if<bool>(&v->v)) return *b;
    throw ConfigError(key + ": expected true or false");
  }
  std::string get_string(const std::string& key, const std::string& def) const {
    const ConfigValue* v = find(key);
    if (!v) return def;
    if (const auto* s = std::get_if<std::string>(&v->v)) return *s;
    throw ConfigError(key + ": expected a string");
  }
  /// Scalars are accepted as one-element lists.
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& def) const {
    const ConfigValue* v = find(key);
    if (!v) return def;
    std::vector<double> out;
    if (const auto* a = std::get_if<ConfigValue::Array>(&v->v)) {
      for (const auto& e : *a) out.push_back(as_double(key, e));
    } else {
      out.push_back(as_double(key, *v));
    }
    return out;
  }
  std::vector<std::int64_t> get_ints(const std::string& key,
                                     const std::vector<std::int64_t>& def) const {
    const ConfigValue* v = find(key);
    if (!v) return def;
    std::vector<std::int64_t> out;
    auto one = [&](const ConfigValue& e) {
      if (const auto* i = std::get_if<std::int64_t>(&e.v)) return *i;
      throw ConfigError(key + ": expected integers");
    };
    if (const auto* a = std::get_if<ConfigValue::Array>(&v->v)) {
      for (const auto& e : *a) out.push_back(one(e));
    } else {
      out.push_back(one(*v));
    }
    return out;
  }
  std::vector<std::string> get_strings(const std::string& key,
                                       const std::vector<std::string>& def) const {
    const ConfigValue* v = find(key);
    if (!v) return def;
    std::vector<std::string> out;
    auto one = [&](const ConfigValue& e) {
      if (const auto* s = std::get_if<std::string>(&e.v)) return *s;
      throw ConfigError(key + ": expected strings");
    };
    if (const auto* a = std::get_if<ConfigValue::Array>(&v->v)) {
      for (const auto& e : *a) out.push_back(one(e));
    } else {
      out.push_back(one(*v));
    }
    return out;
  }

  /// Keys present in the document that no getter has read.
  std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) out.push_back(k);
    return out;
  }
  const std::map<std::string, ConfigValue>& values() const { return values_; }

 private:
  const ConfigValue* find(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return nullptr;
    used_.insert(key);
    return &it->second;
  }
  static double as_double(const std::string& key, const ConfigValue& v) {
    if (const auto* i = std::get_if<std::int64_t>(&v.v)) return static_cast<double>(*i);
    if (const auto* d = std::get_if<double>(&v.v)) return *d;
    throw ConfigError(key + ": expected a number");
  }

  std::map<std::string, ConfigValue> values_;
  mutable std::set<std::string> used_;
};

}  // namespace sbnd
