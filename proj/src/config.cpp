// Copyright 2026 The FedLeak Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fedleak/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fedleak/error.hpp"
#include "fedleak/hash.hpp"

namespace fedleak::config {
namespace {

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool IsIdentifier(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) return false;
  }
  return true;
}

std::optional<Type> ParseType(const std::string& s) {
  static const std::pair<const char*, Type> kTypes[] = {
      {"int", Type::kInt},        {"u64", Type::kU64},          {"float", Type::kFloat},
      {"bool", Type::kBool},      {"string", Type::kString},    {"int[]", Type::kIntList},
      {"float[]", Type::kFloatList}, {"string[]", Type::kStringList}};
  for (const auto& [name, t] : kTypes) {
    if (s == name) return t;
  }
  return std::nullopt;
}

std::vector<std::string> SplitList(const std::string& s) {
  std::vector<std::string> out;
  if (Trim(s).empty()) return out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(Trim(item));
  return out;
}

std::string Unquote(const std::string& s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  return s;
}

// Normalized text for a scalar, or nullopt when it does not parse.
std::optional<std::string> NormalizeScalar(Type t, const std::string& raw) {
  switch (t) {
    case Type::kInt: {
      std::int64_t v = 0;
      const auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
      if (ec != std::errc() || p != raw.data() + raw.size()) return std::nullopt;
      return std::to_string(v);
    }
    case Type::kU64: {
      std::uint64_t v = 0;
      const auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
      if (ec != std::errc() || p != raw.data() + raw.size()) return std::nullopt;
      return std::to_string(v);
    }
    case Type::kFloat: {
      double v = 0;
      const auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
      if (ec != std::errc() || p != raw.data() + raw.size() || !std::isfinite(v)) {
        return std::nullopt;
      }
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      return std::string(buf);
    }
    case Type::kBool:
      if (raw == "true" || raw == "false") return raw;
      return std::nullopt;
    case Type::kString:
      return Unquote(raw);
    default:
      return std::nullopt;
  }
}

Type ElementType(Type t) {
  switch (t) {
    case Type::kIntList:
      return Type::kInt;
    case Type::kFloatList:
      return Type::kFloat;
    case Type::kStringList:
      return Type::kString;
    default:
      return t;
  }
}

bool IsList(Type t) {
  return t == Type::kIntList || t == Type::kFloatList || t == Type::kStringList;
}

std::optional<std::string> Normalize(Type t, const std::string& raw) {
  if (!IsList(t)) return NormalizeScalar(t, raw);
  std::string out;
  for (const std::string& item : SplitList(raw)) {
    const auto v = NormalizeScalar(ElementType(t), item);
    if (!v) return std::nullopt;
    if (!out.empty()) out += ", ";
    out += *v;
  }
  return out;
}

template <typename T>
T ParseNumber(const std::string& s) {
  T v{};
  std::from_chars(s.data(), s.data() + s.size(), v);
  return v;
}

}  // namespace

std::string ToString(Type t) {
  switch (t) {
    case Type::kInt:
      return "int";
    case Type::kU64:
      return "u64";
    case Type::kFloat:
      return "float";
    case Type::kBool:
      return "bool";
    case Type::kString:
      return "string";
    case Type::kIntList:
      return "int[]";
    case Type::kFloatList:
      return "float[]";
    case Type::kStringList:
      return "string[]";
  }
  return "?";
}

Config Config::Parse(const std::string& text, const std::string& origin) {
  Config cfg;
  cfg.origin_ = origin;
  std::stringstream in(text);
  std::string section;
  int line_no = 0;
  auto fail = [&](const std::string& what) -> ConfigError {
    return ConfigError(origin + ":" + std::to_string(line_no) + ": " + what);
  };
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = Trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw fail("unterminated section header");
      section = Trim(line.substr(1, line.size() - 2));
      if (!IsIdentifier(section)) throw fail("bad section name '" + section + "'");
      continue;
    }
    if (section.empty()) throw fail("key outside of a section");
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw fail("expected 'key:type = value'");
    const std::string lhs = Trim(line.substr(0, eq));
    const auto colon = lhs.find(':');
    if (colon == std::string::npos) throw fail("missing type in '" + lhs + "'");
    const std::string key = Trim(lhs.substr(0, colon));
    if (!IsIdentifier(key)) throw fail("bad key '" + key + "'");
    const auto type = ParseType(Trim(lhs.substr(colon + 1)));
    if (!type) throw fail("unknown type '" + Trim(lhs.substr(colon + 1)) + "'");
    const auto value = Normalize(*type, Trim(line.substr(eq + 1)));
    if (!value) throw fail("value does not parse as " + ToString(*type));
    if (!cfg.entries_.emplace(std::make_pair(section, key), Value{*type, *value, line_no}).second) {
      throw fail("duplicate key " + section + "." + key);
    }
  }
  return cfg;
}

Config Config::Load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return Parse(ss.str(), path.string());
}

bool Config::Has(const std::string& section, const std::string& key) const {
  return entries_.count({section, key}) > 0;
}

const Value* Config::Find(const std::string& section, const std::string& key, Type want) const {
  const auto it = entries_.find({section, key});
  if (it == entries_.end()) return nullptr;
  if (it->second.type != want) {
    throw ConfigError(origin_ + ":" + std::to_string(it->second.line) + ": " + section + "." + key +
                      " must be " + ToString(want) + ", declared " + ToString(it->second.type));
  }
  return &it->second;
}

std::int64_t Config::Int(const std::string& s, const std::string& k, std::int64_t fallback) const {
  const Value* v = Find(s, k, Type::kInt);
  return v ? ParseNumber<std::int64_t>(v->text) : fallback;
}

std::uint64_t Config::U64(const std::string& s, const std::string& k,
                          std::uint64_t fallback) const {
  const Value* v = Find(s, k, Type::kU64);
  return v ? ParseNumber<std::uint64_t>(v->text) : fallback;
}

double Config::Float(const std::string& s, const std::string& k, double fallback) const {
  const Value* v = Find(s, k, Type::kFloat);
  return v ? ParseNumber<double>(v->text) : fallback;
}

bool Config::Bool(const std::string& s, const std::string& k, bool fallback) const {
  const Value* v = Find(s, k, Type::kBool);
  return v ? v->text == "true" : fallback;
}

std::string Config::String(const std::string& s, const std::string& k,
                           const std::string& fallback) const {
  const Value* v = Find(s, k, Type::kString);
  return v ? v->text : fallback;
}

std::vector<std::int64_t> Config::IntList(const std::string& s, const std::string& k,
                                          const std::vector<std::int64_t>& fallback) const {
  const Value* v = Find(s, k, Type::kIntList);
  if (!v) return fallback;
  std::vector<std::int64_t> out;
  for (const auto& item : SplitList(v->text)) out.push_back(ParseNumber<std::int64_t>(item));
  return out;
}

std::vector<double> Config::FloatList(const std::string& s, const std::string& k,
                                      const std::vector<double>& fallback) const {
  const Value* v = Find(s, k, Type::kFloatList);
  if (!v) return fallback;
  std::vector<double> out;
  for (const auto& item : SplitList(v->text)) out.push_back(ParseNumber<double>(item));
  return out;
}

std::vector<std::string> Config::StringList(const std::string& s, const std::string& k,
                                            const std::vector<std::string>& fallback) const {
  const Value* v = Find(s, k, Type::kStringList);
  return v ? SplitList(v->text) : fallback;
}

void Config::Set(const std::string& section, const std::string& key, Type type,
                 const std::string& text) {
  const auto value = Normalize(type, text);
  if (!value) throw ConfigError(section + "." + key + ": value does not parse as " + ToString(type));
  entries_[{section, key}] = Value{type, *value, 0};
}

void Config::Validate(const std::map<std::pair<std::string, std::string>, Type>& schema) const {
  for (const auto& [k, v] : entries_) {
    const auto it = schema.find(k);
    if (it == schema.end()) {
      throw ConfigError(origin_ + ":" + std::to_string(v.line) + ": unknown key " + k.first + "." +
                        k.second);
    }
    if (it->second != v.type) {
      throw ConfigError(origin_ + ":" + std::to_string(v.line) + ": " + k.first + "." + k.second +
                        " must be " + ToString(it->second) + ", declared " + ToString(v.type));
    }
  }
}

std::string Config::Canonical() const {
  std::string out;
  for (const auto& [k, v] : entries_) {
    out += k.first + "." + k.second + ":" + ToString(v.type) + " = " + v.text + "\n";
  }
  return out;
}

std::string Config::Hash() const { return Sha256Hex(Canonical()); }

}  // namespace fedleak::config
