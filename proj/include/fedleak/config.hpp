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

#ifndef FEDLEAK_CONFIG_HPP_
#define FEDLEAK_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace fedleak::config {

// Sectioned key/value text with an explicit type on every key:
//
//   # comment
//   [train]
//   max_rounds:int = 20
//   lr:float = 0.01
//   attackable:int[] = 9, 10, 11
//
// Types: int, u64, float, bool, string, int[], float[], string[].
enum class Type { kInt, kU64, kFloat, kBool, kString, kIntList, kFloatList, kStringList };

std::string ToString(Type t);

struct Value {
  Type type = Type::kString;
  std::string text;  // normalized textual form
  int line = 0;
};

class Config {
 public:
  static Config Parse(const std::string& text, const std::string& origin = "<string>");
  static Config Load(const std::filesystem::path& path);

  bool Has(const std::string& section, const std::string& key) const;

  // Typed accessors; a stored type different from the requested one is a
  // ConfigError. The fallback is returned when the key is absent.
  std::int64_t Int(const std::string& section, const std::string& key, std::int64_t fallback) const;
  std::uint64_t U64(const std::string& section, const std::string& key, std::uint64_t fallback) const;
  double Float(const std::string& section, const std::string& key, double fallback) const;
  bool Bool(const std::string& section, const std::string& key, bool fallback) const;
  std::string String(const std::string& section, const std::string& key,
                     const std::string& fallback) const;
  std::vector<std::int64_t> IntList(const std::string& section, const std::string& key,
                                    const std::vector<std::int64_t>& fallback) const;
  std::vector<double> FloatList(const std::string& section, const std::string& key,
                                const std::vector<double>& fallback) const;
  std::vector<std::string> StringList(const std::string& section, const std::string& key,
                                      const std::vector<std::string>& fallback) const;

  void Set(const std::string& section, const std::string& key, Type type, const std::string& text);

  // Rejects keys absent from `schema` and keys declared with another type.
  void Validate(const std::map<std::pair<std::string, std::string>, Type>& schema) const;

  // One line per key, sorted by section then key.
  std::string Canonical() const;
  // SHA-256 of Canonical(), hex.
  std::string Hash() const;

  const std::map<std::pair<std::string, std::string>, Value>& entries() const { return entries_; }

 private:
  const Value* Find(const std::string& section, const std::string& key, Type want) const;

  std::string origin_;
  std::map<std::pair<std::string, std::string>, Value> entries_;
};

}  // namespace fedleak::config

#endif  // FEDLEAK_CONFIG_HPP_
