#pragma once

// Flat "key = value" configuration text. '#' starts a comment; blank lines
// are ignored. Typed getters throw ConfigError on malformed values, and
// check_all_used() rejects keys nobody asked for.

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>

namespace svit {

class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text);
  static KeyValueConfig load(const std::filesystem::path& path);

  bool has(std::string_view key) const;
  void set(std::string key, std::string value);

  std::string get_string(std::string_view key) const;
  std::string get_string(std::string_view key, std::string fallback) const;
  int get_int(std::string_view key, int fallback) const;
  std::uint64_t get_u64(std::string_view key, std::uint64_t fallback) const;
  double get_double(std::string_view key, double fallback) const;
  bool get_bool(std::string_view key, bool fallback) const;

  void check_all_used() const;
  // Sorted "key = value" lines.
  std::string serialize() const;

 private:
  const std::string* find(std::string_view key) const;

  std::map<std::string, std::string, std::less<>> values_;
  mutable std::set<std::string, std::less<>> used_;
};

}  // namespace svit
