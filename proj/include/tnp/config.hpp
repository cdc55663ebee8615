#pragma once

// Plain-text key=value configuration.
//
//   # comment
//   model.variant = D
//   train.steps = 20000
//
// Later assignments override earlier ones. Keys are kept sorted so that the
// serialized text (and its hash) does not depend on assignment order.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace tnp {

class KeyValues {
 public:
  KeyValues() = default;

  // Throws ConfigError naming the offending line.
  static KeyValues parse(std::string_view text);
  // Throws ConfigError naming the path if it cannot be read.
  static KeyValues load(const std::filesystem::path& path);

  void set(std::string key, std::string value);
  // "key=value"; throws ConfigError if there is no '='.
  void set_assignment(std::string_view assignment);
  void merge(const KeyValues& other);

  bool contains(std::string_view key) const;
  std::string get_string(std::string_view key, std::string_view fallback) const;
  std::string require_string(std::string_view key) const;
  long long get_int(std::string_view key, long long fallback) const;
  double get_double(std::string_view key, double fallback) const;
  bool get_bool(std::string_view key, bool fallback) const;
  std::uint64_t get_u64(std::string_view key, std::uint64_t fallback) const;

  // Entries whose key starts with prefix, with the prefix kept.
  KeyValues with_prefix(std::string_view prefix) const;

  std::string serialize() const;
  // FNV-1a 64 over the serialized text, as 16 hex digits.
  std::string content_hash() const;

  const std::map<std::string, std::string, std::less<>>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

 private:
  std::map<std::string, std::string, std::less<>> entries_;
};

std::string format_double(double v);

}  // namespace tnp
