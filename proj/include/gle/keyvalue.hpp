// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace gle {

/// Shortest text form that parses back to the identical double.
std::string format_double(double v);
double parse_double(const std::string& text, const std::string& what);
std::int64_t parse_int(const std::string& text, const std::string& what);

/// Flat `key = value` settings with optional `[section]` headers. Keys are
/// addressed as "section.key"; insertion order is preserved for output.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text, const std::string& source = "<text>");
  static KeyValues load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  bool contains(const std::string& key) const;
  std::optional<std::string> get(const std::string& key) const;
  std::string require(const std::string& key) const;

  std::string get_or(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;

  /// Merges other on top of this (other wins).
  void merge(const KeyValues& other);

  /// Serializes grouped by section, in first-insertion order.
  std::string to_string() const;

  const std::vector<std::string>& keys() const { return order_; }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

}  // namespace gle
