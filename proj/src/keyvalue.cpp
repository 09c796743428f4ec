// SPDX-License-Identifier: Apache-2.0
#include "gle/keyvalue.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "gle/error.hpp"

namespace gle {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) fail(ErrorKind::format, "cannot format double");
  return std::string(buf, end);
}

double parse_double(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  double v = 0.0;
  auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || end != t.data() + t.size() || t.empty()) {
    fail(ErrorKind::format, what + ": expected a number, got '" + text + "'");
  }
  return v;
}

std::int64_t parse_int(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  std::int64_t v = 0;
  auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || end != t.data() + t.size() || t.empty()) {
    fail(ErrorKind::format, what + ": expected an integer, got '" + text + "'");
  }
  return v;
}

KeyValues KeyValues::parse(const std::string& text, const std::string& source) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        fail(ErrorKind::format, source + ":" + std::to_string(lineno) + ": unterminated section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::format, source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) fail(ErrorKind::format, source + ":" + std::to_string(lineno) + ": empty key");
    kv.set(section.empty() ? key : section + "." + key, trim(line.substr(eq + 1)));
  }
  return kv;
}

KeyValues KeyValues::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

void KeyValues::set(const std::string& key, const std::string& value) {
  if (!values_.contains(key)) order_.push_back(key);
  values_[key] = value;
}

bool KeyValues::contains(const std::string& key) const { return values_.contains(key); }

std::optional<std::string> KeyValues::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string KeyValues::require(const std::string& key) const {
  auto v = get(key);
  if (!v) fail(ErrorKind::config, "missing required setting '" + key + "'");
  return *v;
}

std::string KeyValues::get_or(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

double KeyValues::get_double(const std::string& key, double fallback) const {
  auto v = get(key);
  return v ? parse_double(*v, key) : fallback;
}

std::int64_t KeyValues::get_int(const std::string& key, std::int64_t fallback) const {
  auto v = get(key);
  return v ? parse_int(*v, key) : fallback;
}

void KeyValues::merge(const KeyValues& other) {
  for (const auto& k : other.order_) set(k, other.values_.at(k));
}

std::string KeyValues::to_string() const {
  // Group by section while keeping first-seen order of sections and keys.
  std::vector<std::string> sections;
  std::map<std::string, std::vector<std::string>> members;
  for (const auto& k : order_) {
    const auto dot = k.find('.');
    const std::string sec = dot == std::string::npos ? "" : k.substr(0, dot);
    if (!members.contains(sec)) sections.push_back(sec);
    members[sec].push_back(k);
  }
  // Unsectioned keys must precede any header to parse back the same way.
  std::stable_partition(sections.begin(), sections.end(),
                        [](const std::string& s) { return s.empty(); });
  std::ostringstream os;
  bool first = true;
  for (const auto& sec : sections) {
    if (!sec.empty()) {
      if (!first) os << '\n';
      os << '[' << sec << "]\n";
    }
    for (const auto& k : members[sec]) {
      const std::string name = sec.empty() ? k : k.substr(sec.size() + 1);
      os << name << " = " << values_.at(k) << '\n';
    }
    first = false;
  }
  return os.str();
}

}  // namespace gle
