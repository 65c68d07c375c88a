#include "config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace fppg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_number(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

}  // namespace

IniConfig IniConfig::parse(const std::string& text, const std::string& source) {
  IniConfig cfg;
  cfg.source_ = source;
  std::istringstream in(text);
  std::string raw, section;
  int line = 0;
  auto err = [&](const std::string& what) { fail(ErrorCode::Config, source + ":" + std::to_string(line) + ": " + what); };
  while (std::getline(in, raw)) {
    ++line;
    std::string s = raw;
    const auto c = s.find_first_of("#;");
    if (c != std::string::npos) s = s.substr(0, c);
    s = trim(s);
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') err("unterminated section header '" + s + "'");
      section = trim(s.substr(1, s.size() - 2));
      if (section.empty()) err("empty section name");
      if (cfg.data_.count(section)) err("duplicate section [" + section + "]");
      cfg.data_[section];
      cfg.order_.push_back(section);
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) err("expected 'key = value', got '" + s + "'");
    if (section.empty()) err("key outside of any [section]");
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    if (key.empty()) err("empty key");
    auto& entries = cfg.data_[section];
    for (const auto& kv : entries)
      if (kv.first == key) err("duplicate key '" + key + "' in [" + section + "]");
    entries.push_back({key, Entry{value, line}});
  }
  return cfg;
}

IniConfig IniConfig::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::Config, "cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str(), path);
}

const IniConfig::Entry* IniConfig::find(const std::string& section, const std::string& key) const {
  auto it = data_.find(section);
  if (it == data_.end()) return nullptr;
  for (const auto& kv : it->second)
    if (kv.first == key) return &kv.second;
  return nullptr;
}

bool IniConfig::has(const std::string& section, const std::string& key) const { return find(section, key) != nullptr; }

std::vector<std::string> IniConfig::keys(const std::string& section) const {
  std::vector<std::string> out;
  auto it = data_.find(section);
  if (it != data_.end())
    for (const auto& kv : it->second) out.push_back(kv.first);
  return out;
}

void IniConfig::fail_at(const std::string& section, const std::string& key, const std::string& what) const {
  const Entry* e = find(section, key);
  const std::string where = e ? source_ + ":" + std::to_string(e->line) : source_;
  fail(ErrorCode::Config, where + ": [" + section + "] " + key + ": " + what);
}

std::string IniConfig::get(const std::string& section, const std::string& key, const std::string& fallback) const {
  const Entry* e = find(section, key);
  return e ? e->value : fallback;
}

std::string IniConfig::require_string(const std::string& section, const std::string& key) const {
  const Entry* e = find(section, key);
  if (!e) fail(ErrorCode::Config, source_ + ": [" + section + "] is missing required key '" + key + "'");
  return e->value;
}

double IniConfig::get_double(const std::string& section, const std::string& key, double fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  double v = 0.0;
  if (!parse_number(e->value, v)) fail_at(section, key, "expected a number, got '" + e->value + "'");
  return v;
}

long IniConfig::get_int(const std::string& section, const std::string& key, long fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  long v = 0;
  auto [p, ec] = std::from_chars(e->value.data(), e->value.data() + e->value.size(), v);
  if (ec != std::errc() || p != e->value.data() + e->value.size())
    fail_at(section, key, "expected an integer, got '" + e->value + "'");
  return v;
}

bool IniConfig::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  std::string v = e->value;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
  if (v == "false" || v == "no" || v == "off" || v == "0") return false;
  fail_at(section, key, "expected true/false, got '" + e->value + "'");
}

std::vector<double> IniConfig::get_list(const std::string& section, const std::string& key,
                                        const std::vector<double>& fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  std::vector<double> out;
  std::stringstream ss(e->value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    double v = 0.0;
    if (!parse_number(item, v)) fail_at(section, key, "bad list entry '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) fail_at(section, key, "empty list");
  return out;
}

Dims IniConfig::get_dims(const std::string& section, const std::string& key, Dims fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  std::size_t v[3] = {0, 0, 0};
  std::stringstream ss(e->value);
  std::string item;
  int n = 0;
  while (std::getline(ss, item, 'x')) {
    item = trim(item);
    if (n >= 3) fail_at(section, key, "expected RxCxT, got '" + e->value + "'");
    auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v[n]);
    if (ec != std::errc() || p != item.data() + item.size() || v[n] == 0)
      fail_at(section, key, "expected RxCxT with positive sizes, got '" + e->value + "'");
    ++n;
  }
  if (n != 3) fail_at(section, key, "expected RxCxT, got '" + e->value + "'");
  return {v[0], v[1], v[2]};
}

void IniConfig::check_keys(const std::string& section, const std::vector<std::string>& allowed) const {
  auto it = data_.find(section);
  if (it == data_.end()) return;
  for (const auto& kv : it->second)
    if (std::find(allowed.begin(), allowed.end(), kv.first) == allowed.end())
      fail(ErrorCode::Config,
           source_ + ":" + std::to_string(kv.second.line) + ": unknown key '" + kv.first + "' in [" + section + "]");
}

}  // namespace fppg
