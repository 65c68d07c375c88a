#pragma once

#include <map>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace fppg {

/// Line-based `key = value` configuration with `[section]` headers. `#` and
/// `;` start comments. Every lookup error names the source, line and key.
class IniConfig {
 public:
  static IniConfig parse(const std::string& text, const std::string& source = "<config>");
  static IniConfig load(const std::string& path);

  const std::string& source() const { return source_; }
  const std::vector<std::string>& sections() const { return order_; }
  bool has_section(const std::string& section) const { return data_.count(section) > 0; }
  bool has(const std::string& section, const std::string& key) const;
  std::vector<std::string> keys(const std::string& section) const;

  std::string get(const std::string& section, const std::string& key, const std::string& fallback) const;
  std::string require_string(const std::string& section, const std::string& key) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  long get_int(const std::string& section, const std::string& key, long fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::vector<double> get_list(const std::string& section, const std::string& key,
                               const std::vector<double>& fallback) const;
  /// "8x8x60"
  Dims get_dims(const std::string& section, const std::string& key, Dims fallback) const;

  /// Rejects keys outside `allowed` in `section`.
  void check_keys(const std::string& section, const std::vector<std::string>& allowed) const;

  [[noreturn]] void fail_at(const std::string& section, const std::string& key, const std::string& what) const;

 private:
  struct Entry {
    std::string value;
    int line = 0;
  };
  const Entry* find(const std::string& section, const std::string& key) const;

  std::string source_;
  std::vector<std::string> order_;
  std::map<std::string, std::vector<std::pair<std::string, Entry>>> data_;
};

}  // namespace fppg
