#pragma once

// Run configuration: a flat TOML-style document of `[section]` headers and
// `key = value` lines, layered as defaults < file < command-line overrides.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ebm/error.hpp"

namespace ebm {

class RunConfig {
 public:
  // Every known key with its default value.
  static RunConfig defaults();

  // Parses `text`; every key must already exist (typos are config errors).
  void merge_text(const std::string& text, const std::string& origin);
  void merge_file(const std::filesystem::path& path);
  // "section.key=value".
  void apply_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& raw(const std::string& key) const;
  std::string str(const std::string& key) const;
  double real(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  std::size_t count(const std::string& key) const;  // non-negative integer
  std::uint64_t seed(const std::string& key) const;
  bool boolean(const std::string& key) const;
  std::vector<std::string> list(const std::string& key, char separator = ',') const;

  // Canonical document grouped by section; parsing it reproduces this config.
  std::string dump() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace ebm
