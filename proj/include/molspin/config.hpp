#pragma once

// INI-style run configuration with explicit units in key names, environment
// overrides, and a record of every value read (defaults included).

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "molspin/error.hpp"

namespace molspin::cfg {

// A required key is absent from both the file and the environment.
class MissingKey : public InvalidArgument {
 public:
  MissingKey(const std::string& section, const std::string& key)
      : InvalidArgument("missing required config key [" + section + "] " + key), section_(section), key_(key) {}
  const std::string& section() const { return section_; }
  const std::string& key() const { return key_; }

 private:
  std::string section_, key_;
};

// A value that does not parse as the requested type.
class BadValue : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

// Environment variable name for a key: MOLSPIN_<SECTION>_<KEY>, upper-cased,
// with '-' and '.' mapped to '_'.
std::string env_name(const std::string& section, const std::string& key);

EnvLookup process_env();

class Config {
 public:
  Config() = default;
  static Config from_file(const std::filesystem::path& path, EnvLookup env = process_env());
  static Config from_string(const std::string& text, EnvLookup env = process_env(), std::string source = "<string>");

  bool has(const std::string& section, const std::string& key) const;
  bool has_section(const std::string& section) const;

  std::string get_string(const std::string& section, const std::string& key,
                         std::optional<std::string> fallback = {}) const;
  double get_double(const std::string& section, const std::string& key, std::optional<double> fallback = {}) const;
  long get_long(const std::string& section, const std::string& key, std::optional<long> fallback = {}) const;
  std::uint64_t get_u64(const std::string& section, const std::string& key,
                        std::optional<std::uint64_t> fallback = {}) const;
  bool get_bool(const std::string& section, const std::string& key, std::optional<bool> fallback = {}) const;
  // Comma-separated numbers.
  std::vector<double> get_list(const std::string& section, const std::string& key,
                               std::optional<std::vector<double>> fallback = {}) const;

  // Every value read so far, keyed "section.key", in the form it was read.
  const std::map<std::string, std::string>& effective() const { return effective_; }
  // Keys present in the file that were never read.
  std::vector<std::string> unused_keys() const;
  // "section.key = value" lines of the effective set, sorted.
  std::string canonical() const;
  std::uint64_t hash() const;

  const std::filesystem::path& directory() const { return directory_; }
  const std::string& source() const { return source_; }

 private:
  std::optional<std::string> raw(const std::string& section, const std::string& key) const;
  void record(const std::string& section, const std::string& key, const std::string& value) const;

  std::map<std::string, std::map<std::string, std::string>> values_;
  EnvLookup env_;
  std::string source_;
  std::filesystem::path directory_;
  mutable std::map<std::string, std::string> effective_;
};

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view data);

}  // namespace molspin::cfg
