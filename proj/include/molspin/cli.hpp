#pragma once

// Batch front-end: recipes driven by a config file, writing CSV data, JSON
// fit reports and a run manifest into an output directory.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "molspin/config.hpp"
#include "molspin/photophysics.hpp"

namespace molspin::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kConfigError = 2,   // missing key or unparsable value
  kInvalid = 3,       // parameters violate an invariant
  kNumerical = 4,     // module raised NumericalError
  kRuntimeError = 5,  // I/O and anything else
};

struct ModelConfig {
  photo::PhotophysicsParams params;
  std::vector<std::string> violations;
};

// Reads [zfs], [rates], [optics], [mw] and [coherence]. Invariant
// violations are collected rather than thrown; MissingKey and BadValue
// propagate.
ModelConfig load_model(const cfg::Config& c);

const std::vector<std::string>& recipe_names();
bool is_recipe(const std::string& name);

struct RunManifest {
  std::string recipe;
  std::string config_source;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::string version = kVersion;
  std::string started_utc;
  std::string finished_utc;
  std::vector<std::string> outputs;  // relative to the output directory

  nlohmann::json to_json() const;
};

// Runs one recipe. Throws InvalidArgument (listing every violation) before
// any work if the model or recipe settings are invalid.
RunManifest run_recipe(const std::string& recipe, const cfg::Config& c, const std::filesystem::path& out_dir,
                       std::uint64_t seed);

struct ValidationReport {
  std::vector<std::string> violations;
  std::vector<std::string> effective;  // "section.key = value"
  bool ok() const { return violations.empty(); }
};

// Parses the model and the settings of every recipe whose section appears in
// the file, without running anything.
ValidationReport validate(const cfg::Config& c);

std::string recipes_help();

// Full command line entry point; returns the process exit code.
int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace molspin::cli
