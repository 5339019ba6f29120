#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "bvio/engine.hpp"
#include "bvio/sim.hpp"

namespace bvio {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input of the `simulate` subcommand.
struct SimConfig {
  TrajectorySpec spec;
  SensorRig rig;
  int landmark_count = 3000;
  std::uint64_t seed = 1;
};

/// Throws ConfigError on syntax errors, unknown keys, wrong types or invalid
/// values.
SimConfig parse_sim_config(std::string_view toml_text);
SimConfig load_sim_config(const std::filesystem::path& path);

struct RunPaths {
  std::filesystem::path sensor_log;
  std::filesystem::path ground_truth;
  std::filesystem::path rig;
  std::filesystem::path output_dir;
};

struct RunConfig {
  RunPaths paths;
  EngineConfig engine;
  /// Error injected into the initial Rbc as a rotation about the body x axis.
  double roll_error_deg = 0.0;
  bool include_prior = false;
  int obsv_every = 1;
  std::uint64_t seed = 1;
  /// Raw config text, hashed into the run manifest.
  std::string source_text;

  void validate() const;
};

/// Relative paths are resolved against `base_dir`.
RunConfig parse_run_config(std::string_view toml_text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

/// FNV-1a 64-bit hash, printed as 16 hex digits.
std::string content_hash(std::string_view text);

}  // namespace bvio
