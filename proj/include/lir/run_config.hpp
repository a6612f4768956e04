#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lir/data.hpp"
#include "lir/error.hpp"
#include "lir/training.hpp"
#include "lir/vae.hpp"

namespace lir {

/// Thrown for malformed or unknown configuration entries; `line` is 1-based
/// (0 when the problem is not tied to a line).
class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, int line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

/// Effective settings of a run, parsed from a key=value file. Every key has a
/// default; unknown or repeated keys are rejected.
struct RunConfig {
  std::filesystem::path base_dir = ".";  // directory of the config file
  std::filesystem::path out_dir = "runs";
  std::vector<std::uint64_t> seeds = {0};

  TaskSpec task;
  TrainConfig train;  // train.rebo set iff objective is rebo
  std::vector<std::string> detectors = {"ebo", "msp", "layers", "bhl", "md", "knn", "vae"};
  bool include_logits = false;
  std::optional<std::size_t> knn_k;
  VaeConfig vae;

  /// Canonical key=value dump of the effective settings (sorted keys).
  std::string canonical() const;
  /// FNV-1a 64 of canonical(), hex encoded.
  std::string hash() const;

  std::filesystem::path seed_dir(std::uint64_t seed) const;
};

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = ".");
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace lir
