#pragma once

// Runs an experiment plan end to end and writes its outputs.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "brwire/config.hpp"

namespace brwire {

inline constexpr std::string_view kVersion = "0.1.0";

/// Command-line values that take precedence over the config document.
struct RunOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> replicates;
  std::optional<std::filesystem::path> out;
  std::optional<std::size_t> workers;
};

void apply_overrides(ExperimentPlan& plan, const RunOverrides& overrides);

struct RunManifest {
  /// SHA-256 of the config document bytes, lowercase hex.
  std::string config_digest;
  std::uint64_t master_seed = 0;
  std::string version{kVersion};
  /// Files written per analysis, relative to the output directory.
  std::map<std::string, std::vector<std::string>> outputs;
  double wall_clock_seconds = 0.0;
  std::size_t replicates_run = 0;
  std::size_t replicates_aborted = 0;
  /// "verified", "unverified" or "not-audited".
  std::string hypotheses = "not-audited";
  std::vector<std::string> warnings;
  /// Statistical gates that refused to produce a result (e.g. DKW resolution).
  std::vector<std::string> gate_failures;
  bool abort_rate_exceeded = false;

  nlohmann::json to_json() const;
};

/// Executes every requested analysis (audit first) and writes the outputs
/// and manifest.json into plan.output.dir. Each file is written to a
/// temporary name and renamed into place. Outputs depend only on the plan.
RunManifest run(const ExperimentPlan& plan);

std::string sha256_hex(std::string_view bytes);

/// Writes `contents` to a sibling temporary file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace brwire
