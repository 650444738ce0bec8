#pragma once

// Experiment plans read from a JSON configuration document.

#include <cstddef>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "brwire/model.hpp"

namespace brwire {

struct AuditSpec {
  double alpha = 1.0;
  double epsilon = 1.0;
  double p = 4.0;
  double a = std::numeric_limits<double>::infinity();
  std::size_t oracle_draws = 1'000'000;
};

struct NonuniformSpec {
  double lambda = 1.0;
  double x_cap = 3.0;
};

struct ExactRateSpec {
  std::vector<double> x_grid{-1.0, 0.0, 1.0};
  double beta = 0.05;
  double resolution = 0.05;
  /// Generation used for E log W; 0 means the largest horizon.
  int log_W_horizon = 0;
  double log_W_abs_tol = 1e-6;
};

struct IncrementSpec {
  double alpha = 1.0;
  std::vector<double> thresholds{0.01, 0.1};
  /// Increments W_{2n} - W_n are taken at each listed n.
  std::vector<int> n{2, 3, 4, 5, 6, 7, 8, 9, 10};
};

struct EnvWalkSpec {
  std::vector<double> x_grid{-1.0, 0.0, 1.0};
  /// 0 means the scenario's replicate count.
  std::size_t replicates = 0;
  double beta = 0.05;
  double resolution = 0.05;
};

struct AnalysisSet {
  std::optional<AuditSpec> audit;
  bool clt = false;
  bool uniform_be = false;
  std::optional<NonuniformSpec> nonuniform_be;
  std::optional<ExactRateSpec> exact_rate;
  std::optional<IncrementSpec> w_increments;
  std::optional<EnvWalkSpec> env_walk_baseline;

  bool empty() const noexcept;
  /// Any analysis that needs particle replicates.
  bool needs_replicates() const noexcept;
};

struct OutputSpec {
  std::filesystem::path dir = "out";
  std::size_t workers = 1;
  /// Also write the per-replicate records CSV.
  bool records = false;
  /// Abort fraction above which results are flagged and the run exits 4.
  double max_abort_fraction = 0.001;
};

struct ExperimentPlan {
  Scenario scenario;
  AnalysisSet analyses;
  OutputSpec output;
  /// The configuration document exactly as read.
  std::string config_text;
};

/// Parses a configuration document. Throws ConfigError naming the JSON path
/// of the offending field, or the line and column of a syntax error.
ExperimentPlan parse_plan(std::string_view text);
/// Reads and parses a file; throws IoError when it cannot be read.
ExperimentPlan load_plan(const std::filesystem::path& path);

}  // namespace brwire
