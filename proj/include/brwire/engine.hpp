#pragma once

// Generation-by-generation simulation of the branching random walk with
// immigration in a random environment. Partition quantities are kept in
// log-space throughout.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "brwire/errors.hpp"
#include "brwire/model.hpp"
#include "brwire/rng.hpp"

namespace brwire {

/// Streaming, max-shifted log-sum-exp.
class LogSumExp {
 public:
  void add(double x) noexcept {
    if (x == -std::numeric_limits<double>::infinity()) return;
    if (x <= max_) {
      sum_ += std::exp(x - max_);
    } else {
      sum_ = sum_ * std::exp(max_ - x) + 1.0;
      max_ = x;
    }
  }
  bool empty() const noexcept { return sum_ == 0.0; }
  /// -inf when nothing was added.
  double value() const noexcept {
    return empty() ? -std::numeric_limits<double>::infinity() : max_ + std::log(sum_);
  }

 private:
  double max_ = -std::numeric_limits<double>::infinity();
  double sum_ = 0.0;
};

/// join_generation == 0 marks the initial line; otherwise the particle
/// descends from immigrant `immigrant_index` (1-based) that joined
/// generation `join_generation`.
struct LineageTag {
  std::int32_t join_generation = 0;
  std::int32_t immigrant_index = 0;
  /// Dense index of the immigrant line in the ledger, -1 for the initial line.
  std::int32_t line = -1;

  bool initial() const noexcept { return join_generation == 0; }
  friend bool operator==(const LineageTag&, const LineageTag&) = default;
};

/// The living population of one generation. Descendants of the initial
/// particle always occupy the prefix [0, initial_count()).
class GenerationState {
 public:
  /// Generation 0: the initial particle at the origin.
  explicit GenerationState(int dim, bool track_lineage = false);

  int dim() const noexcept { return dim_; }
  int generation() const noexcept { return n_; }
  std::size_t size() const noexcept { return coords_.size() / static_cast<std::size_t>(dim_); }
  std::size_t initial_count() const noexcept { return initial_count_; }
  bool tracks_lineage() const noexcept { return track_lineage_; }

  /// d x size() view of the positions.
  Eigen::Map<const Eigen::MatrixXd> positions() const {
    return {coords_.data(), dim_, static_cast<Eigen::Index>(size())};
  }
  std::span<const double> position(std::size_t i) const {
    return {coords_.data() + i * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_)};
  }
  /// Empty unless lineage is tracked.
  std::span<const LineageTag> lineage() const noexcept { return lineage_; }
  std::int32_t line_count() const noexcept { return line_count_; }

  /// t.S_u for every particle.
  Eigen::VectorXd scores(const Vector& t) const;

 private:
  friend void step_into(const GenerationState&, const EnvState&, const ReplicateStreams&,
                        std::size_t, GenerationState&);

  int dim_;
  int n_ = 0;
  bool track_lineage_;
  std::size_t initial_count_ = 1;
  std::int32_t line_count_ = 0;
  std::vector<double> coords_;
  std::vector<LineageTag> lineage_;
};

/// Replaces every particle by its offspring and appends this generation's
/// immigrants. Particle u of generation n draws from
/// streams.particle(n, u); immigrants from streams.immigration(n).
/// Throws CapExceeded when the new generation would exceed `population_cap`.
void step_into(const GenerationState& gen, const EnvState& state, const ReplicateStreams& streams,
               std::size_t population_cap, GenerationState& next);
GenerationState step(const GenerationState& gen, const EnvState& state,
                     const ReplicateStreams& streams, std::size_t population_cap);

struct AllParticles {};
struct InitialOnly {};
struct ImmigrantLine {
  int join_generation;
  int immigrant_index;
};
using PartitionFilter = std::variant<AllParticles, InitialOnly, ImmigrantLine>;

/// log sum_{u in filter} e^{t.S_u}. Throws EmptySelection when nothing
/// matches.
double log_partition(const GenerationState& gen, const Vector& t,
                     const PartitionFilter& filter = AllParticles{});

struct TrajectoryRecord {
  int n = 0;
  double log_Z = 0.0;
  double log_Zbar = 0.0;
  double log_Pi = 0.0;
  /// log_Pi - n * mu
  double S = 0.0;
  double log_W = 0.0;
  double log_Wbar = 0.0;
  std::size_t pop = 0;
};

/// Per immigrant line: its initial score and the log of its subtree
/// partition sum (absolute positions) at every later generation.
class ImmigrantLineLedger {
 public:
  struct Line {
    int join_generation;
    int immigrant_index;
    double score;
    /// Entry k - join_generation holds log sum_{v in subtree, |v| = k} e^{t.S_v}.
    std::vector<double> log_numerator;
  };

  const std::vector<Line>& lines() const noexcept { return lines_; }
  /// log Pi_k(t) for k = 0, 1, ..., last recorded generation.
  const std::vector<double>& log_Pi() const noexcept { return log_Pi_; }
  int last_generation() const noexcept { return static_cast<int>(log_Pi_.size()) - 1; }

  /// Appends the generation currently held by `gen`.
  void record(const GenerationState& gen, const Vector& t, double log_Pi);

 private:
  std::vector<Line> lines_;
  std::vector<double> log_Pi_;
};

/// Scenario plus the per-state constants the simulation needs.
struct PreparedScenario {
  explicit PreparedScenario(Scenario scenario);

  Scenario scenario;
  std::vector<double> log_m;
  double mu;
};

struct SimulationOptions {
  bool track_lineage = false;
  /// Horizons to record; empty means scenario.horizons.
  std::vector<int> horizons;
};

struct Trajectory {
  std::uint64_t replicate = 0;
  /// Environment state indices xi_0, xi_1, ... up to the last horizon.
  std::vector<std::uint16_t> environment;
  std::vector<TrajectoryRecord> records;
  std::optional<ImmigrantLineLedger> ledger;

  /// Labels xi_0 .. xi_{n-1} of the environment seen by `record`.
  std::vector<std::string> env_labels(const EnvironmentLaw& env,
                                      const TrajectoryRecord& record) const;
};

/// One replicate; every stream is keyed by (master_seed, replicate_index).
/// Throws CapExceeded carrying the replicate index.
Trajectory simulate_replicate(const PreparedScenario& prepared, std::uint64_t replicate_index,
                              const SimulationOptions& options = {});
Trajectory simulate_replicate(const Scenario& scenario, std::uint64_t replicate_index,
                              const SimulationOptions& options = {});

/// |W_k - (Wbar_k + sum_{j,i} Pi_j^{-1} e^{t.S_{0_{j-1}i}} Wbar^{(0_{j-1}i)}_{k-j})| / W_k.
double decomposition_residual(const ImmigrantLineLedger& ledger, const TrajectoryRecord& record,
                              int k);

/// S_n at each horizon from the environment alone (same environment streams
/// as simulate_replicate, so both see the same xi path).
std::vector<std::pair<int, double>> simulate_env_walk(const PreparedScenario& prepared,
                                                      std::uint64_t replicate_index,
                                                      const std::vector<int>& horizons = {});

// ---------------------------------------------------------------------------
// Parallel replicate runs

struct ReplicateOutcome {
  std::uint64_t replicate = 0;
  std::vector<TrajectoryRecord> records;
  /// Set when the replicate was aborted.
  std::optional<CapExceeded> abort;
};

/// Runs replicates [first, first + count) on `workers` threads; the result
/// is indexed by replicate - first and does not depend on `workers`.
std::vector<ReplicateOutcome> run_replicates(const PreparedScenario& prepared,
                                             std::size_t workers, std::uint64_t first,
                                             std::size_t count,
                                             const SimulationOptions& options = {});
std::vector<ReplicateOutcome> run_replicates(const PreparedScenario& prepared,
                                             std::size_t workers,
                                             const SimulationOptions& options = {});

/// S_n of replicates [0, count) at each horizon; result[h][r].
std::vector<std::vector<double>> run_env_walks(const PreparedScenario& prepared,
                                               std::size_t workers, std::size_t count,
                                               const std::vector<int>& horizons);

/// Runs fn(i) for i in [0, count) on up to `workers` threads.
void parallel_for(std::size_t count, std::size_t workers,
                  const std::function<void(std::size_t)>& fn);

/// Records CSV: replicate,n,log_Z,log_Zbar,log_Pi,S,log_W,log_Wbar,pop,status
void write_records_csv(std::ostream& out, const std::vector<ReplicateOutcome>& outcomes);

/// Shortest round-trip decimal form of a double.
std::string format_double(double x);

}  // namespace brwire
