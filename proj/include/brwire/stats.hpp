#pragma once

// Empirical laws built from replicate trajectories, and the distance and
// rate statistics evaluated on them.

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "json.hpp"

#include "brwire/engine.hpp"
#include "brwire/theory.hpp"

namespace brwire {

/// Sorted sample of a standardized statistic at generation n.
class EmpiricalLaw {
 public:
  EmpiricalLaw(std::vector<double> sample, int n);

  std::span<const double> sorted_sample() const noexcept { return sample_; }
  std::size_t size() const noexcept { return sample_.size(); }
  int n() const noexcept { return n_; }

  /// F(x) = #{x_i <= x} / M
  double cdf(double x) const;

 private:
  std::vector<double> sample_;
  int n_;
};

/// Least-squares line; for rate fits the points are (log n, log D_n).
struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::vector<std::pair<double, double>> points;
};

/// Least-squares line through (x, y); needs at least 3 points. A constant
/// y gives r_squared = 1.
RateFit fit_line(std::vector<std::pair<double, double>> points);

/// x_i = (log_Z_i - n mu) / (sqrt(n) sigma), sorted.
EmpiricalLaw standardize(std::span<const TrajectoryRecord> records, double mu, double sigma);
/// Same for a plain sample of centred values (e.g. S_n).
EmpiricalLaw standardize_values(std::span<const double> centred, int n, double sigma);

/// sup_x |F(x) - Phi(x)|, evaluated at both sides of every jump.
double ks_distance(const EmpiricalLaw& emp);

/// sup over jump points with |x| <= x_cap of (1 + |x|)^lambda |F(x+-) - Phi(x)|.
double weighted_distance(const EmpiricalLaw& emp, double lambda, double x_cap);

/// Fit of log D_n on log n; needs >= 3 points, strictly increasing n, D_n > 0.
RateFit rate_fit(std::span<const std::pair<double, double>> pairs);

/// sqrt(log(2 / beta) / (2 M))
double dkw_budget(std::size_t M, double beta);

struct ProfilePoint {
  double x = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;
  double uncertainty = 0.0;
};

/// lhs = sqrt(n) (F(x) - Phi(x)); rhs = -phi(x) E log W / sigma + Q(x).
/// Throws ResolutionTooCoarse when sqrt(n) * dkw_budget(M, beta) exceeds
/// `resolution`.
std::vector<ProfilePoint> exact_rate_profile(const EmpiricalLaw& emp,
                                             const TheoryConstants& constants,
                                             std::span<const double> x_grid, double beta = 0.05,
                                             double resolution = 0.05);

struct IncrementDiagnostics {
  int n = 0;
  int l = 0;
  /// mean |W_l - W_n|^alpha
  double moment = 0.0;
  /// P(|W_l / W_n - 1| > x) per threshold.
  std::vector<std::pair<double, double>> tails;
};

/// Pairs (log W_n, log W_l) must come from the same replicate paths.
IncrementDiagnostics w_increment_diagnostics(std::span<const std::pair<double, double>> log_W_pairs,
                                             int n, int l, double alpha,
                                             std::span<const double> thresholds);

/// Regresses log moment on n; slope estimates log rho.
RateFit increment_rate_fit(std::span<const IncrementDiagnostics> diagnostics);

// ---------------------------------------------------------------------------
// Helpers over replicate outcomes

/// Records at generation n from every non-aborted outcome, in replicate order.
std::vector<TrajectoryRecord> records_at(std::span<const ReplicateOutcome> outcomes, int n);
std::size_t aborted_count(std::span<const ReplicateOutcome> outcomes);

nlohmann::json to_json(const RateFit& fit);

}  // namespace brwire
