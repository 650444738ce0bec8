#pragma once

// Closed-form constants of the model, hypothesis audit, the lambda_0
// calculator, and normal-law primitives.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "brwire/engine.hpp"
#include "brwire/model.hpp"

namespace brwire {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Normal law

double normal_cdf(double x);
double normal_pdf(double x);
/// mu3 (1 - x^2) phi(x) / (6 sigma^3); throws InvalidParameter for sigma <= 0.
double edgeworth_Q(double x, double mu3, double sigma);

// ---------------------------------------------------------------------------
// Environment constants

enum class Provenance { closed_form, estimated };

struct EnvConstants {
  double mu = 0.0;
  double sigma = 0.0;
  double mu3 = 0.0;
  Provenance provenance = Provenance::closed_form;
  /// Standard errors when estimated (zero for closed forms).
  double mu_se = 0.0;
  double sigma_se = 0.0;
  double mu3_se = 0.0;
};

/// Exact finite-mixture moments of log m_0(t). States with custom samplers
/// go through the Monte Carlo oracle and the result is marked estimated.
EnvConstants env_constants(const EnvironmentLaw& env, const Vector& t,
                           std::size_t oracle_draws = 1'000'000, std::uint64_t oracle_seed = 0);

struct LogWEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  std::size_t n_used = 0;
  /// Replicates contributing (aborted ones excluded).
  std::size_t samples = 0;
  /// Estimate at n_used / 2 and whether the two agree.
  double half_estimate = 0.0;
  double half_std_error = 0.0;
  bool stabilized = false;
};

struct TheoryConstants {
  double mu = 0.0;
  double sigma = 0.0;
  double mu3 = 0.0;
  /// min{a - 2, 1} for the declared moment order a.
  double delta = 1.0;
  double a_star = kInfinity;
  LogWEstimate E_log_W;
  Provenance env_provenance = Provenance::closed_form;
};

/// delta = min{a - 2, 1}; requires a > 2.
double berry_esseen_delta(double a);

// ---------------------------------------------------------------------------
// Hypothesis audit

enum class AuditMethod { closed_form, mc_oracle };

struct AssumptionEntry {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool pass = false;
  AuditMethod method = AuditMethod::closed_form;
  /// Tail-index estimate backing a heuristic finiteness verdict.
  double tail_index = kInfinity;
};

struct AssumptionReport {
  std::vector<AssumptionEntry> entries;

  const AssumptionEntry& at(const std::string& name) const;
  /// Every closed-form entry passes.
  bool closed_form_pass() const;
  /// Every entry passes, heuristic ones included.
  bool all_pass() const;
};

struct AuditOptions {
  std::size_t oracle_draws = 1'000'000;
  std::uint64_t seed = 0;
};

/// Throws InvalidParameter for alpha <= 0, epsilon <= 0 or p <= 1.
AssumptionReport audit_assumptions(const EnvironmentLaw& env, const Vector& t, double alpha,
                                   double epsilon, double p, double a,
                                   const AuditOptions& options = {});

/// True iff the finite support of `values` is not contained in any
/// arithmetic progression. Ratios of gaps are tested for rationality with
/// denominators up to `max_denominator` at relative tolerance `tol`.
bool non_lattice(std::span<const double> values, long max_denominator = 1000, double tol = 1e-9);

/// Hill estimator of the tail index from the top `k` order statistics of
/// the positive entries of `sample`.
double hill_tail_index(std::vector<double> sample, std::size_t k);

// ---------------------------------------------------------------------------
// E log W

/// Estimate of E log W from log W at n_big and at n_big / 2 on the same
/// replicates. `stabilized` requires the two means to differ by at most
/// 2 combined standard errors plus `abs_tol`.
LogWEstimate log_W_limit_from_samples(std::span<const double> log_W_big,
                                      std::span<const double> log_W_half, int n_big,
                                      double abs_tol = 1e-6);

/// Simulates M replicates of `scenario` (with `t` substituted) to n_big and
/// returns the mean of log W_{n_big}. Throws NotStabilized when the
/// n_big / 2 check fails.
LogWEstimate estimate_log_W_limit(Scenario scenario, const Vector& t, int n_big, std::size_t M,
                                  std::size_t workers = 1, double abs_tol = 1e-6);

// ---------------------------------------------------------------------------
// Laplace transform of Wbar

/// Sample mean of e^{-s Wbar}.
double laplace_barW(std::span<const double> samples, double s);

struct LaplaceDecayFit {
  /// Fitted r in phi(s) ~ c (log s)^{-r}.
  double r = 0.0;
  double r_squared = 0.0;
  std::vector<std::pair<double, double>> points;  // (s, phi(s))
};

/// Fits the decay exponent over a geometric grid s_min * ratio^i (s_min > 1).
LaplaceDecayFit fit_laplace_decay(std::span<const double> samples, double s_min, double ratio,
                                  int count);

// ---------------------------------------------------------------------------
// lambda_0

/// Piecewise q(r) for r >= max{2 delta, 1}, delta in (0, 1].
double q_function(double r, double delta);

struct LambdaZero {
  double r_star = 0.0;
  double q_star = 0.0;
  double eta_star = 0.0;
  double lambda0 = 0.0;
  /// eta* from the explicit case analysis (delta = 1, delta <= 1/2, and the
  /// r_1 / r_2 thresholds for delta in (1/2, 1)).
  double eta_star_cases = 0.0;
};

/// Throws InvalidParameter outside the domain and InternalMismatch if the
/// two routes to eta* disagree beyond 1e-12.
LambdaZero lambda_zero(double a_star, double epsilon, double p, double delta);

// ---------------------------------------------------------------------------
// JSON

nlohmann::json to_json(const AssumptionReport& report);
nlohmann::json to_json(const TheoryConstants& constants);
nlohmann::json to_json(const LambdaZero& l);
/// Doubles with infinities as the strings "inf" / "-inf".
nlohmann::json json_number(double x);

}  // namespace brwire
