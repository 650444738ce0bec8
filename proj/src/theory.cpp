#include "brwire/theory.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/hypergeometric_1F1.hpp>

#include "brwire/errors.hpp"
#include "brwire/stats.hpp"

namespace brwire {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidParameter(what);
}

bool all_product_form(const EnvironmentLaw& env) {
  return std::all_of(env.states().begin(), env.states().end(),
                     [](const WeightedState& ws) { return ws.state.product_form(); });
}

Stream oracle_stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t sub = 0) {
  return Stream(derive_key(seed, {static_cast<std::uint64_t>(Domain::oracle), tag, sub}));
}

/// E|X|^a for X ~ N(m, v).
double abs_moment_normal(double m, double v, double a) {
  if (v <= 0.0) return std::pow(std::abs(m), a);
  const double s = std::sqrt(v);
  return std::pow(s, a) * std::pow(2.0, a / 2.0) * boost::math::tgamma((a + 1.0) / 2.0) /
         std::sqrt(std::numbers::pi) *
         boost::math::hypergeometric_1F1(-a / 2.0, 0.5, -m * m / (2.0 * v));
}

// Moment order evaluated when a = inf is declared; the finite-support and
// gaussian families have every moment, so any finite order witnesses it.
constexpr double kInfiniteOrderProxy = 16.0;

double mean_of(std::span<const double> xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double std_error_of(std::span<const double> xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Normal law

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

double edgeworth_Q(double x, double mu3, double sigma) {
  require(sigma > 0.0, "edgeworth_Q needs sigma > 0");
  return mu3 * (1.0 - x * x) * normal_pdf(x) / (6.0 * sigma * sigma * sigma);
}

// ---------------------------------------------------------------------------
// Environment constants

EnvConstants env_constants(const EnvironmentLaw& env, const Vector& t, std::size_t oracle_draws,
                           std::uint64_t oracle_seed) {
  const std::size_t k = env.size();
  std::vector<double> ell(k);
  std::vector<double> ell_var(k, 0.0);
  EnvConstants c;
  for (std::size_t s = 0; s < k; ++s) {
    const auto& state = env.state(s);
    if (state.product_form()) {
      ell[s] = log_mean_mgf(state, t);
    } else {
      const auto est = mean_mgf_oracle(state, t, oracle_draws, oracle_stream(oracle_seed, 1, s));
      ell[s] = std::log(est.value);
      ell_var[s] = (est.std_error / est.value) * (est.std_error / est.value);
      c.provenance = Provenance::estimated;
    }
  }
  for (std::size_t s = 0; s < k; ++s) c.mu += env.probability(s) * ell[s];
  double var = 0.0;
  for (std::size_t s = 0; s < k; ++s) {
    const double dev = ell[s] - c.mu;
    var += env.probability(s) * dev * dev;
    c.mu3 += env.probability(s) * dev * dev * dev;
  }
  c.sigma = std::sqrt(var);
  if (c.provenance == Provenance::estimated) {
    // Delta method over the per-state log-mean estimates.
    double mu_v = 0.0, sigma_v = 0.0, mu3_v = 0.0;
    for (std::size_t s = 0; s < k; ++s) {
      const double p = env.probability(s);
      const double dev = ell[s] - c.mu;
      mu_v += p * p * ell_var[s];
      if (c.sigma > 0.0) sigma_v += std::pow(p * dev / c.sigma, 2) * ell_var[s];
      mu3_v += std::pow(3.0 * p * (dev * dev - var), 2) * ell_var[s];
    }
    c.mu_se = std::sqrt(mu_v);
    c.sigma_se = std::sqrt(sigma_v);
    c.mu3_se = std::sqrt(mu3_v);
  }
  return c;
}

double berry_esseen_delta(double a) {
  require(a > 2.0, "delta needs a > 2");
  return std::min(a - 2.0, 1.0);
}

// ---------------------------------------------------------------------------
// Audit

const AssumptionEntry& AssumptionReport::at(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw InvalidParameter("no audit entry named '" + name + "'");
}

bool AssumptionReport::closed_form_pass() const {
  return std::all_of(entries.begin(), entries.end(), [](const AssumptionEntry& e) {
    return e.method != AuditMethod::closed_form || e.pass;
  });
}

bool AssumptionReport::all_pass() const {
  return std::all_of(entries.begin(), entries.end(),
                     [](const AssumptionEntry& e) { return e.pass; });
}

bool non_lattice(std::span<const double> values, long max_denominator, double tol) {
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double scale = std::max(1.0, std::max(std::abs(v.front()), std::abs(v.back())));
  v.erase(std::unique(v.begin(), v.end(),
                      [&](double a, double b) { return std::abs(a - b) <= tol * scale; }),
          v.end());
  // One or two support points always sit on an arithmetic progression.
  if (v.size() < 3) return false;
  const double base = v[1] - v[0];
  for (std::size_t i = 2; i < v.size(); ++i) {
    const double ratio = (v[i] - v[0]) / base;
    // Continued-fraction convergents of the ratio.
    double x = ratio;
    long h0 = 1, h1 = 0, k0 = 0, k1 = 1;
    bool rational = false;
    for (int iter = 0; iter < 64; ++iter) {
      const double a = std::floor(x);
      const long h2 = static_cast<long>(a) * h0 + h1;
      const long k2 = static_cast<long>(a) * k0 + k1;
      if (k2 > max_denominator) break;
      h1 = h0, h0 = h2, k1 = k0, k0 = k2;
      if (std::abs(ratio - static_cast<double>(h0) / static_cast<double>(k0)) <=
          tol * std::max(1.0, std::abs(ratio))) {
        rational = true;
        break;
      }
      const double frac = x - a;
      if (frac <= 0.0) break;
      x = 1.0 / frac;
    }
    if (!rational) return true;
  }
  return false;
}

double hill_tail_index(std::vector<double> sample, std::size_t k) {
  std::erase_if(sample, [](double x) { return !(x > 0.0); });
  if (sample.size() < 2) return kInfinity;
  k = std::clamp<std::size_t>(k, 1, sample.size() - 1);
  std::nth_element(sample.begin(), sample.begin() + static_cast<std::ptrdiff_t>(k), sample.end(),
                   std::greater<>());
  const double threshold = sample[k];
  double xi = 0.0;
  for (std::size_t i = 0; i < k; ++i) xi += std::log(sample[i] / threshold);
  xi /= static_cast<double>(k);
  return xi > 0.0 ? 1.0 / xi : kInfinity;
}

AssumptionReport audit_assumptions(const EnvironmentLaw& env, const Vector& t, double alpha,
                                   double epsilon, double p, double a,
                                   const AuditOptions& options) {
  require(alpha > 0.0, "alpha must be > 0");
  require(epsilon > 0.0, "epsilon must be > 0");
  require(p > 1.0, "p must be > 1");
  require(a > 0.0, "a must be > 0");

  const std::size_t k = env.size();
  const bool closed = all_product_form(env);
  const AuditMethod closed_or_mc = closed ? AuditMethod::closed_form : AuditMethod::mc_oracle;
  const std::size_t draws = std::max<std::size_t>(options.oracle_draws, 1000);
  const std::size_t hill_k =
      static_cast<std::size_t>(std::sqrt(static_cast<double>(draws)));

  const double order = std::isinf(a) ? kInfiniteOrderProxy : a;
  const std::vector<double> ell = log_means(env, t, draws, options.seed);
  const Vector pt = p * t;
  const std::vector<double> ell_pt = log_means(env, pt, draws, options.seed + 1);
  const EnvConstants ec = env_constants(env, t, draws, options.seed);

  AssumptionReport report;
  auto add = [&](AssumptionEntry e) { report.entries.push_back(std::move(e)); };

  add({"sigma > 0", ec.sigma, 0.0, ec.sigma > 0.0, closed_or_mc});
  add({"a > 2", a, 2.0, a > 2.0, AuditMethod::closed_form});
  {
    double v = 0.0;
    for (std::size_t s = 0; s < k; ++s) v += env.probability(s) * std::exp(-alpha * ell[s]);
    add({"E m0(t)^-alpha < 1", v, 1.0, v < 1.0, closed_or_mc});
  }
  {
    double v = 0.0;
    for (std::size_t s = 0; s < k; ++s)
      v += env.probability(s) * std::exp(epsilon * (ell_pt[s] - p * ell[s]));
    add({"E (m0(pt)/m0(t)^p)^eps < 1", v, 1.0, v < 1.0, closed_or_mc});
  }
  {
    const double bound = std::max(1.0 + 1.0 / epsilon, 2.0 / epsilon);
    add({"p > max{1+1/eps, 2/eps}", p, bound, p > bound, AuditMethod::closed_form});
  }
  {
    double v = 0.0;
    for (std::size_t s = 0; s < k; ++s) v += env.probability(s) * std::pow(std::abs(ell[s]), order);
    add({"E|log m0(t)|^a < inf", v, kInfinity, std::isfinite(v), closed_or_mc});
  }

  // E (Y_0 / m_0(t))^alpha, over the environment mixture.
  {
    const bool no_immigration = std::all_of(env.states().begin(), env.states().end(), [](auto& ws) {
      return std::holds_alternative<ImmigrationLaw::None>(ws.state.immigration.count()) ||
             ws.state.immigration.mean_count() == 0.0;
    });
    if (no_immigration) {
      add({"E (Y0/m0(t))^alpha < inf", 0.0, kInfinity, true, AuditMethod::closed_form});
    } else {
      Stream rng = oracle_stream(options.seed, 2);
      std::vector<double> ratio(draws);
      double acc = 0.0;
      ImmigrantBatch batch;
      for (std::size_t i = 0; i < draws; ++i) {
        const std::size_t s = env.sample_index(rng);
        sample_immigration(env.state(s), rng, batch);
        double y = 0.0;
        for (int j = 0; j < batch.count; ++j) {
          const Eigen::Map<const Vector> pos(batch.positions.data() + std::size_t(j) * t.size(),
                                             t.size());
          y += std::exp(t.dot(pos));
        }
        ratio[i] = y / std::exp(ell[s]);
        acc += std::pow(ratio[i], alpha);
      }
      const double tail = hill_tail_index(ratio, hill_k);
      AssumptionEntry e{"E (Y0/m0(t))^alpha < inf", acc / static_cast<double>(draws), kInfinity,
                        tail > alpha, AuditMethod::mc_oracle};
      e.tail_index = tail;
      add(e);
    }
  }

  // E (E_xi Wbar_1^p)^eps, one oracle per state.
  {
    const std::size_t per_state = std::max<std::size_t>(draws / k, 1000);
    double v = 0.0;
    double tail = kInfinity;
    Reproduction rep;
    const int d = static_cast<int>(t.size());
    for (std::size_t s = 0; s < k; ++s) {
      Stream rng = oracle_stream(options.seed, 3, s);
      std::vector<double> wbar(per_state);
      double acc = 0.0;
      for (std::size_t i = 0; i < per_state; ++i) {
        sample_reproduction(env.state(s), rng, rep);
        double w = 0.0;
        for (int c = 0; c < rep.count; ++c) {
          const Eigen::Map<const Vector> l(rep.displacements.data() + std::size_t(c) * d, d);
          w += std::exp(t.dot(l) - ell[s]);
        }
        wbar[i] = w;
        acc += std::pow(w, p);
      }
      v += env.probability(s) * std::pow(acc / static_cast<double>(per_state), epsilon);
      tail = std::min(tail, hill_tail_index(std::move(wbar), hill_k));
    }
    AssumptionEntry e{"E (E_xi Wbar1^p)^eps < inf", v, kInfinity, tail > p, AuditMethod::mc_oracle};
    e.tail_index = tail;
    add(e);
  }

  // E|t.L_1|^a and E (e^{t.L_1} / m_0(t))^{-alpha}.
  if (closed) {
    double abs_moment = 0.0;
    double harmonic = 0.0;
    for (std::size_t s = 0; s < k; ++s) {
      const auto& disp = env.state(s).displacement;
      const auto [m, v] = disp.projected_moments(t);
      abs_moment += env.probability(s) * abs_moment_normal(m, v, order);
      harmonic += env.probability(s) * std::exp(alpha * ell[s] + disp.log_mgf(-alpha * t));
    }
    add({"E|t.L1|^a < inf", abs_moment, kInfinity, std::isfinite(abs_moment),
         AuditMethod::closed_form});
    add({"E (e^{t.L1}/m0(t))^-alpha < inf", harmonic, kInfinity, std::isfinite(harmonic),
         AuditMethod::closed_form});
  } else {
    Stream rng = oracle_stream(options.seed, 4);
    std::vector<double> abs_tl(draws);
    std::vector<double> inv(draws);
    double abs_acc = 0.0, inv_acc = 0.0;
    Reproduction rep;
    const int d = static_cast<int>(t.size());
    for (std::size_t i = 0; i < draws; ++i) {
      const std::size_t s = env.sample_index(rng);
      sample_reproduction(env.state(s), rng, rep);
      const Eigen::Map<const Vector> l(rep.displacements.data(), d);
      const double tl = t.dot(l);
      abs_tl[i] = std::abs(tl);
      inv[i] = std::exp(-alpha * (tl - ell[s]));
      abs_acc += std::pow(abs_tl[i], order);
      inv_acc += inv[i];
    }
    const double tail_abs = hill_tail_index(abs_tl, hill_k);
    const double tail_inv = hill_tail_index(inv, hill_k);
    AssumptionEntry e1{"E|t.L1|^a < inf", abs_acc / static_cast<double>(draws), kInfinity,
                       tail_abs > order, AuditMethod::mc_oracle};
    e1.tail_index = tail_abs;
    AssumptionEntry e2{"E (e^{t.L1}/m0(t))^-alpha < inf", inv_acc / static_cast<double>(draws),
                       kInfinity, tail_inv > 1.0, AuditMethod::mc_oracle};
    e2.tail_index = tail_inv;
    add(e1);
    add(e2);
  }

  {
    std::vector<double> support;
    for (std::size_t s = 0; s < k; ++s)
      if (env.probability(s) > 0.0) support.push_back(ell[s]);
    const bool nl = non_lattice(support);
    add({"log m0(t) non-lattice", nl ? 1.0 : 0.0, 1.0, nl, closed_or_mc});
  }
  return report;
}

// ---------------------------------------------------------------------------
// E log W

LogWEstimate log_W_limit_from_samples(std::span<const double> log_W_big,
                                      std::span<const double> log_W_half, int n_big,
                                      double abs_tol) {
  require(!log_W_big.empty() && !log_W_half.empty(), "log W samples are empty");
  LogWEstimate e;
  e.n_used = static_cast<std::size_t>(n_big);
  e.samples = log_W_big.size();
  e.estimate = mean_of(log_W_big);
  e.std_error = std_error_of(log_W_big, e.estimate);
  e.half_estimate = mean_of(log_W_half);
  e.half_std_error = std_error_of(log_W_half, e.half_estimate);
  const double combined = std::hypot(e.std_error, e.half_std_error);
  e.stabilized = std::abs(e.estimate - e.half_estimate) <= 2.0 * combined + abs_tol;
  return e;
}

LogWEstimate estimate_log_W_limit(Scenario scenario, const Vector& t, int n_big, std::size_t M,
                                  std::size_t workers, double abs_tol) {
  require(n_big >= 2, "n_big must be >= 2");
  require(M >= 2, "M must be >= 2");
  scenario.t = t;
  scenario.horizons = {n_big / 2, n_big};
  scenario.replicates = M;
  const PreparedScenario prepared(std::move(scenario));
  const auto outcomes = run_replicates(prepared, workers);
  std::vector<double> big, half;
  for (const auto& o : outcomes) {
    if (o.abort) continue;
    half.push_back(o.records[0].log_W);
    big.push_back(o.records[1].log_W);
  }
  require(!big.empty(), "every replicate was aborted");
  const auto e = log_W_limit_from_samples(big, half, n_big, abs_tol);
  if (!e.stabilized)
    throw NotStabilized("E log W at n=" + std::to_string(n_big) + " (" +
                        std::to_string(e.estimate) + ") and n=" + std::to_string(n_big / 2) +
                        " (" + std::to_string(e.half_estimate) +
                        ") differ by more than 2 combined standard errors");
  return e;
}

// ---------------------------------------------------------------------------
// Laplace transform

double laplace_barW(std::span<const double> samples, double s) {
  require(!samples.empty(), "laplace_barW needs samples");
  require(s >= 0.0, "laplace_barW needs s >= 0");
  double acc = 0.0;
  for (double w : samples) acc += std::exp(-s * w);
  return acc / static_cast<double>(samples.size());
}

LaplaceDecayFit fit_laplace_decay(std::span<const double> samples, double s_min, double ratio,
                                  int count) {
  require(s_min > 1.0, "s_min must be > 1");
  require(ratio > 1.0, "ratio must be > 1");
  require(count >= 3, "need at least 3 grid points");
  LaplaceDecayFit fit;
  std::vector<std::pair<double, double>> pts;
  double s = s_min;
  for (int i = 0; i < count; ++i, s *= ratio) {
    const double phi = laplace_barW(samples, s);
    fit.points.emplace_back(s, phi);
    if (phi > 0.0) pts.emplace_back(std::log(std::log(s)), std::log(phi));
  }
  const auto line = fit_line(std::move(pts));
  fit.r = -line.slope;
  fit.r_squared = line.r_squared;
  return fit;
}

// ---------------------------------------------------------------------------
// lambda_0

double q_function(double r, double delta) {
  require(delta > 0.0 && delta <= 1.0, "delta must lie in (0, 1]");
  require(r >= std::max(2.0 * delta, 1.0) - 1e-12, "q(r) needs r >= max{2 delta, 1}");
  if (delta == 1.0) return r / 2.0;
  if (delta <= 0.5) return r;
  if (r >= delta / (1.0 - delta)) return r;
  const double b = 1.0 + delta;
  return (b - std::sqrt(b * b - 4.0 * r * (1.0 - delta))) / (2.0 * (1.0 - delta));
}

namespace {

double eta_star_by_cases(double r_star, double delta) {
  if (delta == 1.0) return r_star / 2.0;
  if (delta <= 0.5) return r_star - 1.0;
  if (delta <= 2.0 * std::numbers::sqrt2 - 2.0) return r_star - 1.0;
  const double disc = std::sqrt(delta * delta - 4.0 * (1.0 - delta));
  const double r1 = std::max(2.0 * delta, 1.0 + (delta - disc) / (2.0 * (1.0 - delta)));
  const double r2 = std::min(delta / (1.0 - delta), 1.0 + (delta + disc) / (2.0 * (1.0 - delta)));
  return (r1 < r_star && r_star < r2) ? q_function(r_star, delta) : r_star - 1.0;
}

}  // namespace

LambdaZero lambda_zero(double a_star, double epsilon, double p, double delta) {
  require(epsilon > 0.0, "epsilon must be > 0");
  require(p > 1.0, "p must be > 1");
  require(delta > 0.0 && delta <= 1.0, "delta must lie in (0, 1]");
  require(a_star > 0.0, "a* must be > 0");
  require(p * epsilon > 2.0, "lambda_0 needs p eps > 2");
  require((p - 1.0) * epsilon > 1.0, "lambda_0 needs (p - 1) eps > 1");

  LambdaZero out;
  if (std::isinf(a_star)) {
    out.r_star = out.q_star = out.eta_star = out.lambda0 = out.eta_star_cases = kInfinity;
    return out;
  }
  const double pe = p * epsilon;
  const double qe = (p - 1.0) * epsilon;
  out.r_star = std::min((pe - 2.0) / pe, (qe - 1.0) / qe) * a_star;
  require(out.r_star >= std::max(2.0 * delta, 1.0) - 1e-12,
          "a* is too small: r* = " + std::to_string(out.r_star) + " < max{2 delta, 1}");
  out.q_star = q_function(out.r_star, delta);
  out.eta_star = std::min(out.r_star - 1.0, out.q_star);
  out.lambda0 = std::min(out.eta_star, out.eta_star / (out.eta_star + 1.0) * a_star);
  out.eta_star_cases = eta_star_by_cases(out.r_star, delta);
  if (std::abs(out.eta_star - out.eta_star_cases) > 1e-12)
    throw InternalMismatch("eta* = " + std::to_string(out.eta_star) + " but case analysis gives " +
                           std::to_string(out.eta_star_cases));
  return out;
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::json json_number(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  if (std::isnan(x)) return "nan";
  return x;
}

nlohmann::json to_json(const AssumptionReport& report) {
  auto out = nlohmann::json::array();
  for (const auto& e : report.entries) {
    nlohmann::json j{{"name", e.name},
                     {"value", json_number(e.value)},
                     {"threshold", json_number(e.threshold)},
                     {"pass", e.pass},
                     {"method", e.method == AuditMethod::closed_form ? "closed-form" : "MC-oracle"}};
    if (e.method == AuditMethod::mc_oracle) {
      j["tail_index"] = json_number(e.tail_index);
      j["heuristic"] = true;
    }
    out.push_back(std::move(j));
  }
  return out;
}

nlohmann::json to_json(const TheoryConstants& c) {
  const char* env = c.env_provenance == Provenance::closed_form ? "closed-form" : "estimated";
  return {
      {"mu", json_number(c.mu)},
      {"sigma", json_number(c.sigma)},
      {"mu3", json_number(c.mu3)},
      {"delta", json_number(c.delta)},
      {"a_star", json_number(c.a_star)},
      {"E_log_W",
       {{"estimate", json_number(c.E_log_W.estimate)},
        {"std_error", json_number(c.E_log_W.std_error)},
        {"n_used", c.E_log_W.n_used},
        {"samples", c.E_log_W.samples},
        {"half_estimate", json_number(c.E_log_W.half_estimate)},
        {"stabilized", c.E_log_W.stabilized}}},
      {"provenance",
       {{"mu", env},
        {"sigma", env},
        {"mu3", env},
        {"delta", "declared"},
        {"a_star", "declared"},
        {"E_log_W", "estimated"}}},
  };
}

nlohmann::json to_json(const LambdaZero& l) {
  return {{"r_star", json_number(l.r_star)},
          {"q_star", json_number(l.q_star)},
          {"eta_star", json_number(l.eta_star)},
          {"lambda0", json_number(l.lambda0)}};
}

}  // namespace brwire
