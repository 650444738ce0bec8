// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "json.hpp"

#include "brwire/config.hpp"
#include "brwire/engine.hpp"
#include "brwire/errors.hpp"
#include "brwire/experiment.hpp"
#include "brwire/scenarios.hpp"
#include "brwire/stats.hpp"
#include "brwire/theory.hpp"
#include "oracles.hpp"

using namespace brwire;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, bool pass, const std::string& line) {
  std::printf("[%s] %2d %s\n", pass ? "PASS" : "FAIL", id, line.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::size_t workers() { return std::max(1u, std::thread::hardware_concurrency()); }

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

// ---------------------------------------------------------------------------
// Random product-form laws

struct LawDraw {
  std::mt19937_64 gen;
  double u(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen); }
  int i(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen); }

  Vector vector(int d, double lo, double hi) {
    Vector v(d);
    for (int j = 0; j < d; ++j) v[j] = u(lo, hi);
    return v;
  }

  OffspringLaw offspring() {
    switch (i(0, 3)) {
      case 0: return OffspringLaw::deterministic(i(1, 3));
      case 1: return OffspringLaw::one_plus_bernoulli(u(0.0, 1.0));
      case 2: return OffspringLaw::one_plus_poisson(u(0.0, 1.5));
      default: return OffspringLaw::one_plus_geometric(u(0.4, 1.0));
    }
  }

  DisplacementLaw displacement(int d) {
    if (i(0, 3) == 0) return DisplacementLaw::point_mass(vector(d, -1.0, 1.0));
    return DisplacementLaw::gaussian(vector(d, -1.0, 1.0), vector(d, 0.01, 2.0));
  }

  ImmigrationLaw immigration(int d) {
    switch (i(0, 2)) {
      case 0: return ImmigrationLaw::none(d);
      case 1: return ImmigrationLaw::deterministic(i(1, 3), displacement(d));
      default: return ImmigrationLaw::poisson(u(0.0, 3.0), displacement(d));
    }
  }

  EnvState state(int d, int index) {
    return EnvState{"s" + std::to_string(index), offspring(), displacement(d), immigration(d), {}};
  }
};

// ---------------------------------------------------------------------------

void decomposition_identity() {
  const auto start = std::chrono::steady_clock::now();
  LawDraw draw{std::mt19937_64(2024)};
  SimulationOptions opts;
  opts.track_lineage = true;
  double worst = 0.0;
  std::size_t checked = 0;
  std::size_t redraws = 0;
  int done = 0;
  while (done < 1000) {
    const int d = draw.i(1, 2);
    const int k = draw.i(1, 3);
    std::vector<WeightedState> states;
    for (int s = 0; s < k; ++s) states.push_back({draw.state(d, s), draw.u(0.1, 1.0)});
    double total = 0.0;
    for (const auto& s : states) total += s.probability;
    for (auto& s : states) s.probability /= total;
    const int n = draw.i(1, 10);
    std::vector<int> horizons(static_cast<std::size_t>(n));
    std::iota(horizons.begin(), horizons.end(), 1);
    const Scenario sc{EnvironmentLaw(std::move(states)), d, draw.vector(d, -1.5, 1.5),
                      horizons, 3, 10'000, static_cast<std::uint64_t>(done) + 1};
    const PreparedScenario prepared(sc);
    std::vector<Trajectory> runs;
    try {
      for (std::uint64_t r = 0; r < sc.replicates; ++r)
        runs.push_back(simulate_replicate(prepared, r, opts));
    } catch (const CapExceeded&) {
      ++redraws;
      continue;
    }
    for (const auto& t : runs)
      for (const auto& rec : t.records) {
        worst = std::max(worst, decomposition_residual(*t.ledger, rec, rec.n));
        ++checked;
      }
    ++done;
  }
  const double secs = seconds_since(start);
  report(1, worst <= 1e-9 && secs < 60.0,
         fmt("decomposition identity: max residual %.3e <= 1e-9 over %zu records of 1000 random "
             "scenarios (%zu redrawn at the 1e4 cap), %.1f s < 60 s",
             worst, checked, redraws, secs));
}

void doubling_closed_form() {
  // Population 2^{n+1} - 1 stays under the default cap up to n = 22.
  constexpr int kLast = 22;
  auto sc = scenarios::doubling_with_immigrant(1, 5);
  sc.horizons.resize(kLast + 1);
  std::iota(sc.horizons.begin(), sc.horizons.end(), 0);
  const auto traj = simulate_replicate(sc, 0);
  const auto ulp = [](double x) { return std::nextafter(std::abs(x), kInfinity) - std::abs(x); };
  bool exact = true;
  double worst_ratio = 0.0;
  double worst_W = 0.0;
  for (const auto& rec : traj.records) {
    const double Z = std::ldexp(1.0, rec.n + 1) - 1.0;
    const long double W = 2.0L - std::ldexp(1.0L, -rec.n);
    // log Z and log Pi are correctly rounded; log W is one rounded difference of them.
    exact = exact && rec.pop == static_cast<std::size_t>(Z) && rec.log_Z == std::log(Z) &&
            rec.log_Pi == rec.n * std::log(2.0) && rec.log_W == rec.log_Z - rec.log_Pi;
    const long double err = std::abs(static_cast<long double>(rec.log_W) - std::log(W));
    const double bound = 0.5 * (ulp(rec.log_Z) + ulp(rec.log_Pi) + ulp(rec.log_W)) +
                         std::numeric_limits<double>::denorm_min();
    worst_ratio = std::max(worst_ratio, static_cast<double>(err) / bound);
    worst_W = std::max(worst_W, static_cast<double>(std::abs(std::exp(rec.log_W) - W) / W));
  }
  report(2, exact && worst_ratio <= 1.0,
         fmt("doubling closed form for n = 0..%d: population, log Z and log Pi exact; log W error "
             "at %.2f of its rounding bound (<= 1); max rel err of exp(log W) %.2e",
             kLast, worst_ratio, worst_W));
}

void quenched_biggins_mean() {
  LawDraw draw{std::mt19937_64(77)};
  constexpr std::size_t kSamples = 100'000;
  int within = 0;
  double worst_z = 0.0;
  for (int e = 0; e < 20; ++e) {
    const int d = draw.i(1, 2);
    EnvState state = draw.state(d, e);
    state.immigration = ImmigrationLaw::none(d);
    const Scenario sc{EnvironmentLaw({{std::move(state), 1.0}}), d, draw.vector(d, -1.0, 1.0),
                      {1}, kSamples, Scenario::kDefaultPopulationCap,
                      static_cast<std::uint64_t>(e) + 100};
    const PreparedScenario prepared(sc);
    const auto outcomes = run_replicates(prepared, workers());
    double sum = 0.0;
    double sum_sq = 0.0;
    for (const auto& o : outcomes) {
      const double w = std::exp(o.records.front().log_Wbar);
      sum += w;
      sum_sq += w * w;
    }
    const double m = static_cast<double>(outcomes.size());
    const double mean = sum / m;
    const double se = std::sqrt((sum_sq / m - mean * mean) / (m - 1.0));
    const double z = se > 0.0 ? std::abs(mean - 1.0) / se : (mean == 1.0 ? 0.0 : kInfinity);
    worst_z = std::max(worst_z, z);
    if (z <= 4.0) ++within;
  }
  report(3, within >= 19,
         fmt("quenched mean of Wbar_1: %d of 20 environments within 4 SE of 1 (needs >= 19), "
             "largest |z| %.2f",
             within, worst_z));
}

// Values extracted from the shared TwoState-A run.
struct TwoStateRun {
  std::size_t M = 0;
  std::size_t aborted = 0;
  std::map<int, std::vector<double>> log_Z;
  std::map<int, std::vector<double>> log_W;
  EnvConstants env;
  double seconds = 0.0;
};

const std::vector<int> kRateHorizons{8, 16, 32, 64};
const std::vector<int> kIncrementN{2, 3, 4, 5, 6, 7, 8, 9, 10};

TwoStateRun run_two_state() {
  const auto start = std::chrono::steady_clock::now();
  TwoStateRun out;
  auto sc = scenarios::two_state_a(true, 200'000, 20240601);
  std::vector<int> horizons = kRateHorizons;
  for (int n : kIncrementN) {
    horizons.push_back(n);
    horizons.push_back(2 * n);
  }
  std::sort(horizons.begin(), horizons.end());
  horizons.erase(std::unique(horizons.begin(), horizons.end()), horizons.end());
  sc.horizons = horizons;
  const PreparedScenario prepared(sc);
  out.env = env_constants(sc.environment, sc.t);
  constexpr std::size_t kChunk = 10'000;
  for (std::size_t first = 0; first < sc.replicates; first += kChunk) {
    const auto outcomes = run_replicates(prepared, workers(), first, kChunk);
    for (const auto& o : outcomes) {
      if (o.abort) {
        ++out.aborted;
        continue;
      }
      for (const auto& rec : o.records) {
        out.log_Z[rec.n].push_back(rec.log_Z);
        out.log_W[rec.n].push_back(rec.log_W);
      }
    }
  }
  out.M = sc.replicates - out.aborted;
  out.seconds = seconds_since(start);
  return out;
}

EmpiricalLaw standardized(const TwoStateRun& run, int n) {
  std::vector<double> centred;
  centred.reserve(run.M);
  for (double z : run.log_Z.at(n)) centred.push_back(z - n * run.env.mu);
  return standardize_values(centred, n, run.env.sigma);
}

void clt_rate(const TwoStateRun& run) {
  std::vector<std::pair<double, double>> pairs;
  std::string table;
  for (int n : kRateHorizons) {
    const double ks = ks_distance(standardized(run, n));
    pairs.emplace_back(n, ks);
    table += fmt("%s%d:%.4f", table.empty() ? "" : " ", n, ks);
  }
  const auto fit = rate_fit(pairs);
  const double noise = 3.0 * dkw_budget(run.M, 0.05);
  const bool pass = fit.slope >= -0.80 && fit.slope <= -0.25 && fit.r_squared >= 0.8 &&
                    pairs.back().second > noise;
  report(4, pass,
         fmt("CLT rate on TwoState-A + immigration (M = %zu, %zu aborted): ks {%s}, slope %.3f "
             "in [-0.80, -0.25], r2 %.3f >= 0.8, ks(64) %.4f > 3 dkw %.4f; simulation %.0f s",
             run.M, run.aborted, table.c_str(), fit.slope, fit.r_squared, pairs.back().second,
             noise, run.seconds));
}

void env_walk_edgeworth() {
  const auto start = std::chrono::steady_clock::now();
  constexpr std::size_t kM = 1'000'000;
  constexpr int kN = 256;
  const auto sc = scenarios::three_state_skew(kM, 31);
  const PreparedScenario prepared(sc);
  const auto env = env_constants(sc.environment, sc.t);
  const auto walks = run_env_walks(prepared, workers(), kM, {kN});
  const auto emp = standardize_values(walks.front(), kN, env.sigma);
  TheoryConstants c;
  c.mu = env.mu;
  c.sigma = env.sigma;
  c.mu3 = env.mu3;
  c.E_log_W.estimate = 0.0;
  c.E_log_W.std_error = 0.0;
  const std::vector<double> grid{-1.0, 0.0, 1.0};
  const auto profile = exact_rate_profile(emp, c, grid);
  bool pass = non_lattice(std::vector<double>(prepared.log_m)) && env.mu3 != 0.0;
  std::string table;
  for (const auto& p : profile) {
    const double gap = std::abs(p.lhs - p.rhs);
    pass = pass && gap <= p.uncertainty + 0.05;
    table += fmt("%s x=%g: |%.4f - %.4f| = %.4f <= %.4f", table.empty() ? "" : ";", p.x, p.lhs,
                 p.rhs, gap, p.uncertainty + 0.05);
  }
  const double secs = seconds_since(start);
  report(5, pass && secs < 300.0,
         fmt("env-walk Edgeworth baseline (ThreeState-Skew, n = 256, M = 1e6, mu3 = %.4f):%s; "
             "%.1f s < 300 s",
             env.mu3, table.c_str(), secs));
}

void exact_rate(const TwoStateRun& run) {
  TheoryConstants c;
  c.mu = run.env.mu;
  c.sigma = run.env.sigma;
  c.mu3 = run.env.mu3;
  c.E_log_W = log_W_limit_from_samples(run.log_W.at(64), run.log_W.at(32), 64);
  const std::vector<double> grid{0.0};
  std::vector<ProfilePoint> points;
  try {
    for (int n : {16, 32, 64}) points.push_back(exact_rate_profile(standardized(run, n), c, grid)[0]);
  } catch (const ResolutionTooCoarse& e) {
    report(6, false, std::string("exact rate on TwoState-A: ") + e.what());
    return;
  }
  const double rhs = points.back().rhs;
  const double g16 = std::abs(points[0].lhs - rhs);
  const double g32 = std::abs(points[1].lhs - rhs);
  const double g64 = std::abs(points[2].lhs - rhs);
  const double tol = points[2].uncertainty + 0.15;
  report(6, g16 > g32 && g32 > g64 && g64 <= tol,
         fmt("exact rate on TwoState-A at x = 0: lhs(16, 32, 64) = %.4f, %.4f, %.4f, rhs %.4f "
             "(E log W %.4f, stabilized %s); gaps %.4f > %.4f > %.4f, gap(64) <= %.4f",
             points[0].lhs, points[1].lhs, points[2].lhs, rhs, c.E_log_W.estimate,
             c.E_log_W.stabilized ? "yes" : "no", g16, g32, g64, tol));
}

RateFit increment_fit(const std::function<std::vector<std::pair<double, double>>(int)>& pairs_at) {
  std::vector<IncrementDiagnostics> diags;
  const std::vector<double> thresholds{0.01, 0.1};
  for (int n : kIncrementN)
    diags.push_back(w_increment_diagnostics(pairs_at(n), n, 2 * n, 1.0, thresholds));
  return increment_rate_fit(diags);
}

void increment_rate(const TwoStateRun& run) {
  auto sc = scenarios::doubling_with_immigrant(4, 9);
  sc.horizons.clear();
  for (int n : kIncrementN) {
    sc.horizons.push_back(n);
    sc.horizons.push_back(2 * n);
  }
  std::sort(sc.horizons.begin(), sc.horizons.end());
  sc.horizons.erase(std::unique(sc.horizons.begin(), sc.horizons.end()), sc.horizons.end());
  const auto outcomes = run_replicates(PreparedScenario(sc), workers());
  const auto doubling = increment_fit([&](int n) {
    const auto a = records_at(outcomes, n);
    const auto b = records_at(outcomes, 2 * n);
    std::vector<std::pair<double, double>> pairs;
    for (std::size_t r = 0; r < a.size(); ++r) pairs.emplace_back(a[r].log_W, b[r].log_W);
    return pairs;
  });
  const auto two_state = increment_fit([&](int n) {
    const auto& a = run.log_W.at(n);
    const auto& b = run.log_W.at(2 * n);
    std::vector<std::pair<double, double>> pairs;
    for (std::size_t r = 0; r < a.size(); ++r) pairs.emplace_back(a[r], b[r]);
    return pairs;
  });
  const double target = -std::log(2.0);
  const bool pass = std::abs(doubling.slope - target) <= 0.05 && two_state.r_squared >= 0.9 &&
                    two_state.slope < 0.0;
  report(7, pass,
         fmt("W increment rate: doubling log rho %.4f = %.4f +- 0.05; TwoState-A slope %.4f < 0, "
             "r2 %.4f >= 0.9",
             doubling.slope, target, two_state.slope, two_state.r_squared));
}

void lambda_zero_calculator() {
  const auto inf = lambda_zero(kInfinity, 1.0, 4.0, 1.0);
  const auto a = lambda_zero(4.0, 1.0, 4.0, 1.0);
  const auto b = lambda_zero(4.0, 1.0, 4.0, 0.4);
  const bool examples = std::isinf(inf.lambda0) && std::isinf(inf.eta_star) &&
                        std::isinf(inf.q_star) && std::isinf(inf.r_star) && a.r_star == 2.0 &&
                        a.eta_star == 1.0 && a.q_star == 1.0 && a.lambda0 == 1.0 &&
                        b.eta_star == 1.0 && b.lambda0 == 1.0;
  std::mt19937_64 gen(4242);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int checked = 0;
  double worst = 0.0;
  while (checked < 10'000) {
    const double eps = 0.2 + 3.0 * u(gen);
    const double p = std::max(1.0 + 1.0 / eps, 2.0 / eps) + 1e-3 + 6.0 * u(gen);
    const double delta = u(gen) < 0.2 ? 1.0 : (u(gen) < 0.25 ? 0.5 * u(gen) + 1e-6 : u(gen));
    const double a_star = 2.0 + 40.0 * u(gen);
    if (delta <= 0.0 || p * eps <= 2.0 || (p - 1.0) * eps <= 1.0) continue;
    try {
      const auto l = lambda_zero(a_star, eps, p, delta);
      worst = std::max(worst, std::abs(l.eta_star - l.eta_star_cases));
    } catch (const InternalMismatch&) {
      worst = kInfinity;
    } catch (const InvalidParameter&) {
      continue;
    }
    ++checked;
  }
  report(8, examples && worst <= 1e-12,
         fmt("lambda_0 calculator: three worked examples %s; formula vs case analysis max "
             "|diff| %.2e <= 1e-12 over %d draws",
             examples ? "exact" : "WRONG", worst, checked));
}

void normal_primitives() {
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double x = -8.0 + 16.0 * i / 999.0;
    worst = std::max(worst, static_cast<double>(
                                std::abs(static_cast<long double>(normal_cdf(x)) -
                                         oracle::normal_cdf(static_cast<long double>(x)))));
  }
  bool zeros = true;
  for (double mu3 : {-2.0, 0.3, 1.0, 7.5})
    for (double sigma : {0.1, 1.0, 3.0})
      zeros = zeros && edgeworth_Q(1.0, mu3, sigma) == 0.0 && edgeworth_Q(-1.0, mu3, sigma) == 0.0;
  using boost::math::quadrature::gauss_kronrod;
  const double integral = std::abs(gauss_kronrod<double, 61>::integrate(
      [](double x) { return edgeworth_Q(x, 1.0, 1.0); }, -10.0, 10.0, 15, 1e-14));
  report(9, worst <= 1e-12 && zeros && integral <= 1e-8,
         fmt("normal primitives: max |Phi - quadrature| %.2e <= 1e-12 on 1000 points in [-8, 8]; "
             "Q(+-1) = 0 %s; |int Q| %.2e <= 1e-8",
             worst, zeros ? "exact" : "WRONG", integral));
}

void nonuniform_boundedness(const TwoStateRun& run) {
  double lo = kInfinity;
  double hi = 0.0;
  std::string table;
  for (int n : kRateHorizons) {
    const double scaled = weighted_distance(standardized(run, n), 1.0, 3.0) * std::sqrt(double(n));
    lo = std::min(lo, scaled);
    hi = std::max(hi, scaled);
    table += fmt("%s%d:%.4f", table.empty() ? "" : " ", n, scaled);
  }
  report(10, hi / lo <= 5.0,
         fmt("non-uniform bound on TwoState-A (lambda 1, x_cap 3): weighted * sqrt(n) {%s}, "
             "max/min %.3f <= 5",
             table.c_str(), hi / lo));
}

const char* kDeterminismPlan = R"({
  "d": 1, "t": [1.0], "horizons": [4, 8, 16], "replicates": 3000, "master_seed": 99,
  "environment": {"states": [
    {"label": "A", "prob": 0.5, "offspring": {"kind": "one_plus_bernoulli", "param": 0.2},
     "displacement": {"kind": "gaussian", "mean": [0.1], "var": [1.0]},
     "immigration": {"count": {"kind": "poisson", "param": 1.0},
                     "position": {"kind": "gaussian", "mean": [0.0], "var": [1.0]}}},
    {"label": "B", "prob": 0.5, "offspring": {"kind": "one_plus_bernoulli", "param": 0.05},
     "displacement": {"kind": "gaussian", "mean": [-0.1], "var": [1.0]},
     "immigration": {"count": {"kind": "poisson", "param": 1.0},
                     "position": {"kind": "gaussian", "mean": [0.0], "var": [1.0]}}}]},
  "analyses": {
    "audit": {"alpha": 1.0, "epsilon": 1.0, "p": 4.0, "a": "inf", "oracle_draws": 20000},
    "clt": true, "uniform-be": true, "nonuniform-be": {"lambda": 1.0, "x_cap": 3.0},
    "exact-rate": {"x_grid": [-1, 0, 1], "resolution": 1.0},
    "w-increments": {"n": [1, 2, 3, 4]},
    "env-walk-baseline": {"replicates": 20000, "resolution": 1.0}},
  "output": {"records": true}
})";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::map<std::string, std::string> run_plan_into(const fs::path& dir, std::size_t n_workers) {
  auto plan = parse_plan(kDeterminismPlan);
  fs::remove_all(dir);
  plan.output.dir = dir;
  plan.output.workers = n_workers;
  run(plan);
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::string bytes = slurp(entry.path());
    if (entry.path().filename() == "manifest.json") {
      auto j = nlohmann::json::parse(bytes);
      j.erase("wall_clock_seconds");
      bytes = j.dump();
    }
    files[entry.path().filename().string()] = std::move(bytes);
  }
  return files;
}

void determinism() {
  const fs::path root = fs::temp_directory_path() / "brwire_acceptance";
  const auto reference = run_plan_into(root / "w1", 1);
  bool same = true;
  for (std::size_t w : {4, 16}) same = same && run_plan_into(root / ("w" + std::to_string(w)), w) == reference;
  same = same && run_plan_into(root / "rerun", 1) == reference;
  fs::remove_all(root);
  report(11, same,
         fmt("determinism: %zu output files byte-identical for workers 1, 4, 16 and a rerun "
             "(manifest compared without its wall-clock field)",
             reference.size()));
}

}  // namespace

int main() {
  const std::vector<std::pair<int, std::function<void()>>> light{
      {1, decomposition_identity}, {2, doubling_closed_form}, {3, quenched_biggins_mean},
      {5, env_walk_edgeworth},     {8, lambda_zero_calculator}, {9, normal_primitives},
      {11, determinism}};
  const auto guarded = [](int id, const std::function<void()>& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      report(id, false, std::string("threw: ") + e.what());
    }
  };
  for (const auto& [id, fn] : light) guarded(id, fn);

  try {
    const auto run = run_two_state();
    guarded(4, [&] { clt_rate(run); });
    guarded(6, [&] { exact_rate(run); });
    guarded(7, [&] { increment_rate(run); });
    guarded(10, [&] { nonuniform_boundedness(run); });
  } catch (const std::exception& e) {
    for (int id : {4, 6, 7, 10}) report(id, false, std::string("shared run threw: ") + e.what());
  }
  std::printf("%d of 11 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
