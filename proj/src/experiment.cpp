#include "brwire/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "brwire/engine.hpp"
#include "brwire/errors.hpp"
#include "brwire/stats.hpp"
#include "brwire/theory.hpp"

namespace brwire {

using nlohmann::json;

void apply_overrides(ExperimentPlan& plan, const RunOverrides& o) {
  if (o.seed) plan.scenario.master_seed = *o.seed;
  if (o.replicates) plan.scenario.replicates = *o.replicates;
  if (o.out) plan.output.dir = *o.out;
  if (o.workers) plan.output.workers = *o.workers;
  if (plan.scenario.replicates < 1) throw ConfigError("replicates", "must be >= 1");
  if (plan.output.workers < 1) throw ConfigError("output.workers", "must be >= 1");
}

json RunManifest::to_json() const {
  json outs = json::object();
  for (const auto& [analysis, files] : outputs) outs[analysis] = files;
  return {{"config_digest", config_digest},
          {"master_seed", master_seed},
          {"version", version},
          {"outputs", outs},
          {"wall_clock_seconds", wall_clock_seconds},
          {"replicates_run", replicates_run},
          {"replicates_aborted", replicates_aborted},
          {"hypotheses", hypotheses},
          {"warnings", warnings},
          {"gate_failures", gate_failures},
          {"abort_rate_exceeded", abort_rate_exceeded}};
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw InternalMismatch("SHA-256 digest failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i)
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return hex.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  auto tmp = path;
  tmp.replace_filename("." + path.filename().string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw IoError("write to " + tmp.string() + " failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot rename into " + path.string());
  }
}

namespace {

std::string dump(const json& j) { return j.dump(2) + "\n"; }

class Writer {
 public:
  Writer(std::filesystem::path dir, RunManifest& manifest)
      : dir_(std::move(dir)), manifest_(manifest) {}

  void write(const std::string& analysis, const std::string& name, std::string_view contents) {
    write_file_atomic(dir_ / name, contents);
    manifest_.outputs[analysis].push_back(name);
  }

 private:
  std::filesystem::path dir_;
  RunManifest& manifest_;
};

std::string profile_csv(const std::vector<ProfilePoint>& points) {
  std::string s = "x,lhs,rhs,uncertainty\n";
  for (const auto& p : points)
    s += format_double(p.x) + "," + format_double(p.lhs) + "," + format_double(p.rhs) + "," +
         format_double(p.uncertainty) + "\n";
  return s;
}

json profile_json(const std::vector<ProfilePoint>& points) {
  auto arr = json::array();
  for (const auto& p : points)
    arr.push_back({{"x", json_number(p.x)},
                   {"lhs", json_number(p.lhs)},
                   {"rhs", json_number(p.rhs)},
                   {"uncertainty", json_number(p.uncertainty)}});
  return arr;
}

std::vector<double> log_W_at(std::span<const ReplicateOutcome> outcomes, int n) {
  std::vector<double> out;
  for (const auto& r : records_at(outcomes, n)) out.push_back(r.log_W);
  return out;
}

// Fit of log D_n on log n, or null when the ladder is too short or D hits 0.
json try_rate_fit(const std::vector<std::pair<double, double>>& pairs, const std::string& what,
                  RunManifest& manifest, std::optional<RateFit>& fit) {
  const bool ok = pairs.size() >= 3 && std::all_of(pairs.begin(), pairs.end(), [](auto& p) {
                    return p.second > 0.0;
                  });
  if (!ok) {
    manifest.warnings.push_back(what + ": rate fit skipped (needs >= 3 horizons with D_n > 0)");
    return nullptr;
  }
  fit = rate_fit(pairs);
  return to_json(*fit);
}

}  // namespace

RunManifest run(const ExperimentPlan& plan) {
  const auto started = std::chrono::steady_clock::now();
  const auto& sc = plan.scenario;
  const auto& an = plan.analyses;
  const auto workers = plan.output.workers;

  RunManifest manifest;
  manifest.config_digest = sha256_hex(plan.config_text);
  manifest.master_seed = sc.master_seed;

  std::error_code ec;
  std::filesystem::create_directories(plan.output.dir, ec);
  if (ec) throw IoError("cannot create output directory " + plan.output.dir.string());
  Writer writer(plan.output.dir, manifest);

  const bool rate_analyses = an.clt || an.uniform_be || an.nonuniform_be || an.exact_rate ||
                                an.env_walk_baseline;
  const std::size_t oracle_draws = an.audit ? an.audit->oracle_draws : 1'000'000;
  const EnvConstants env = env_constants(sc.environment, sc.t, oracle_draws, sc.master_seed);
  if (rate_analyses && !(env.sigma > 0.0))
    throw ConfigError("analyses", "clt, Berry-Esseen, exact-rate and env-walk analyses need "
                                  "sigma > 0 but the environment gives sigma = 0");

  // Audit first; it labels the rate analyses instead of blocking them.
  std::optional<AssumptionReport> report;
  bool non_lattice_ok = true;
  if (an.audit) {
    report = audit_assumptions(sc.environment, sc.t, an.audit->alpha, an.audit->epsilon,
                               an.audit->p, an.audit->a, {oracle_draws, sc.master_seed});
    writer.write("audit", "audit.json", dump(to_json(*report)));
    manifest.hypotheses = report->closed_form_pass() ? "verified" : "unverified";
    for (const auto& e : report->entries) {
      if (e.pass) continue;
      if (e.method == AuditMethod::mc_oracle)
        manifest.warnings.push_back("audit: heuristic entry '" + e.name + "' did not pass");
      else
        manifest.warnings.push_back("audit: '" + e.name + "' fails; results are labelled "
                                    "hypotheses unverified");
    }
    non_lattice_ok = report->at("log m0(t) non-lattice").pass;
  }
  const std::string exact_label =
      !report ? "not-audited" : (non_lattice_ok && report->closed_form_pass() ? "verified"
                                                                              : "unverified");

  TheoryConstants constants;
  constants.mu = env.mu;
  constants.sigma = env.sigma;
  constants.mu3 = env.mu3;
  constants.env_provenance = env.provenance;
  if (an.audit) {
    constants.a_star = an.audit->a;
    if (an.audit->a > 2.0) constants.delta = berry_esseen_delta(an.audit->a);
  }

  // One coupled run covers every horizon any analysis needs.
  std::set<int> horizon_set(sc.horizons.begin(), sc.horizons.end());
  const int largest = *std::max_element(sc.horizons.begin(), sc.horizons.end());
  int log_W_big = 0;
  if (an.exact_rate) {
    log_W_big = an.exact_rate->log_W_horizon > 0 ? an.exact_rate->log_W_horizon : largest;
    if (log_W_big < 2)
      throw ConfigError("analyses.exact-rate.log_W_horizon", "E log W needs a horizon >= 2");
    horizon_set.insert(log_W_big);
    horizon_set.insert(log_W_big / 2);
  }
  if (an.w_increments)
    for (int n : an.w_increments->n) {
      horizon_set.insert(n);
      horizon_set.insert(2 * n);
    }

  const bool need_runs = an.needs_replicates() || plan.output.records;
  std::vector<ReplicateOutcome> outcomes;
  if (need_runs) {
    const PreparedScenario prepared(sc);
    SimulationOptions opts;
    opts.horizons.assign(horizon_set.begin(), horizon_set.end());
    outcomes = run_replicates(prepared, workers, opts);
    manifest.replicates_run = outcomes.size();
    manifest.replicates_aborted = aborted_count(outcomes);
    const double fraction = static_cast<double>(manifest.replicates_aborted) /
                            static_cast<double>(outcomes.size());
    if (fraction > plan.output.max_abort_fraction) {
      manifest.abort_rate_exceeded = true;
      manifest.warnings.push_back("CapExceeded: " + std::to_string(manifest.replicates_aborted) +
                                  " of " + std::to_string(outcomes.size()) +
                                  " replicates aborted; results are flagged");
    }
    if (manifest.replicates_aborted == outcomes.size())
      throw *outcomes.front().abort;
  }

  if (plan.output.records) {
    std::ostringstream csv;
    write_records_csv(csv, outcomes);
    writer.write("records", "records.csv", csv.str());
  }

  std::vector<int> ladder;
  for (int n : sc.horizons)
    if (n >= 1) ladder.push_back(n);
  const auto empirical = [&](int n) { return standardize(records_at(outcomes, n), env.mu, env.sigma); };

  if (an.clt) {
    auto table = json::array();
    for (int n : ladder) {
      const auto emp = empirical(n);
      const auto xs = emp.sorted_sample();
      double mean = 0.0;
      for (double x : xs) mean += x;
      mean /= static_cast<double>(xs.size());
      double var = 0.0;
      for (double x : xs) var += (x - mean) * (x - mean);
      var /= static_cast<double>(xs.size());
      table.push_back({{"n", n},
                       {"M", emp.size()},
                       {"mean", json_number(mean)},
                       {"variance", json_number(var)},
                       {"ks", json_number(ks_distance(emp))}});
    }
    writer.write("clt", "clt.json",
                 dump({{"mu", json_number(env.mu)},
                       {"sigma", json_number(env.sigma)},
                       {"hypotheses", manifest.hypotheses},
                       {"table", table}}));
  }

  if (an.uniform_be) {
    auto table = json::array();
    std::vector<std::pair<double, double>> pairs;
    for (int n : ladder) {
      const auto emp = empirical(n);
      const double ks = ks_distance(emp);
      table.push_back({{"n", n},
                       {"M", emp.size()},
                       {"ks", json_number(ks)},
                       {"dkw_halfwidth", json_number(dkw_budget(emp.size(), 0.05))}});
      pairs.emplace_back(n, ks);
    }
    std::optional<RateFit> fit;
    const json fit_json = try_rate_fit(pairs, "uniform-be", manifest, fit);
    writer.write("uniform-be", "uniform_be.json",
                 dump({{"table", table},
                       {"fit", fit_json},
                       {"delta_hat", fit ? json_number(-2.0 * fit->slope) : json(nullptr)},
                       {"hypotheses", manifest.hypotheses}}));
  }

  if (an.nonuniform_be) {
    const auto& spec = *an.nonuniform_be;
    auto table = json::array();
    std::vector<std::pair<double, double>> pairs;
    double lo = kInfinity, hi = 0.0;
    for (int n : ladder) {
      const auto emp = empirical(n);
      const double w = weighted_distance(emp, spec.lambda, spec.x_cap);
      const double scaled = w * std::pow(static_cast<double>(n), constants.delta / 2.0);
      lo = std::min(lo, scaled);
      hi = std::max(hi, scaled);
      table.push_back({{"n", n},
                       {"M", emp.size()},
                       {"ks", json_number(ks_distance(emp))},
                       {"weighted",
                        {{"lambda", json_number(spec.lambda)},
                         {"x_cap", json_number(spec.x_cap)},
                         {"value", json_number(w)}}},
                       {"scaled", json_number(scaled)},
                       {"dkw_halfwidth", json_number(dkw_budget(emp.size(), 0.05))}});
      pairs.emplace_back(n, w);
    }
    std::optional<RateFit> fit;
    const json fit_json = try_rate_fit(pairs, "nonuniform-be", manifest, fit);
    json out = {{"table", table},
                {"fit", fit_json},
                {"delta", json_number(constants.delta)},
                {"scaled_ratio", ladder.empty() ? json(nullptr) : json_number(hi / lo)},
                {"hypotheses", manifest.hypotheses}};
    if (an.audit) {
      const double delta = an.audit->a > 2.0 ? constants.delta : 0.0;
      if (delta > 0.0 && an.audit->p > std::max(1.0 + 1.0 / an.audit->epsilon,
                                                2.0 / an.audit->epsilon)) {
        const auto l0 = lambda_zero(an.audit->a, an.audit->epsilon, an.audit->p, delta);
        out["lambda0"] = json_number(l0.lambda0);
        if (spec.lambda > l0.lambda0)
          manifest.warnings.push_back("nonuniform-be: lambda exceeds lambda0");
      }
    }
    writer.write("nonuniform-be", "nonuniform_be.json", dump(out));
  }

  if (an.exact_rate) {
    const auto& spec = *an.exact_rate;
    const auto big = log_W_at(outcomes, log_W_big);
    const auto half = log_W_at(outcomes, log_W_big / 2);
    constants.E_log_W = log_W_limit_from_samples(big, half, log_W_big, spec.log_W_abs_tol);
    if (!constants.E_log_W.stabilized)
      manifest.warnings.push_back("exact-rate: E log W at n=" + std::to_string(log_W_big) +
                                  " and n=" + std::to_string(log_W_big / 2) +
                                  " disagree; the estimate is not stabilized");
    if (!non_lattice_ok)
      manifest.warnings.push_back("exact-rate: log m0(t) is lattice; hypotheses unverified");
    auto profiles = json::array();
    for (int n : ladder) {
      const auto emp = empirical(n);
      try {
        const auto pts = exact_rate_profile(emp, constants, spec.x_grid, spec.beta, spec.resolution);
        const std::string name = "exact_rate_n" + std::to_string(n) + ".csv";
        writer.write("exact-rate", name, profile_csv(pts));
        profiles.push_back({{"n", n}, {"M", emp.size()}, {"file", name}, {"points", profile_json(pts)}});
      } catch (const ResolutionTooCoarse& e) {
        manifest.gate_failures.push_back("exact-rate n=" + std::to_string(n) + ": " + e.what());
      }
    }
    writer.write("exact-rate", "exact_rate.json",
                 dump({{"constants", to_json(constants)},
                       {"hypotheses", exact_label},
                       {"profiles", profiles}}));
  }

  if (an.audit || an.exact_rate) {
    json theory = to_json(constants);
    if (an.audit && an.audit->a > 2.0 &&
        an.audit->p > std::max(1.0 + 1.0 / an.audit->epsilon, 2.0 / an.audit->epsilon))
      theory["lambda_zero"] =
          to_json(lambda_zero(an.audit->a, an.audit->epsilon, an.audit->p, constants.delta));
    writer.write("theory", "theory.json", dump(theory));
  }

  if (an.w_increments) {
    const auto& spec = *an.w_increments;
    std::vector<IncrementDiagnostics> diags;
    auto table = json::array();
    for (int n : spec.n) {
      const auto wn = log_W_at(outcomes, n);
      const auto wl = log_W_at(outcomes, 2 * n);
      std::vector<std::pair<double, double>> pairs;
      for (std::size_t i = 0; i < wn.size(); ++i) pairs.emplace_back(wn[i], wl[i]);
      diags.push_back(w_increment_diagnostics(pairs, n, 2 * n, spec.alpha, spec.thresholds));
      auto tails = json::array();
      for (const auto& [x, p] : diags.back().tails)
        tails.push_back({{"x", json_number(x)}, {"p", json_number(p)}});
      table.push_back({{"n", n},
                       {"l", 2 * n},
                       {"moment", json_number(diags.back().moment)},
                       {"tails", tails}});
    }
    json fit_json = nullptr;
    json log_rho = nullptr;
    if (std::all_of(diags.begin(), diags.end(), [](const auto& d) { return d.moment > 0.0; })) {
      const auto fit = increment_rate_fit(diags);
      fit_json = to_json(fit);
      log_rho = json_number(fit.slope);
    } else {
      manifest.warnings.push_back("w-increments: some moments are 0; no rate fit");
    }
    writer.write("w-increments", "w_increments.json",
                 dump({{"alpha", json_number(spec.alpha)},
                       {"table", table},
                       {"fit", fit_json},
                       {"log_rho_hat", log_rho}}));
  }

  if (an.env_walk_baseline) {
    const auto& spec = *an.env_walk_baseline;
    const PreparedScenario prepared(sc);
    const std::size_t count = spec.replicates > 0 ? spec.replicates : sc.replicates;
    const auto walks = run_env_walks(prepared, workers, count, ladder);
    TheoryConstants walk_constants = constants;
    walk_constants.E_log_W = LogWEstimate{};
    auto profiles = json::array();
    for (std::size_t h = 0; h < ladder.size(); ++h) {
      const int n = ladder[h];
      const auto emp = standardize_values(walks[h], n, env.sigma);
      try {
        const auto pts =
            exact_rate_profile(emp, walk_constants, spec.x_grid, spec.beta, spec.resolution);
        const std::string name = "env_walk_n" + std::to_string(n) + ".csv";
        writer.write("env-walk-baseline", name, profile_csv(pts));
        profiles.push_back({{"n", n},
                            {"M", emp.size()},
                            {"ks", json_number(ks_distance(emp))},
                            {"file", name},
                            {"points", profile_json(pts)}});
      } catch (const ResolutionTooCoarse& e) {
        manifest.gate_failures.push_back("env-walk-baseline n=" + std::to_string(n) + ": " +
                                         e.what());
      }
    }
    writer.write("env-walk-baseline", "env_walk.json",
                 dump({{"mu", json_number(env.mu)},
                       {"sigma", json_number(env.sigma)},
                       {"mu3", json_number(env.mu3)},
                       {"non_lattice", non_lattice_ok},
                       {"profiles", profiles}}));
  }

  manifest.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  write_file_atomic(plan.output.dir / "manifest.json", dump(manifest.to_json()));
  return manifest;
}

}  // namespace brwire
