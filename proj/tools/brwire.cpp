// Command-line front end: audit | simulate | analyze | rates | exact-rate | lambda0

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "brwire/config.hpp"
#include "brwire/errors.hpp"
#include "brwire/experiment.hpp"
#include "brwire/theory.hpp"

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kGate = 3, kAbortRate = 4 };

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> replicates;
  std::optional<std::string> out;
  std::optional<std::size_t> workers;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "Configuration document (JSON)")->required();
  cmd->add_option("--seed", f.seed, "Master seed (overrides the config)");
  cmd->add_option("--replicates", f.replicates, "Replicate count M")->check(CLI::PositiveNumber);
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--workers", f.workers, "Worker threads")->check(CLI::PositiveNumber);
}

brwire::ExperimentPlan load(const CommonFlags& f) {
  auto plan = brwire::load_plan(f.config);
  brwire::RunOverrides o;
  o.seed = f.seed;
  o.replicates = f.replicates;
  if (f.out) o.out = *f.out;
  o.workers = f.workers;
  brwire::apply_overrides(plan, o);
  return plan;
}

int finish(const brwire::RunManifest& m) {
  std::cout << m.to_json().dump(2) << "\n";
  for (const auto& w : m.warnings) std::cerr << "warning: " << w << "\n";
  for (const auto& g : m.gate_failures) std::cerr << "gate failure: " << g << "\n";
  if (!m.gate_failures.empty()) return kGate;
  if (m.abort_rate_exceeded) return kAbortRate;
  return kOk;
}

int cmd_audit(const CommonFlags& f) {
  auto plan = load(f);
  if (!plan.analyses.audit)
    throw brwire::ConfigError("analyses.audit", "required by the audit subcommand");
  const auto& a = *plan.analyses.audit;
  const auto report = brwire::audit_assumptions(plan.scenario.environment, plan.scenario.t,
                                                a.alpha, a.epsilon, a.p, a.a,
                                                {a.oracle_draws, plan.scenario.master_seed});
  const auto j = brwire::to_json(report);
  std::cout << j.dump(2) << "\n";
  if (f.out) {
    std::filesystem::create_directories(*f.out);
    brwire::write_file_atomic(std::filesystem::path(*f.out) / "audit.json", j.dump(2) + "\n");
  }
  for (const auto& e : report.entries)
    if (!e.pass && e.method == brwire::AuditMethod::mc_oracle)
      std::cerr << "warning: heuristic entry '" << e.name << "' did not pass\n";
  return report.closed_form_pass() ? kOk : kGate;
}

int cmd_run(const CommonFlags& f, const std::string& which) {
  auto plan = load(f);
  auto& an = plan.analyses;
  if (which == "simulate") {
    an = brwire::AnalysisSet{};
    plan.output.records = true;
  } else if (which == "rates") {
    an.exact_rate.reset();
    an.env_walk_baseline.reset();
    if (!an.clt && !an.uniform_be && !an.nonuniform_be && !an.w_increments) an.uniform_be = true;
  } else if (which == "exact-rate") {
    an.clt = an.uniform_be = false;
    an.nonuniform_be.reset();
    an.w_increments.reset();
    if (!an.exact_rate && !an.env_walk_baseline) an.exact_rate = brwire::ExactRateSpec{};
  }
  return finish(brwire::run(plan));
}

double parse_real(const std::string& s, const std::string& name) {
  if (s == "inf" || s == "Inf" || s == "infinity") return brwire::kInfinity;
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw brwire::ConfigError(name, "expected a number or inf");
  return x;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Branching random walk with immigration in a random environment"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string which;
  for (const char* name : {"audit", "simulate", "analyze", "rates", "exact-rate"}) {
    const std::map<std::string, std::string> help{
        {"audit", "Evaluate the model hypotheses"},
        {"simulate", "Simulate replicates and write the records CSV"},
        {"analyze", "Run every analysis listed in the config"},
        {"rates", "CLT, Berry-Esseen and W-increment rate analyses"},
        {"exact-rate", "Exact-rate profile and env-walk baseline"}};
    auto* cmd = app.add_subcommand(name, help.at(name));
    add_common(cmd, flags);
    cmd->callback([&which, name] { which = name; });
  }

  std::string a_star = "inf", epsilon, p, delta = "1";
  auto* l0 = app.add_subcommand("lambda0", "Evaluate r*, q*, eta* and lambda0");
  l0->add_option("--a-star", a_star, "Moment order a* (number or inf)");
  l0->add_option("--epsilon", epsilon, "epsilon > 0")->required();
  l0->add_option("--p", p, "p > max{1 + 1/epsilon, 2/epsilon}")->required();
  l0->add_option("--delta", delta, "delta in (0, 1]");
  l0->callback([&which] { which = "lambda0"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (which == "lambda0") {
      const auto r = brwire::lambda_zero(parse_real(a_star, "--a-star"),
                                         parse_real(epsilon, "--epsilon"), parse_real(p, "--p"),
                                         parse_real(delta, "--delta"));
      std::cout << brwire::to_json(r).dump(2) << "\n";
      return kOk;
    }
    if (which == "audit") return cmd_audit(flags);
    return cmd_run(flags, which);
  } catch (const brwire::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const brwire::InvalidParameter& e) {
    std::cerr << "invalid parameter: " << e.what() << "\n";
    return kConfig;
  } catch (const brwire::CapExceeded& e) {
    std::cerr << "every replicate exceeded the population cap: " << e.what() << "\n";
    return kAbortRate;
  } catch (const brwire::ResolutionTooCoarse& e) {
    std::cerr << "gate failure: " << e.what() << "\n";
    return kGate;
  } catch (const brwire::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}
