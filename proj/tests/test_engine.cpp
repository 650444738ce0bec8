#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <sstream>

#include "doctest.h"

#include "brwire/engine.hpp"
#include "brwire/scenarios.hpp"

using namespace brwire;

namespace {

Vector scalar(double x) { return Vector::Constant(1, x); }

EnvState lineage_state(int k, double c, std::optional<ImmigrationLaw> imm = std::nullopt) {
  return EnvState{"s", OffspringLaw::deterministic(k), DisplacementLaw::point_mass(scalar(c)),
                  imm ? *imm : ImmigrationLaw::none(1), {}};
}

Scenario single_state(EnvState s, double t, std::vector<int> horizons, std::size_t M = 1) {
  return Scenario{EnvironmentLaw({{std::move(s), 1.0}}), 1, scalar(t), std::move(horizons), M,
                  Scenario::kDefaultPopulationCap, 42};
}

}  // namespace

TEST_CASE("hoisted generation streams match the keyed particle streams") {
  const ReplicateStreams streams(42, 7);
  for (int g : {0, 1, 63}) {
    const GenerationStreams gen = streams.particles(g);
    for (std::uint64_t u : {0ULL, 1ULL, 999ULL}) {
      Stream a = streams.particle(g, u);
      Stream b = gen.particle(u);
      CHECK(a() == b());
      CHECK(a() == b());
    }
  }
}

TEST_CASE("log_partition") {
  const ReplicateStreams streams(1, 0);
  const GenerationState origin(1);
  CHECK(log_partition(origin, scalar(1.0)) == 0.0);

  const auto two_points = step(
      origin,
      lineage_state(1, std::log(3.0),
                    ImmigrationLaw::deterministic(1, DisplacementLaw::point_mass(scalar(0.0)))),
      streams, 100);
  CHECK(log_partition(two_points, scalar(1.0)) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  CHECK(log_partition(two_points, scalar(1.0), InitialOnly{}) ==
        doctest::Approx(std::log(3.0)).epsilon(1e-15));

  const auto far = step(origin, lineage_state(2, 1000.0), streams, 100);
  const double v = log_partition(far, scalar(1.0));
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-15));

  const auto tagged = step(GenerationState(1, true), lineage_state(2, 1000.0), streams, 100);
  CHECK_THROWS_AS(log_partition(tagged, scalar(1.0), ImmigrantLine{1, 1}), EmptySelection);
}

TEST_CASE("step") {
  const ReplicateStreams streams(1, 0);
  const GenerationState origin(1, true);

  const auto two = step(origin, lineage_state(2, 0.0), streams, 100);
  CHECK(two.size() == 2);
  CHECK(two.generation() == 1);
  CHECK(two.positions()(0, 0) == 0.0);
  CHECK(two.positions()(0, 1) == 0.0);

  const auto mixed = step(
      origin,
      lineage_state(1, 1.0, ImmigrationLaw::deterministic(1, DisplacementLaw::point_mass(scalar(5.0)))),
      streams, 100);
  REQUIRE(mixed.size() == 2);
  CHECK(mixed.position(0)[0] == 1.0);
  CHECK(mixed.lineage()[0].initial());
  CHECK(mixed.position(1)[0] == 5.0);
  CHECK(mixed.lineage()[1].join_generation == 1);
  CHECK(mixed.lineage()[1].immigrant_index == 1);

  CHECK_THROWS_AS(step(two, lineage_state(2, 0.0), streams, 3), CapExceeded);
}

TEST_CASE("single lineage: log Z_n = n t c and log W_n = 0") {
  const auto sc = single_state(lineage_state(1, 0.7), 1.5, {0, 1, 5, 20});
  const auto traj = simulate_replicate(sc, 0);
  REQUIRE(traj.records.size() == 4);
  for (const auto& r : traj.records) {
    CHECK(r.log_Z == doctest::Approx(r.n * 1.5 * 0.7).epsilon(1e-13));
    CHECK(std::abs(r.log_W) <= 1e-12);
    CHECK(r.S == 0.0);
    CHECK(r.pop == 1);
  }
}

TEST_CASE("doubling with one immigrant: Z_n = 2^{n+1} - 1") {
  const auto sc = scenarios::doubling_with_immigrant();
  SimulationOptions opts;
  opts.horizons = {0, 1, 2, 3, 5, 10, 20};
  const auto traj = simulate_replicate(sc, 0, opts);
  for (const auto& r : traj.records) {
    const double Z = std::ldexp(1.0, r.n + 1) - 1.0;
    CHECK(r.log_Z == doctest::Approx(std::log(Z)).epsilon(1e-14));
    CHECK(std::exp(r.log_W) == doctest::Approx(2.0 - std::ldexp(1.0, -r.n)).epsilon(1e-14));
    CHECK(std::abs(r.log_Wbar) <= 1e-13);
    CHECK(r.pop == static_cast<std::size_t>(Z));
    CHECK(r.log_W == r.log_Z - r.log_Pi);
    // Pi_n is tallied per state, so a single state gives one rounded product.
    CHECK(r.log_Pi == r.n * std::log(2.0));
    CHECK(r.log_Z == std::log(Z));
  }
}

TEST_CASE("records are bit-identical in any execution order and worker count") {
  auto sc = scenarios::two_state_a(true, 64, 99);
  sc.horizons = {4, 8, 12};
  const PreparedScenario prepared(sc);
  std::vector<std::uint64_t> order(64);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), std::mt19937_64(1));
  std::vector<Trajectory> shuffled(64);
  for (auto r : order) shuffled[r] = simulate_replicate(prepared, r);

  for (std::size_t workers : {1, 4, 16}) {
    const auto outcomes = run_replicates(prepared, workers);
    REQUIRE(outcomes.size() == 64);
    for (std::size_t r = 0; r < 64; ++r) {
      REQUIRE(outcomes[r].records.size() == shuffled[r].records.size());
      for (std::size_t h = 0; h < outcomes[r].records.size(); ++h) {
        const auto& a = outcomes[r].records[h];
        const auto& b = shuffled[r].records[h];
        CHECK(std::memcmp(&a.log_Z, &b.log_Z, sizeof(double)) == 0);
        CHECK(std::memcmp(&a.log_W, &b.log_W, sizeof(double)) == 0);
        CHECK(a.pop == b.pop);
      }
    }
  }
}

TEST_CASE("Z_n >= Zbar_n and log W = log Z - log Pi on every record") {
  auto sc = scenarios::two_state_a(true, 50, 5);
  sc.horizons = {1, 3, 7, 15};
  for (std::uint64_t r = 0; r < 50; ++r) {
    for (const auto& rec : simulate_replicate(sc, r).records) {
      CHECK(rec.log_Z >= rec.log_Zbar);
      CHECK(rec.log_W == rec.log_Z - rec.log_Pi);
      CHECK(rec.log_Wbar == rec.log_Zbar - rec.log_Pi);
      CHECK(rec.pop >= 1);
    }
  }
}

TEST_CASE("removing immigration never increases Z_n on a shared path") {
  auto with = scenarios::two_state_a(true, 40, 17);
  auto without = scenarios::two_state_a(false, 40, 17);
  with.horizons = without.horizons = {2, 5, 10, 20};
  for (std::uint64_t r = 0; r < 40; ++r) {
    const auto a = simulate_replicate(with, r);
    const auto b = simulate_replicate(without, r);
    CHECK(a.environment == b.environment);
    for (std::size_t h = 0; h < a.records.size(); ++h) {
      CHECK(b.records[h].log_Z <= a.records[h].log_Z);
      CHECK(b.records[h].log_Zbar == a.records[h].log_Zbar);
      CHECK(b.records[h].log_Z == b.records[h].log_Zbar);
    }
  }
}

TEST_CASE("decomposition residual") {
  SimulationOptions opts;
  opts.track_lineage = true;

  auto none = scenarios::two_state_a(false, 1, 3);
  none.horizons = {6};
  const auto tn = simulate_replicate(none, 0, opts);
  CHECK(decomposition_residual(*tn.ledger, tn.records.back(), 6) == 0.0);

  auto dbl = scenarios::doubling_with_immigrant();
  dbl.horizons = {3};
  const auto td = simulate_replicate(dbl, 0, opts);
  CHECK(std::exp(td.records.back().log_W) == doctest::Approx(15.0 / 8.0));
  CHECK(decomposition_residual(*td.ledger, td.records.back(), 3) <= 1e-12);

  auto rnd = scenarios::two_state_a(true, 20, 8);
  rnd.horizons = {2, 5, 10};
  for (std::uint64_t r = 0; r < 20; ++r) {
    const auto t = simulate_replicate(rnd, r, opts);
    for (const auto& rec : t.records) CHECK(decomposition_residual(*t.ledger, rec, rec.n) <= 1e-9);
  }
}

TEST_CASE("immigrant line ledger starts each line at its own score") {
  SimulationOptions opts;
  opts.track_lineage = true;
  auto sc = scenarios::two_state_a(true, 1, 21);
  sc.horizons = {6};
  const auto t = simulate_replicate(sc, 0, opts);
  for (const auto& line : t.ledger->lines()) {
    REQUIRE(!line.log_numerator.empty());
    CHECK(line.log_numerator.front() == line.score);
  }
}

TEST_CASE("cap exceeded carries the replicate index") {
  auto sc = scenarios::doubling_with_immigrant(5);
  sc.horizons = {12};
  sc.population_cap = 1000;
  try {
    simulate_replicate(sc, 3);
    FAIL("expected CapExceeded");
  } catch (const CapExceeded& e) {
    CHECK(e.replicate() == 3);
    CHECK(e.generation() == 9);
  }
  const auto outcomes = run_replicates(PreparedScenario(sc), 2);
  CHECK(std::all_of(outcomes.begin(), outcomes.end(), [](const auto& o) { return o.abort.has_value(); }));
  std::ostringstream csv;
  write_records_csv(csv, outcomes);
  CHECK(csv.str().find("3,9,,,,,,,,CapExceeded") != std::string::npos);
}

TEST_CASE("records CSV layout") {
  auto sc = scenarios::doubling_with_immigrant(2);
  sc.horizons = {5};
  const auto outcomes = run_replicates(PreparedScenario(sc), 1);
  std::ostringstream csv;
  write_records_csv(csv, outcomes);
  std::istringstream in(csv.str());
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "replicate,n,log_Z,log_Zbar,log_Pi,S,log_W,log_Wbar,pop,status");
  CHECK(row.rfind("0,5," + format_double(std::log(63.0)), 0) == 0);
  CHECK(row.substr(row.size() - 5) == "63,ok");
}

TEST_CASE("environment walk") {
  const auto single = scenarios::single_lineage(0.5, 1, 1);
  const PreparedScenario ps(single);
  for (const auto& [n, S] : simulate_env_walk(ps, 0, {1, 5, 50})) CHECK(S == 0.0);

  // Two equally likely states with log m = mu +- sigma.
  const auto state = [](std::string label, double c) {
    return EnvState{std::move(label), OffspringLaw::deterministic(1),
                    DisplacementLaw::point_mass(scalar(c)), ImmigrationLaw::none(1), {}};
  };
  const double sigma = 0.3;
  Scenario walk{EnvironmentLaw({{state("u", 1.0 + sigma), 0.5}, {state("d", 1.0 - sigma), 0.5}}),
                1, scalar(1.0), {16}, 100'000, Scenario::kDefaultPopulationCap, 77};
  const PreparedScenario pw(walk);
  CHECK(pw.mu == doctest::Approx(1.0));
  const auto samples = run_env_walks(pw, 4, 100'000, {16})[0];
  double m2 = 0.0, m4 = 0.0, m1 = 0.0;
  for (double s : samples) {
    const double steps = s / sigma;
    CHECK(std::abs(steps - std::round(steps)) <= 1e-9);
    m1 += s;
    m2 += s * s;
    m4 += s * s * s * s;
  }
  const double M = static_cast<double>(samples.size());
  m1 /= M;
  m2 /= M;
  m4 /= M;
  const double var_hat = m2 / 16.0;
  const double se = std::sqrt((m4 - m2 * m2) / M) / 16.0;
  CHECK(std::abs(var_hat - sigma * sigma) <= 5 * se);
  CHECK(std::abs(m1) <= 5 * std::sqrt(m2 / M));

  // The walk sees the same environment path as the particle simulation.
  auto tsa = scenarios::two_state_a(true, 1, 4);
  tsa.horizons = {10};
  const PreparedScenario pt(tsa);
  CHECK(simulate_env_walk(pt, 0, {10})[0].second ==
        doctest::Approx(simulate_replicate(pt, 0).records[0].S).epsilon(1e-14));
}
