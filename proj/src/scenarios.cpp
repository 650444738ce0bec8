#include "brwire/scenarios.hpp"

#include <cmath>
#include <numbers>

namespace brwire::scenarios {

namespace {

Vector scalar(double x) { return Vector::Constant(1, x); }

EnvState state(std::string label, OffspringLaw offspring, DisplacementLaw displacement,
               ImmigrationLaw immigration) {
  return EnvState{std::move(label), offspring, std::move(displacement), std::move(immigration), {}};
}

Scenario make(EnvironmentLaw env, double t, std::size_t replicates, std::uint64_t seed) {
  return Scenario{std::move(env), 1, scalar(t), {8, 16, 32, 64}, replicates,
                  Scenario::kDefaultPopulationCap, seed};
}

}  // namespace

Scenario two_state_a(bool immigration, std::size_t replicates, std::uint64_t seed) {
  const auto imm = [&] {
    return immigration ? ImmigrationLaw::poisson(1.0, DisplacementLaw::gaussian(scalar(0.0),
                                                                                 scalar(1.0)))
                       : ImmigrationLaw::none(1);
  };
  EnvironmentLaw env({
      {state("A", OffspringLaw::one_plus_bernoulli(0.2),
             DisplacementLaw::gaussian(scalar(0.1), scalar(1.0)), imm()),
       0.5},
      {state("B", OffspringLaw::one_plus_bernoulli(0.05),
             DisplacementLaw::gaussian(scalar(-0.1), scalar(1.0)), imm()),
       0.5},
  });
  return make(std::move(env), 1.0, replicates, seed);
}

Scenario doubling_with_immigrant(std::size_t replicates, std::uint64_t seed) {
  EnvironmentLaw env({
      {state("D", OffspringLaw::deterministic(2), DisplacementLaw::point_mass(scalar(0.0)),
             ImmigrationLaw::deterministic(1, DisplacementLaw::point_mass(scalar(0.0)))),
       1.0},
  });
  return make(std::move(env), 0.0, replicates, seed);
}

Scenario single_lineage(double c, std::size_t replicates, std::uint64_t seed) {
  EnvironmentLaw env({
      {state("L", OffspringLaw::deterministic(1), DisplacementLaw::point_mass(scalar(c)),
             ImmigrationLaw::none(1)),
       1.0},
  });
  return make(std::move(env), 1.0, replicates, seed);
}

Scenario three_state_skew(std::size_t replicates, std::uint64_t seed) {
  const auto lineage = [](std::string label, double c) {
    return state(std::move(label), OffspringLaw::deterministic(1),
                 DisplacementLaw::point_mass(scalar(c)), ImmigrationLaw::none(1));
  };
  EnvironmentLaw env({
      {lineage("low", 0.0), 0.7},
      {lineage("mid", 1.0), 0.2},
      {lineage("high", 1.0 + std::numbers::sqrt2), 0.1},
  });
  auto sc = make(std::move(env), 1.0, replicates, seed);
  sc.horizons = {256};
  return sc;
}

}  // namespace brwire::scenarios
