#pragma once

// Built-in scenarios with hand-computable constants.

#include <cstddef>
#include <cstdint>

#include "brwire/model.hpp"

namespace brwire::scenarios {

/// Two equally likely states in d = 1 at t = 1:
///   A: 1 + Bernoulli(0.2) offspring, N(0.1, 1) displacements;
///   B: 1 + Bernoulli(0.05) offspring, N(-0.1, 1) displacements.
/// With `immigration`, both states receive Poisson(1) immigrants at N(0, 1).
Scenario two_state_a(bool immigration, std::size_t replicates = 1, std::uint64_t seed = 0);

/// Single state, k = 2 offspring at the parent's position, one immigrant at
/// the origin per generation, t = 0: Z_n = 2^{n+1} - 1, W_n = 2 - 2^{-n}.
Scenario doubling_with_immigrant(std::size_t replicates = 1, std::uint64_t seed = 0);

/// Single state, one child displaced by `c`, no immigration: W_n = 1.
Scenario single_lineage(double c = 1.0, std::size_t replicates = 1, std::uint64_t seed = 0);

/// Three states with single children and point-mass displacements
/// c in {0, 1, 1 + sqrt 2} (probabilities 0.7, 0.2, 0.1) at t = 1, so
/// log m_0(t) = c: non-lattice and skewed.
Scenario three_state_skew(std::size_t replicates = 1, std::uint64_t seed = 0);

}  // namespace brwire::scenarios
