#pragma once

// Parametric family of environment states: offspring law, displacement law
// and immigration law, with the closed-form generating quantities they admit.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "brwire/rng.hpp"

namespace brwire {

using Vector = Eigen::VectorXd;

/// Law of one displacement vector in R^d (or of an immigrant position).
class DisplacementLaw {
 public:
  struct PointMass {
    Vector c;
  };
  /// Independent coordinates.
  struct Gaussian {
    Vector mean;
    Vector var;
  };

  static DisplacementLaw point_mass(Vector c);
  static DisplacementLaw gaussian(Vector mean, Vector var);

  int dim() const noexcept { return dim_; }
  const std::variant<PointMass, Gaussian>& kind() const noexcept { return kind_; }

  /// log E e^{t.L}
  double log_mgf(const Vector& t) const;

  /// Mean and variance of the scalar t.L.
  std::pair<double, double> projected_moments(const Vector& t) const;

  /// Writes one draw (dim() coordinates) to `out`, shifted by `origin`
  /// when given.
  void sample(Stream& rng, double* out, const double* origin = nullptr) const;

 private:
  DisplacementLaw(int dim, std::variant<PointMass, Gaussian> kind)
      : dim_(dim), kind_(std::move(kind)) {}

  int dim_;
  std::variant<PointMass, Gaussian> kind_;
};

/// Offspring count law; every member puts zero mass on 0.
class OffspringLaw {
 public:
  struct Deterministic {
    int k;
  };
  struct OnePlusBernoulli {
    double q;
  };
  struct OnePlusPoisson {
    double lambda;
  };
  /// 1 + (failures before the first success), success probability rho.
  struct OnePlusGeometric {
    double rho;
  };
  using Kind = std::variant<Deterministic, OnePlusBernoulli, OnePlusPoisson, OnePlusGeometric>;

  static OffspringLaw deterministic(int k);
  static OffspringLaw one_plus_bernoulli(double q);
  static OffspringLaw one_plus_poisson(double lambda);
  static OffspringLaw one_plus_geometric(double rho);

  const Kind& kind() const noexcept { return kind_; }
  double mean() const noexcept;
  int sample(Stream& rng) const;

 private:
  explicit OffspringLaw(Kind kind) : kind_(kind) {}
  Kind kind_;
};

class ImmigrationLaw {
 public:
  struct None {};
  struct Deterministic {
    int v;
  };
  struct Poisson {
    double kappa;
  };
  using Count = std::variant<None, Deterministic, Poisson>;

  /// No immigrants; `dim` fixes the dimension of the (unused) position law.
  static ImmigrationLaw none(int dim);
  static ImmigrationLaw deterministic(int v, DisplacementLaw position);
  static ImmigrationLaw poisson(double kappa, DisplacementLaw position);

  const Count& count() const noexcept { return count_; }
  const DisplacementLaw& position() const noexcept { return position_; }
  double mean_count() const noexcept;
  int sample_count(Stream& rng) const;

 private:
  ImmigrationLaw(Count count, DisplacementLaw position)
      : count_(count), position_(std::move(position)) {}
  Count count_;
  DisplacementLaw position_;
};

/// N offspring with their displacements, stored flat (d per child).
struct Reproduction {
  int count = 0;
  std::vector<double> displacements;
};

/// Immigrant batch with absolute positions, stored flat (d per immigrant).
struct ImmigrantBatch {
  int count = 0;
  std::vector<double> positions;
};

/// Sampler for reproduction laws outside the product-form family. It must
/// fill `count >= 1` and `count * d` displacement coordinates.
using ReproductionSampler = std::function<void(Stream&, Reproduction&)>;

struct EnvState {
  std::string label;
  OffspringLaw offspring;
  DisplacementLaw displacement;
  ImmigrationLaw immigration;
  /// When set, reproduction is drawn from this sampler and no closed form
  /// is available.
  ReproductionSampler custom_reproduction;

  bool product_form() const noexcept { return !custom_reproduction; }
  int dim() const noexcept { return displacement.dim(); }
};

struct WeightedState {
  EnvState state;
  double probability;
};

/// Finite-support law of an environment state; generations are i.i.d.
class EnvironmentLaw {
 public:
  explicit EnvironmentLaw(std::vector<WeightedState> states);

  std::size_t size() const noexcept { return states_.size(); }
  const EnvState& state(std::size_t i) const { return states_[i].state; }
  double probability(std::size_t i) const { return states_[i].probability; }
  const std::vector<WeightedState>& states() const noexcept { return states_; }
  int dim() const noexcept { return states_.front().state.dim(); }

  std::size_t sample_index(Stream& rng) const;

 private:
  std::vector<WeightedState> states_;
  std::vector<double> cumulative_;
};

struct Scenario {
  static constexpr std::size_t kDefaultPopulationCap = 10'000'000;

  EnvironmentLaw environment;
  int d = 1;
  Vector t;
  std::vector<int> horizons;
  std::size_t replicates = 1;
  std::size_t population_cap = kDefaultPopulationCap;
  std::uint64_t master_seed = 0;

  /// Throws InvalidParameter when the fields are inconsistent.
  void validate() const;
};

/// E sum_i e^{t.L_i} = E[N] E[e^{t.L}] for a product-form state.
double mean_mgf(const EnvState& state, const Vector& t);
/// log of mean_mgf, evaluated without forming the exponential.
double log_mean_mgf(const EnvState& state, const Vector& t);

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t draws = 0;
};

/// Monte Carlo oracle for m(t); valid for every state, including custom
/// samplers.
Estimate mean_mgf_oracle(const EnvState& state, const Vector& t, std::size_t draws, Stream rng);

Reproduction sample_reproduction(const EnvState& state, Stream& rng);
/// Buffer-reusing variant for the simulation hot loop.
void sample_reproduction(const EnvState& state, Stream& rng, Reproduction& out);

ImmigrantBatch sample_immigration(const EnvState& state, Stream& rng);
void sample_immigration(const EnvState& state, Stream& rng, ImmigrantBatch& out);

/// log m_s(t) for every state. States without a closed form use the
/// Monte Carlo oracle with `oracle_draws` draws keyed by `oracle_seed`.
std::vector<double> log_means(const EnvironmentLaw& env, const Vector& t,
                              std::size_t oracle_draws = 1'000'000,
                              std::uint64_t oracle_seed = 0);

}  // namespace brwire
