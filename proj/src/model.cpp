#include "brwire/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include <boost/random/normal_distribution.hpp>

#include "brwire/errors.hpp"

namespace brwire {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidParameter(what);
}

// Ziggurat sampler; stateless between calls, so draws depend only on the stream.
double standard_normal(Stream& rng) {
  boost::random::normal_distribution<double> normal;
  return normal(rng);
}

void check_dim(const Vector& t, int dim) {
  require(t.size() == dim, "t has dimension " + std::to_string(t.size()) + ", law has " +
                               std::to_string(dim));
}

}  // namespace

// ---------------------------------------------------------------------------
// DisplacementLaw

DisplacementLaw DisplacementLaw::point_mass(Vector c) {
  require(c.size() >= 1, "point-mass displacement needs d >= 1");
  require(c.allFinite(), "point-mass location must be finite");
  const int d = static_cast<int>(c.size());
  return DisplacementLaw(d, PointMass{std::move(c)});
}

DisplacementLaw DisplacementLaw::gaussian(Vector mean, Vector var) {
  require(mean.size() >= 1, "gaussian displacement needs d >= 1");
  require(mean.size() == var.size(), "gaussian mean and var lengths differ");
  require(mean.allFinite() && var.allFinite(), "gaussian parameters must be finite");
  require((var.array() >= 0.0).all(), "gaussian variances must be >= 0");
  const int d = static_cast<int>(mean.size());
  return DisplacementLaw(d, Gaussian{std::move(mean), std::move(var)});
}

double DisplacementLaw::log_mgf(const Vector& t) const {
  check_dim(t, dim_);
  return std::visit(Overloaded{
                        [&](const PointMass& p) { return t.dot(p.c); },
                        [&](const Gaussian& g) {
                          return t.dot(g.mean) + 0.5 * t.array().square().matrix().dot(g.var);
                        },
                    },
                    kind_);
}

std::pair<double, double> DisplacementLaw::projected_moments(const Vector& t) const {
  check_dim(t, dim_);
  return std::visit(Overloaded{
                        [&](const PointMass& p) { return std::pair{t.dot(p.c), 0.0}; },
                        [&](const Gaussian& g) {
                          return std::pair{t.dot(g.mean),
                                           t.array().square().matrix().dot(g.var)};
                        },
                    },
                    kind_);
}

void DisplacementLaw::sample(Stream& rng, double* out, const double* origin) const {
  if (const auto* p = std::get_if<PointMass>(&kind_)) {
    for (int j = 0; j < dim_; ++j) out[j] = p->c[j] + (origin ? origin[j] : 0.0);
    return;
  }
  const auto& g = std::get<Gaussian>(kind_);
  for (int j = 0; j < dim_; ++j) {
    const double sd = std::sqrt(g.var[j]);
    out[j] = g.mean[j] + (sd > 0.0 ? sd * standard_normal(rng) : 0.0) + (origin ? origin[j] : 0.0);
  }
}

// ---------------------------------------------------------------------------
// OffspringLaw

OffspringLaw OffspringLaw::deterministic(int k) {
  require(k >= 1, "deterministic offspring count must be >= 1");
  return OffspringLaw(Deterministic{k});
}

OffspringLaw OffspringLaw::one_plus_bernoulli(double q) {
  require(q >= 0.0 && q <= 1.0, "bernoulli parameter must lie in [0, 1]");
  return OffspringLaw(OnePlusBernoulli{q});
}

OffspringLaw OffspringLaw::one_plus_poisson(double lambda) {
  require(lambda >= 0.0 && std::isfinite(lambda), "poisson parameter must be >= 0");
  return OffspringLaw(OnePlusPoisson{lambda});
}

OffspringLaw OffspringLaw::one_plus_geometric(double rho) {
  require(rho > 0.0 && rho <= 1.0, "geometric success probability must lie in (0, 1]");
  return OffspringLaw(OnePlusGeometric{rho});
}

double OffspringLaw::mean() const noexcept {
  return std::visit(Overloaded{
                        [](const Deterministic& d) { return static_cast<double>(d.k); },
                        [](const OnePlusBernoulli& b) { return 1.0 + b.q; },
                        [](const OnePlusPoisson& p) { return 1.0 + p.lambda; },
                        [](const OnePlusGeometric& g) { return 1.0 / g.rho; },
                    },
                    kind_);
}

int OffspringLaw::sample(Stream& rng) const {
  return std::visit(Overloaded{
                        [](const Deterministic& d) { return d.k; },
                        [&](const OnePlusBernoulli& b) { return 1 + (rng.uniform() < b.q ? 1 : 0); },
                        [&](const OnePlusPoisson& p) {
                          if (p.lambda == 0.0) return 1;
                          return 1 + std::poisson_distribution<int>(p.lambda)(rng);
                        },
                        [&](const OnePlusGeometric& g) {
                          if (g.rho == 1.0) return 1;
                          return 1 + std::geometric_distribution<int>(g.rho)(rng);
                        },
                    },
                    kind_);
}

// ---------------------------------------------------------------------------
// ImmigrationLaw

ImmigrationLaw ImmigrationLaw::none(int dim) {
  return ImmigrationLaw(None{}, DisplacementLaw::point_mass(Vector::Zero(dim)));
}

ImmigrationLaw ImmigrationLaw::deterministic(int v, DisplacementLaw position) {
  require(v >= 0, "deterministic immigrant count must be >= 0");
  return ImmigrationLaw(Deterministic{v}, std::move(position));
}

ImmigrationLaw ImmigrationLaw::poisson(double kappa, DisplacementLaw position) {
  require(kappa >= 0.0 && std::isfinite(kappa), "poisson immigration rate must be >= 0");
  return ImmigrationLaw(Poisson{kappa}, std::move(position));
}

double ImmigrationLaw::mean_count() const noexcept {
  return std::visit(Overloaded{
                        [](const None&) { return 0.0; },
                        [](const Deterministic& d) { return static_cast<double>(d.v); },
                        [](const Poisson& p) { return p.kappa; },
                    },
                    count_);
}

int ImmigrationLaw::sample_count(Stream& rng) const {
  return std::visit(Overloaded{
                        [](const None&) { return 0; },
                        [](const Deterministic& d) { return d.v; },
                        [&](const Poisson& p) {
                          if (p.kappa == 0.0) return 0;
                          return std::poisson_distribution<int>(p.kappa)(rng);
                        },
                    },
                    count_);
}

// ---------------------------------------------------------------------------
// EnvironmentLaw / Scenario

EnvironmentLaw::EnvironmentLaw(std::vector<WeightedState> states) : states_(std::move(states)) {
  require(!states_.empty(), "environment law needs at least one state");
  const int d = states_.front().state.dim();
  double total = 0.0;
  for (std::size_t i = 0; i < states_.size(); ++i) {
    const auto& ws = states_[i];
    require(ws.probability >= 0.0 && std::isfinite(ws.probability),
            "state probabilities must be >= 0");
    require(ws.state.dim() == d, "all states must share the dimension");
    require(ws.state.immigration.position().dim() == d,
            "immigrant position dimension differs from the scenario dimension");
    for (std::size_t j = 0; j < i; ++j)
      require(states_[j].state.label != ws.state.label,
              "duplicate state label '" + ws.state.label + "'");
    total += ws.probability;
    cumulative_.push_back(total);
  }
  require(std::abs(total - 1.0) <= 1e-12, "state probabilities must sum to 1");
}

std::size_t EnvironmentLaw::sample_index(Stream& rng) const {
  if (states_.size() == 1) return 0;
  const double u = rng.uniform() * cumulative_.back();
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  return std::min(static_cast<std::size_t>(it - cumulative_.begin()), states_.size() - 1);
}

void Scenario::validate() const {
  require(d >= 1, "dimension must be >= 1");
  require(environment.dim() == d, "environment dimension differs from d");
  require(t.size() == d, "t must have length d");
  require(t.allFinite(), "t must be finite");
  require(!horizons.empty(), "at least one horizon is required");
  require(horizons.front() >= 0, "horizons must be >= 0");
  require(std::adjacent_find(horizons.begin(), horizons.end(),
                             [](int a, int b) { return b <= a; }) == horizons.end(),
          "horizons must be strictly increasing");
  require(replicates >= 1, "replicates must be >= 1");
  require(population_cap >= 1, "population_cap must be >= 1");
}

// ---------------------------------------------------------------------------
// Closed forms and sampling

double log_mean_mgf(const EnvState& state, const Vector& t) {
  if (!state.product_form())
    throw UnsupportedLaw("state '" + state.label +
                         "' has a custom reproduction law; use the sampling oracle");
  return std::log(state.offspring.mean()) + state.displacement.log_mgf(t);
}

double mean_mgf(const EnvState& state, const Vector& t) {
  return std::exp(log_mean_mgf(state, t));
}

void sample_reproduction(const EnvState& state, Stream& rng, Reproduction& out) {
  const int d = state.dim();
  if (!state.product_form()) {
    state.custom_reproduction(rng, out);
    if (out.count < 1)
      throw InvalidParameter("custom sampler for state '" + state.label + "' produced N < 1");
    if (out.displacements.size() != static_cast<std::size_t>(out.count) * d)
      throw InvalidParameter("custom sampler for state '" + state.label +
                             "' produced the wrong number of coordinates");
    return;
  }
  out.count = state.offspring.sample(rng);
  out.displacements.resize(static_cast<std::size_t>(out.count) * d);
  for (int i = 0; i < out.count; ++i)
    state.displacement.sample(rng, out.displacements.data() + std::size_t(i) * d);
}

Reproduction sample_reproduction(const EnvState& state, Stream& rng) {
  Reproduction out;
  sample_reproduction(state, rng, out);
  return out;
}

void sample_immigration(const EnvState& state, Stream& rng, ImmigrantBatch& out) {
  const auto& law = state.immigration;
  const int d = law.position().dim();
  out.count = law.sample_count(rng);
  out.positions.resize(static_cast<std::size_t>(out.count) * d);
  for (int i = 0; i < out.count; ++i)
    law.position().sample(rng, out.positions.data() + std::size_t(i) * d);
}

ImmigrantBatch sample_immigration(const EnvState& state, Stream& rng) {
  ImmigrantBatch out;
  sample_immigration(state, rng, out);
  return out;
}

Estimate mean_mgf_oracle(const EnvState& state, const Vector& t, std::size_t draws, Stream rng) {
  require(draws >= 2, "oracle needs at least two draws");
  check_dim(t, state.dim());
  const int d = state.dim();
  Reproduction rep;
  double mean = 0.0;
  double m2 = 0.0;
  for (std::size_t k = 0; k < draws; ++k) {
    sample_reproduction(state, rng, rep);
    double x = 0.0;
    for (int i = 0; i < rep.count; ++i) {
      const Eigen::Map<const Vector> l(rep.displacements.data() + std::size_t(i) * d, d);
      x += std::exp(t.dot(l));
    }
    const double delta = x - mean;
    mean += delta / static_cast<double>(k + 1);
    m2 += delta * (x - mean);
  }
  const double var = m2 / static_cast<double>(draws - 1);
  return {mean, std::sqrt(var / static_cast<double>(draws)), draws};
}

std::vector<double> log_means(const EnvironmentLaw& env, const Vector& t,
                              std::size_t oracle_draws, std::uint64_t oracle_seed) {
  std::vector<double> out;
  out.reserve(env.size());
  for (std::size_t s = 0; s < env.size(); ++s) {
    const auto& state = env.state(s);
    if (state.product_form()) {
      out.push_back(log_mean_mgf(state, t));
    } else {
      const Stream rng(derive_key(oracle_seed, {static_cast<std::uint64_t>(Domain::oracle), s}));
      out.push_back(std::log(mean_mgf_oracle(state, t, oracle_draws, rng).value));
    }
  }
  return out;
}

}  // namespace brwire
