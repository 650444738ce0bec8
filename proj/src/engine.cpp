#include "brwire/engine.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <exception>
#include <mutex>
#include <random>
#include <thread>

namespace brwire {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

inline double dot(const double* x, const Vector& t, int d) {
  if (d == 1) return x[0] * t[0];
  double s = 0.0;
  for (int j = 0; j < d; ++j) s += x[j] * t[j];
  return s;
}

// Environment path kept as visit counts, so log Pi_n and S_n are sums of
// one rounded product per state instead of n rounded increments.
class EnvTally {
 public:
  explicit EnvTally(const PreparedScenario& prepared)
      : prepared_(prepared), counts_(prepared.log_m.size(), 0) {}

  void visit(std::size_t s) { ++counts_[s]; }

  double log_Pi() const {
    double acc = 0.0;
    for (std::size_t s = 0; s < counts_.size(); ++s)
      if (counts_[s] != 0) acc += static_cast<double>(counts_[s]) * prepared_.log_m[s];
    return acc;
  }

  double S() const {
    double acc = 0.0;
    for (std::size_t s = 0; s < counts_.size(); ++s)
      if (counts_[s] != 0)
        acc += static_cast<double>(counts_[s]) * (prepared_.log_m[s] - prepared_.mu);
    return acc;
  }

 private:
  const PreparedScenario& prepared_;
  std::vector<std::int64_t> counts_;
};

}  // namespace

// ---------------------------------------------------------------------------
// GenerationState

GenerationState::GenerationState(int dim, bool track_lineage)
    : dim_(dim), track_lineage_(track_lineage), coords_(static_cast<std::size_t>(dim), 0.0) {
  if (dim < 1) throw InvalidParameter("dimension must be >= 1");
  if (track_lineage_) lineage_.push_back(LineageTag{});
}

Eigen::VectorXd GenerationState::scores(const Vector& t) const {
  if (t.size() != dim_) throw InvalidParameter("t has the wrong dimension");
  return positions().transpose() * t;
}

void step_into(const GenerationState& gen, const EnvState& state, const ReplicateStreams& streams,
               std::size_t population_cap, GenerationState& next) {
  const int d = gen.dim_;
  if (state.dim() != d) throw InvalidParameter("environment state dimension differs");
  const std::size_t parents = gen.size();
  if (parents > population_cap)
    throw CapExceeded(0, gen.n_, parents, population_cap);

  next.dim_ = d;
  next.n_ = gen.n_ + 1;
  next.track_lineage_ = gen.track_lineage_;
  next.line_count_ = gen.line_count_;
  next.coords_.clear();
  next.lineage_.clear();
  next.coords_.reserve(gen.coords_.size() + gen.coords_.size() / 4 + 8);

  std::size_t children = 0;
  std::size_t initial_children = 0;
  Reproduction custom;
  const GenerationStreams particle_streams = streams.particles(gen.n_);
  for (std::size_t u = 0; u < parents; ++u) {
    Stream rng = particle_streams.particle(u);
    const double* origin = gen.coords_.data() + u * static_cast<std::size_t>(d);
    int k = 0;
    if (state.product_form()) {
      k = state.offspring.sample(rng);
      if (children + static_cast<std::size_t>(k) > population_cap)
        throw CapExceeded(0, next.n_, children + k, population_cap);
      const std::size_t base = next.coords_.size();
      next.coords_.resize(base + static_cast<std::size_t>(k) * d);
      for (int i = 0; i < k; ++i)
        state.displacement.sample(rng, next.coords_.data() + base + std::size_t(i) * d,
                                  origin);
    } else {
      sample_reproduction(state, rng, custom);
      k = custom.count;
      if (children + static_cast<std::size_t>(k) > population_cap)
        throw CapExceeded(0, next.n_, children + k, population_cap);
      const std::size_t base = next.coords_.size();
      next.coords_.resize(base + static_cast<std::size_t>(k) * d);
      for (std::size_t c = 0; c < static_cast<std::size_t>(k) * d; ++c)
        next.coords_[base + c] = custom.displacements[c] + origin[c % d];
    }
    children += k;
    if (u < gen.initial_count_) initial_children += k;
    if (gen.track_lineage_) next.lineage_.insert(next.lineage_.end(), k, gen.lineage_[u]);
  }
  next.initial_count_ = initial_children;

  Stream imm_rng = streams.immigration(gen.n_);
  ImmigrantBatch batch;
  sample_immigration(state, imm_rng, batch);
  if (children + static_cast<std::size_t>(batch.count) > population_cap)
    throw CapExceeded(0, next.n_, children + batch.count, population_cap);
  next.coords_.insert(next.coords_.end(), batch.positions.begin(), batch.positions.end());
  if (gen.track_lineage_) {
    for (int i = 0; i < batch.count; ++i)
      next.lineage_.push_back(LineageTag{next.n_, i + 1, next.line_count_++});
  }
}

GenerationState step(const GenerationState& gen, const EnvState& state,
                     const ReplicateStreams& streams, std::size_t population_cap) {
  GenerationState next(gen.dim(), gen.tracks_lineage());
  step_into(gen, state, streams, population_cap, next);
  return next;
}

double log_partition(const GenerationState& gen, const Vector& t, const PartitionFilter& filter) {
  if (t.size() != gen.dim()) throw InvalidParameter("t has the wrong dimension");
  const int d = gen.dim();
  const auto positions = gen.positions();
  LogSumExp acc;
  const auto add = [&](std::size_t i) { acc.add(dot(positions.data() + i * d, t, d)); };
  std::visit(Overloaded{
                 [&](const AllParticles&) {
                   for (std::size_t i = 0; i < gen.size(); ++i) add(i);
                 },
                 [&](const InitialOnly&) {
                   for (std::size_t i = 0; i < gen.initial_count(); ++i) add(i);
                 },
                 [&](const ImmigrantLine& line) {
                   if (!gen.tracks_lineage())
                     throw InvalidParameter("immigrant-line filter needs lineage tracking");
                   const auto tags = gen.lineage();
                   for (std::size_t i = 0; i < tags.size(); ++i)
                     if (tags[i].join_generation == line.join_generation &&
                         tags[i].immigrant_index == line.immigrant_index)
                       add(i);
                 },
             },
             filter);
  if (acc.empty()) throw EmptySelection("partition filter matches no particle");
  return acc.value();
}

// ---------------------------------------------------------------------------
// Ledger

void ImmigrantLineLedger::record(const GenerationState& gen, const Vector& t, double log_Pi) {
  if (!gen.tracks_lineage()) throw InvalidParameter("ledger needs lineage tracking");
  const int d = gen.dim();
  const auto tags = gen.lineage();
  std::vector<LogSumExp> acc(static_cast<std::size_t>(gen.line_count()));
  const double* coords = gen.positions().data();
  for (std::size_t i = gen.initial_count(); i < tags.size(); ++i)
    acc[static_cast<std::size_t>(tags[i].line)].add(dot(coords + i * d, t, d));

  // Lines first seen now consist of the single immigrant, so the subtree
  // sum is its own score.
  const std::size_t known = lines_.size();
  lines_.resize(acc.size());
  for (std::size_t i = gen.initial_count(); i < tags.size(); ++i) {
    const auto line = static_cast<std::size_t>(tags[i].line);
    if (line >= known)
      lines_[line] = Line{tags[i].join_generation, tags[i].immigrant_index, acc[line].value(), {}};
  }
  for (std::size_t line = 0; line < lines_.size(); ++line)
    lines_[line].log_numerator.push_back(acc[line].value());
  log_Pi_.push_back(log_Pi);
}

double decomposition_residual(const ImmigrantLineLedger& ledger, const TrajectoryRecord& record,
                              int k) {
  if (record.n != k) throw InvalidParameter("record is not at generation k");
  if (k > ledger.last_generation()) throw InvalidParameter("ledger does not reach generation k");
  const auto& log_Pi = ledger.log_Pi();
  const double log_Pi_k = log_Pi[static_cast<std::size_t>(k)];
  double rebuilt = std::exp(record.log_Wbar);
  for (const auto& line : ledger.lines()) {
    const int j = line.join_generation;
    if (j > k) continue;
    const double log_numerator = line.log_numerator[static_cast<std::size_t>(k - j)];
    // Biggins martingale of the subtree, normalized by the shifted product
    // Pi_{k-j}(T^j xi) = Pi_k / Pi_j.
    const double log_Wbar_sub = log_numerator - line.score - (log_Pi_k - log_Pi[std::size_t(j)]);
    rebuilt += std::exp(-log_Pi[std::size_t(j)] + line.score + log_Wbar_sub);
  }
  const double W = std::exp(record.log_W);
  return std::abs(W - rebuilt) / W;
}

// ---------------------------------------------------------------------------
// Replicates

PreparedScenario::PreparedScenario(Scenario s) : scenario(std::move(s)) {
  scenario.validate();
  log_m = log_means(scenario.environment, scenario.t, 1'000'000, scenario.master_seed);
  mu = 0.0;
  for (std::size_t i = 0; i < log_m.size(); ++i)
    mu += scenario.environment.probability(i) * log_m[i];
}

std::vector<std::string> Trajectory::env_labels(const EnvironmentLaw& env,
                                                const TrajectoryRecord& record) const {
  std::vector<std::string> labels;
  for (int i = 0; i < record.n && i < static_cast<int>(environment.size()); ++i)
    labels.push_back(env.state(environment[static_cast<std::size_t>(i)]).label);
  return labels;
}

Trajectory simulate_replicate(const PreparedScenario& prepared, std::uint64_t replicate_index,
                              const SimulationOptions& options) {
  const Scenario& sc = prepared.scenario;
  const auto& horizons = options.horizons.empty() ? sc.horizons : options.horizons;
  const int last = horizons.back();
  const int d = sc.d;
  const ReplicateStreams streams(sc.master_seed, replicate_index);

  Trajectory traj;
  traj.replicate = replicate_index;
  traj.environment.reserve(static_cast<std::size_t>(last));
  if (options.track_lineage) traj.ledger.emplace();

  GenerationState current(d, options.track_lineage);
  GenerationState next(d, options.track_lineage);
  EnvTally tally(prepared);
  double log_Pi = 0.0;
  std::size_t h = 0;

  const auto emit = [&] {
    LogSumExp all;
    LogSumExp initial;
    const double* coords = current.positions().data();
    for (std::size_t i = 0; i < current.size(); ++i) {
      const double score = dot(coords + i * d, sc.t, d);
      all.add(score);
      if (i < current.initial_count()) initial.add(score);
    }
    TrajectoryRecord r;
    r.n = current.generation();
    r.log_Z = all.value();
    r.log_Zbar = initial.value();
    r.log_Pi = log_Pi;
    r.S = tally.S();
    r.log_W = r.log_Z - log_Pi;
    r.log_Wbar = r.log_Zbar - log_Pi;
    r.pop = current.size();
    traj.records.push_back(r);
  };

  if (traj.ledger) traj.ledger->record(current, sc.t, log_Pi);
  if (horizons[h] == 0) {
    emit();
    ++h;
  }
  for (int n = 0; n < last; ++n) {
    Stream env_rng = streams.environment(n);
    const std::size_t s = sc.environment.sample_index(env_rng);
    traj.environment.push_back(static_cast<std::uint16_t>(s));
    try {
      step_into(current, sc.environment.state(s), streams, sc.population_cap, next);
    } catch (const CapExceeded& e) {
      throw e.with_replicate(replicate_index, sc.population_cap);
    }
    std::swap(current, next);
    tally.visit(s);
    log_Pi = tally.log_Pi();
    if (traj.ledger) traj.ledger->record(current, sc.t, log_Pi);
    if (h < horizons.size() && horizons[h] == n + 1) {
      emit();
      ++h;
    }
  }
  return traj;
}

Trajectory simulate_replicate(const Scenario& scenario, std::uint64_t replicate_index,
                              const SimulationOptions& options) {
  return simulate_replicate(PreparedScenario(scenario), replicate_index, options);
}

std::vector<std::pair<int, double>> simulate_env_walk(const PreparedScenario& prepared,
                                                      std::uint64_t replicate_index,
                                                      const std::vector<int>& horizons_in) {
  const Scenario& sc = prepared.scenario;
  const auto& horizons = horizons_in.empty() ? sc.horizons : horizons_in;
  const ReplicateStreams streams(sc.master_seed, replicate_index);
  std::vector<std::pair<int, double>> out;
  out.reserve(horizons.size());
  EnvTally tally(prepared);
  std::size_t h = 0;
  if (horizons[h] == 0) out.emplace_back(horizons[h++], 0.0);
  for (int n = 0; h < horizons.size(); ++n) {
    Stream env_rng = streams.environment(n);
    tally.visit(sc.environment.sample_index(env_rng));
    if (horizons[h] == n + 1) out.emplace_back(horizons[h++], tally.S());
  }
  return out;
}

void parallel_for(std::size_t count, std::size_t workers,
                  const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = count;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

std::vector<ReplicateOutcome> run_replicates(const PreparedScenario& prepared,
                                             std::size_t workers, std::uint64_t first,
                                             std::size_t count,
                                             const SimulationOptions& options) {
  SimulationOptions opts = options;
  opts.track_lineage = false;
  std::vector<ReplicateOutcome> outcomes(count);
  parallel_for(count, workers, [&](std::size_t i) {
    auto& out = outcomes[i];
    out.replicate = first + i;
    try {
      out.records = simulate_replicate(prepared, out.replicate, opts).records;
    } catch (const CapExceeded& e) {
      out.abort = e;
    }
  });
  return outcomes;
}

std::vector<ReplicateOutcome> run_replicates(const PreparedScenario& prepared,
                                             std::size_t workers,
                                             const SimulationOptions& options) {
  return run_replicates(prepared, workers, 0, prepared.scenario.replicates, options);
}

std::vector<std::vector<double>> run_env_walks(const PreparedScenario& prepared,
                                               std::size_t workers, std::size_t count,
                                               const std::vector<int>& horizons) {
  std::vector<std::vector<double>> out(horizons.size(), std::vector<double>(count));
  parallel_for(count, workers, [&](std::size_t r) {
    const auto walk = simulate_env_walk(prepared, r, horizons);
    for (std::size_t h = 0; h < walk.size(); ++h) out[h][r] = walk[h].second;
  });
  return out;
}

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

void write_records_csv(std::ostream& out, const std::vector<ReplicateOutcome>& outcomes) {
  out << "replicate,n,log_Z,log_Zbar,log_Pi,S,log_W,log_Wbar,pop,status\n";
  for (const auto& o : outcomes) {
    if (o.abort) {
      out << o.replicate << ',' << o.abort->generation() << ",,,,,,,,CapExceeded\n";
      continue;
    }
    for (const auto& r : o.records) {
      out << o.replicate << ',' << r.n << ',' << format_double(r.log_Z) << ','
          << format_double(r.log_Zbar) << ',' << format_double(r.log_Pi) << ','
          << format_double(r.S) << ',' << format_double(r.log_W) << ','
          << format_double(r.log_Wbar) << ',' << r.pop << ",ok\n";
    }
  }
}

}  // namespace brwire
