#include "brwire/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "brwire/errors.hpp"

namespace brwire {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidParameter(what);
}

}  // namespace

EmpiricalLaw::EmpiricalLaw(std::vector<double> sample, int n) : sample_(std::move(sample)), n_(n) {
  require(!sample_.empty(), "empirical law needs at least one point");
  std::sort(sample_.begin(), sample_.end());
}

double EmpiricalLaw::cdf(double x) const {
  const auto it = std::upper_bound(sample_.begin(), sample_.end(), x);
  return static_cast<double>(it - sample_.begin()) / static_cast<double>(sample_.size());
}

RateFit fit_line(std::vector<std::pair<double, double>> points) {
  require(points.size() >= 3, "a fit needs at least 3 points");
  const auto m = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd design(m, 2);
  Eigen::VectorXd y(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    design(i, 0) = 1.0;
    design(i, 1) = points[static_cast<std::size_t>(i)].first;
    y[i] = points[static_cast<std::size_t>(i)].second;
  }
  const Eigen::Vector2d beta = design.colPivHouseholderQr().solve(y);
  const double ss_res = (y - design * beta).squaredNorm();
  const double ss_tot = (y.array() - y.mean()).square().sum();
  RateFit fit;
  fit.intercept = beta[0];
  fit.slope = beta[1];
  fit.r_squared = ss_tot > 0.0 ? std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0) : 1.0;
  fit.points = std::move(points);
  return fit;
}

EmpiricalLaw standardize(std::span<const TrajectoryRecord> records, double mu, double sigma) {
  require(sigma > 0.0, "standardize needs sigma > 0");
  require(!records.empty(), "standardize needs records");
  const int n = records.front().n;
  require(n >= 1, "standardize needs n >= 1");
  const double scale = std::sqrt(static_cast<double>(n)) * sigma;
  std::vector<double> x;
  x.reserve(records.size());
  for (const auto& r : records) {
    require(r.n == n, "records must share n");
    x.push_back((r.log_Z - n * mu) / scale);
  }
  return EmpiricalLaw(std::move(x), n);
}

EmpiricalLaw standardize_values(std::span<const double> centred, int n, double sigma) {
  require(sigma > 0.0, "standardize needs sigma > 0");
  require(n >= 1, "standardize needs n >= 1");
  const double scale = std::sqrt(static_cast<double>(n)) * sigma;
  std::vector<double> x;
  x.reserve(centred.size());
  for (double v : centred) x.push_back(v / scale);
  return EmpiricalLaw(std::move(x), n);
}

double ks_distance(const EmpiricalLaw& emp) {
  return weighted_distance(emp, 0.0, std::numeric_limits<double>::infinity());
}

double weighted_distance(const EmpiricalLaw& emp, double lambda, double x_cap) {
  require(lambda >= 0.0, "lambda must be >= 0");
  require(x_cap > 0.0, "x_cap must be > 0");
  const auto xs = emp.sorted_sample();
  const double M = static_cast<double>(xs.size());
  double best = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double x = xs[i];
    if (std::abs(x) > x_cap) continue;
    const double phi = normal_cdf(x);
    const double above = static_cast<double>(i + 1) / M;
    const double below = static_cast<double>(i) / M;
    double gap = std::max(std::abs(above - phi), std::abs(below - phi));
    if (lambda != 0.0) gap *= std::pow(1.0 + std::abs(x), lambda);
    best = std::max(best, gap);
  }
  return best;
}

RateFit rate_fit(std::span<const std::pair<double, double>> pairs) {
  require(pairs.size() >= 3, "rate_fit needs at least 3 pairs");
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto [n, D] = pairs[i];
    require(n > 0.0, "rate_fit needs n > 0");
    require(D > 0.0, "rate_fit needs D_n > 0");
    if (i > 0) require(n > pairs[i - 1].first, "rate_fit needs strictly increasing n");
    pts.emplace_back(std::log(n), std::log(D));
  }
  return fit_line(std::move(pts));
}

double dkw_budget(std::size_t M, double beta) {
  require(M >= 1, "dkw_budget needs M >= 1");
  require(beta > 0.0 && beta < 1.0, "beta must lie in (0, 1)");
  return std::sqrt(std::log(2.0 / beta) / (2.0 * static_cast<double>(M)));
}

std::vector<ProfilePoint> exact_rate_profile(const EmpiricalLaw& emp,
                                             const TheoryConstants& constants,
                                             std::span<const double> x_grid, double beta,
                                             double resolution) {
  require(constants.sigma > 0.0, "exact_rate_profile needs sigma > 0");
  const double root_n = std::sqrt(static_cast<double>(emp.n()));
  const double band = root_n * dkw_budget(emp.size(), beta);
  if (band > resolution)
    throw ResolutionTooCoarse("sqrt(n) * DKW half-width = " + std::to_string(band) +
                              " exceeds the requested resolution " + std::to_string(resolution) +
                              "; increase M");
  std::vector<ProfilePoint> out;
  out.reserve(x_grid.size());
  for (double x : x_grid) {
    ProfilePoint p;
    p.x = x;
    p.lhs = root_n * (emp.cdf(x) - normal_cdf(x));
    p.rhs = -normal_pdf(x) * constants.E_log_W.estimate / constants.sigma +
            edgeworth_Q(x, constants.mu3, constants.sigma);
    p.uncertainty = band + normal_pdf(x) / constants.sigma * constants.E_log_W.std_error;
    out.push_back(p);
  }
  return out;
}

IncrementDiagnostics w_increment_diagnostics(std::span<const std::pair<double, double>> log_W_pairs,
                                             int n, int l, double alpha,
                                             std::span<const double> thresholds) {
  require(alpha > 0.0 && alpha <= 1.0, "alpha must lie in (0, 1]");
  require(l > n, "need l > n");
  require(!log_W_pairs.empty(), "no replicate pairs");
  IncrementDiagnostics out;
  out.n = n;
  out.l = l;
  std::vector<double> rel;
  rel.reserve(log_W_pairs.size());
  double acc = 0.0;
  for (const auto& [log_Wn, log_Wl] : log_W_pairs) {
    acc += std::pow(std::abs(std::exp(log_Wl) - std::exp(log_Wn)), alpha);
    rel.push_back(std::abs(std::expm1(log_Wl - log_Wn)));
  }
  const double M = static_cast<double>(log_W_pairs.size());
  out.moment = acc / M;
  std::sort(rel.begin(), rel.end());
  for (double x : thresholds) {
    const auto above = rel.end() - std::upper_bound(rel.begin(), rel.end(), x);
    out.tails.emplace_back(x, static_cast<double>(above) / M);
  }
  return out;
}

RateFit increment_rate_fit(std::span<const IncrementDiagnostics> diagnostics) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& d : diagnostics) {
    require(d.moment > 0.0, "increment moment must be > 0 to fit a rate");
    pts.emplace_back(static_cast<double>(d.n), std::log(d.moment));
  }
  return fit_line(std::move(pts));
}

std::vector<TrajectoryRecord> records_at(std::span<const ReplicateOutcome> outcomes, int n) {
  std::vector<TrajectoryRecord> out;
  out.reserve(outcomes.size());
  for (const auto& o : outcomes) {
    if (o.abort) continue;
    const auto it = std::find_if(o.records.begin(), o.records.end(),
                                 [n](const TrajectoryRecord& r) { return r.n == n; });
    if (it == o.records.end()) throw InvalidParameter("no record at n = " + std::to_string(n));
    out.push_back(*it);
  }
  return out;
}

std::size_t aborted_count(std::span<const ReplicateOutcome> outcomes) {
  return static_cast<std::size_t>(std::count_if(outcomes.begin(), outcomes.end(),
                                                [](const ReplicateOutcome& o) { return o.abort; }));
}

nlohmann::json to_json(const RateFit& fit) {
  auto pts = nlohmann::json::array();
  for (const auto& [x, y] : fit.points) pts.push_back({json_number(x), json_number(y)});
  return {{"slope", json_number(fit.slope)},
          {"intercept", json_number(fit.intercept)},
          {"r2", json_number(fit.r_squared)},
          {"points", pts}};
}

}  // namespace brwire
