#include "brwire/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include "json.hpp"

#include "brwire/errors.hpp"

namespace brwire {

using nlohmann::json;

bool AnalysisSet::empty() const noexcept {
  return !audit && !needs_replicates() && !env_walk_baseline;
}

bool AnalysisSet::needs_replicates() const noexcept {
  return clt || uniform_be || nonuniform_be || exact_rate || w_increments;
}

namespace {

// A JSON value together with its path, for error messages.
class Node {
 public:
  Node(const json& value, std::string path) : value_(&value), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }
  const json& raw() const noexcept { return *value_; }

  [[noreturn]] void fail(const std::string& what) const { throw ConfigError(path_, what); }

  void expect_object(std::initializer_list<std::string_view> keys) const {
    if (!value_->is_object()) fail("expected an object");
    for (const auto& [key, _] : value_->items())
      if (std::find(keys.begin(), keys.end(), key) == keys.end())
        Node(*value_, join(key)).fail("unknown key");
  }

  bool has(const std::string& key) const { return value_->contains(key); }

  Node at(const std::string& key) const {
    if (!has(key)) Node(*value_, join(key)).fail("required field missing");
    return Node((*value_)[key], join(key));
  }

  std::optional<Node> get(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    return Node((*value_)[key], join(key));
  }

  std::vector<Node> elements() const {
    if (!value_->is_array()) fail("expected an array");
    std::vector<Node> out;
    for (std::size_t i = 0; i < value_->size(); ++i)
      out.emplace_back((*value_)[i], path_ + "[" + std::to_string(i) + "]");
    return out;
  }

  double number() const {
    if (value_->is_number()) return value_->get<double>();
    if (value_->is_string()) {
      const auto s = value_->get<std::string>();
      if (s == "inf") return std::numeric_limits<double>::infinity();
    }
    fail("expected a number");
  }

  double positive() const {
    const double x = number();
    if (!(x > 0.0)) fail("must be > 0");
    return x;
  }

  long long integer() const {
    if (value_->is_number_integer()) return value_->get<long long>();
    if (value_->is_number_float()) {
      const double x = value_->get<double>();
      if (std::floor(x) == x && std::abs(x) < 9e15) return static_cast<long long>(x);
    }
    fail("expected an integer");
  }

  std::uint64_t u64() const {
    if (value_->is_number_unsigned()) return value_->get<std::uint64_t>();
    const auto x = integer();
    if (x < 0) fail("must be >= 0");
    return static_cast<std::uint64_t>(x);
  }

  std::size_t count(std::size_t min) const {
    const auto x = u64();
    if (x < min) fail("must be >= " + std::to_string(min));
    return static_cast<std::size_t>(x);
  }

  bool boolean() const {
    if (!value_->is_boolean()) fail("expected true or false");
    return value_->get<bool>();
  }

  std::string string() const {
    if (!value_->is_string()) fail("expected a string");
    return value_->get<std::string>();
  }

  std::vector<double> numbers() const {
    std::vector<double> out;
    for (const auto& e : elements()) out.push_back(e.number());
    return out;
  }

  std::vector<int> integers() const {
    std::vector<int> out;
    for (const auto& e : elements()) out.push_back(static_cast<int>(e.integer()));
    return out;
  }

  Vector vector(int d) const {
    const auto xs = numbers();
    if (static_cast<int>(xs.size()) != d) fail("expected " + std::to_string(d) + " entries");
    return Eigen::Map<const Vector>(xs.data(), d);
  }

 private:
  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* value_;
  std::string path_;
};

// Rethrows library validation errors as configuration errors at `node`.
template <typename F>
auto at_node(const Node& node, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidParameter& e) {
    node.fail(e.what());
  }
}

DisplacementLaw parse_displacement(const Node& node, int d) {
  const auto kind = node.at("kind").string();
  if (kind == "point_mass") {
    node.expect_object({"kind", "c"});
    const auto c = node.at("c").vector(d);
    return at_node(node, [&] { return DisplacementLaw::point_mass(c); });
  }
  if (kind == "gaussian") {
    node.expect_object({"kind", "mean", "var"});
    const auto mean = node.at("mean").vector(d);
    const auto var = node.at("var").vector(d);
    return at_node(node, [&] { return DisplacementLaw::gaussian(mean, var); });
  }
  node.at("kind").fail("unknown displacement kind '" + kind + "' (point_mass | gaussian)");
}

OffspringLaw parse_offspring(const Node& node) {
  node.expect_object({"kind", "param"});
  const auto kind = node.at("kind").string();
  const auto param = node.at("param");
  return at_node(node, [&] {
    if (kind == "deterministic") return OffspringLaw::deterministic(static_cast<int>(param.integer()));
    if (kind == "one_plus_bernoulli") return OffspringLaw::one_plus_bernoulli(param.number());
    if (kind == "one_plus_poisson") return OffspringLaw::one_plus_poisson(param.number());
    if (kind == "one_plus_geometric") return OffspringLaw::one_plus_geometric(param.number());
    node.at("kind").fail("unknown offspring kind '" + kind +
                         "' (deterministic | one_plus_bernoulli | one_plus_poisson | "
                         "one_plus_geometric)");
  });
}

ImmigrationLaw parse_immigration(const std::optional<Node>& node, int d) {
  if (!node) return ImmigrationLaw::none(d);
  node->expect_object({"count", "position"});
  const auto count = node->at("count");
  count.expect_object({"kind", "param"});
  const auto kind = count.at("kind").string();
  if (kind == "none") return ImmigrationLaw::none(d);
  auto position = parse_displacement(node->at("position"), d);
  const auto param = count.at("param");
  return at_node(count, [&] {
    if (kind == "deterministic")
      return ImmigrationLaw::deterministic(static_cast<int>(param.integer()), position);
    if (kind == "poisson") return ImmigrationLaw::poisson(param.number(), position);
    count.at("kind").fail("unknown immigration count kind '" + kind +
                          "' (none | deterministic | poisson)");
  });
}

EnvironmentLaw parse_environment(const Node& node, int d) {
  node.expect_object({"states"});
  std::vector<WeightedState> states;
  for (const auto& s : node.at("states").elements()) {
    s.expect_object({"label", "prob", "offspring", "displacement", "immigration"});
    EnvState state{s.at("label").string(), parse_offspring(s.at("offspring")),
                   parse_displacement(s.at("displacement"), d),
                   parse_immigration(s.get("immigration"), d), {}};
    states.push_back({std::move(state), s.at("prob").number()});
  }
  return at_node(node, [&] { return EnvironmentLaw(std::move(states)); });
}

// Analyses take either an object of settings or a boolean switch.
template <typename Spec, typename F>
std::optional<Spec> parse_switch(const std::optional<Node>& node, F&& fill) {
  if (!node) return std::nullopt;
  if (node->raw().is_boolean()) {
    if (!node->boolean()) return std::nullopt;
    return Spec{};
  }
  Spec spec{};
  fill(*node, spec);
  return spec;
}

struct Flag {};

AnalysisSet parse_analyses(const std::optional<Node>& node) {
  AnalysisSet out;
  if (!node) return out;
  node->expect_object({"audit", "clt", "uniform-be", "nonuniform-be", "exact-rate",
                       "w-increments", "env-walk-baseline"});

  out.audit = parse_switch<AuditSpec>(node->get("audit"), [](const Node& n, AuditSpec& s) {
    n.expect_object({"alpha", "epsilon", "p", "a", "oracle_draws"});
    s.alpha = n.at("alpha").positive();
    s.epsilon = n.at("epsilon").positive();
    s.p = n.at("p").number();
    s.a = n.at("a").number();
    if (auto x = n.get("oracle_draws")) s.oracle_draws = x->count(1);
  });
  if (auto n = node->get("audit"); n && n->raw().is_boolean() && out.audit)
    n->fail("audit needs {alpha, epsilon, p, a}");

  out.clt = parse_switch<Flag>(node->get("clt"), [](const Node& n, Flag&) { n.expect_object({}); })
                .has_value();
  out.uniform_be =
      parse_switch<Flag>(node->get("uniform-be"), [](const Node& n, Flag&) { n.expect_object({}); })
          .has_value();

  out.nonuniform_be = parse_switch<NonuniformSpec>(
      node->get("nonuniform-be"), [](const Node& n, NonuniformSpec& s) {
        n.expect_object({"lambda", "x_cap"});
        if (auto x = n.get("lambda")) s.lambda = x->positive();
        if (auto x = n.get("x_cap")) s.x_cap = x->positive();
      });

  out.exact_rate = parse_switch<ExactRateSpec>(
      node->get("exact-rate"), [](const Node& n, ExactRateSpec& s) {
        n.expect_object({"x_grid", "beta", "resolution", "log_W_horizon", "log_W_abs_tol"});
        if (auto x = n.get("x_grid")) s.x_grid = x->numbers();
        if (auto x = n.get("beta")) s.beta = x->positive();
        if (auto x = n.get("resolution")) s.resolution = x->positive();
        if (auto x = n.get("log_W_horizon")) s.log_W_horizon = static_cast<int>(x->count(2));
        if (auto x = n.get("log_W_abs_tol")) s.log_W_abs_tol = x->number();
      });

  out.w_increments = parse_switch<IncrementSpec>(
      node->get("w-increments"), [](const Node& n, IncrementSpec& s) {
        n.expect_object({"alpha", "thresholds", "n"});
        if (auto x = n.get("alpha")) s.alpha = x->positive();
        if (s.alpha > 1.0) n.at("alpha").fail("must lie in (0, 1]");
        if (auto x = n.get("thresholds")) s.thresholds = x->numbers();
        if (auto x = n.get("n")) s.n = x->integers();
        if (s.n.size() < 3) n.fail("w-increments needs at least 3 values of n");
        for (int v : s.n)
          if (v < 1) n.at("n").fail("entries must be >= 1");
      });

  out.env_walk_baseline = parse_switch<EnvWalkSpec>(
      node->get("env-walk-baseline"), [](const Node& n, EnvWalkSpec& s) {
        n.expect_object({"x_grid", "replicates", "beta", "resolution"});
        if (auto x = n.get("x_grid")) s.x_grid = x->numbers();
        if (auto x = n.get("replicates")) s.replicates = x->count(1);
        if (auto x = n.get("beta")) s.beta = x->positive();
        if (auto x = n.get("resolution")) s.resolution = x->positive();
      });
  return out;
}

OutputSpec parse_output(const std::optional<Node>& node) {
  OutputSpec out;
  if (!node) return out;
  node->expect_object({"dir", "workers", "records", "max_abort_fraction"});
  if (auto x = node->get("dir")) out.dir = x->string();
  if (auto x = node->get("workers")) out.workers = x->count(1);
  if (auto x = node->get("records")) out.records = x->boolean();
  if (auto x = node->get("max_abort_fraction")) out.max_abort_fraction = x->number();
  return out;
}

}  // namespace

ExperimentPlan parse_plan(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto upto = text.substr(0, std::min(e.byte, text.size()));
    const auto line = 1 + std::count(upto.begin(), upto.end(), '\n');
    const auto col = upto.size() - (upto.rfind('\n') == std::string_view::npos
                                        ? 0
                                        : upto.rfind('\n') + 1);
    throw ConfigError("line " + std::to_string(line) + ", column " + std::to_string(col),
                      "syntax error");
  }

  const Node root(doc, "");
  root.expect_object({"environment", "d", "t", "horizons", "replicates", "population_cap",
                      "master_seed", "analyses", "output"});
  const auto d_node = root.at("d");
  const int d = static_cast<int>(d_node.count(1));

  ExperimentPlan plan{
      Scenario{parse_environment(root.at("environment"), d), d, root.at("t").vector(d),
               root.at("horizons").integers(), root.at("replicates").count(1),
               Scenario::kDefaultPopulationCap, 0},
      parse_analyses(root.get("analyses")), parse_output(root.get("output")), std::string(text)};
  if (auto x = root.get("population_cap")) plan.scenario.population_cap = x->count(1);
  if (auto x = root.get("master_seed")) plan.scenario.master_seed = x->u64();
  at_node(root, [&] {
    plan.scenario.validate();
    return 0;
  });
  return plan;
}

ExperimentPlan load_plan(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_plan(buf.str());
}

}  // namespace brwire
