#include "denma/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "denma/error.hpp"
#include "denma/io.hpp"
#include "denma/rng.hpp"

namespace denma {

namespace {

std::string join(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    out += io::format_double(values[i]);
  }
  return out;
}

std::string join(const std::vector<std::string>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    out += values[i];
  }
  return out;
}

double expit(double eta) { return eta >= 0.0 ? 1.0 / (1.0 + std::exp(-eta)) : std::exp(eta) / (1.0 + std::exp(eta)); }

double factor_of(const Scenario& sc, const std::string& agent) {
  auto it = sc.factors.find(agent);
  return it == sc.factors.end() ? 1.0 : it->second;
}

std::string curve_key(const Scenario& sc, const std::string& agent) {
  return sc.class_shapes ? sc.classes.at(agent) : agent;
}

}  // namespace

void Scenario::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::InvalidSpec, "scenario: " + what); };
  if (studies == 0) bad("studies must be positive");
  if (agents.empty()) bad("no agents");
  if (sample_size <= 0) bad("sample size must be positive");
  if (min_active_arms < 1 || max_active_arms < min_active_arms) bad("active arm range is empty");
  if (!(placebo_fraction >= 0.0 && placebo_fraction <= 1.0)) bad("placebo_fraction must lie in [0, 1]");
  if (placebo_fraction < 1.0 && min_active_arms < 2) bad("studies without placebo need at least 2 active arms");
  if (!(tau >= 0.0) || !(placebo_logit_sd >= 0.0)) bad("standard deviations must be non-negative");
  std::size_t pairs = 0;
  for (const auto& a : agents) {
    if (is_placebo(a)) bad("placebo is not an active agent");
    auto it = doses.find(a);
    if (it == doses.end() || it->second.empty()) bad("no doses for " + a);
    for (double d : it->second) {
      if (!(d > 0.0)) bad("doses must be positive");
    }
    pairs += it->second.size();
    if (class_shapes && !classes.contains(a)) bad("no class for " + a);
    if (auto f = factors.find(a); f != factors.end() && !(f->second > 0.0)) bad("factors must be positive");
    if (!shape.contains(class_shapes ? classes.at(a) : a)) bad("no true shape for " + a);
  }
  if (pairs < max_active_arms) bad("fewer agent-dose pairs than active arms");
  const std::size_t dim = knot_percentiles.size() - 1;
  for (const auto& [key, coef] : shape) {
    if (coef.size() != dim) bad("shape for " + key + " needs " + std::to_string(dim) + " coefficients");
  }
  if (covariate && !(covariate_high >= covariate_low)) bad("covariate range is empty");
}

Scenario default_scenario() {
  Scenario sc;
  sc.agents = {"drugA", "drugB", "drugC"};
  for (const auto& a : sc.agents) sc.doses[a] = {10, 20, 40};
  sc.placebo_logit_mean = std::log(0.36 / 0.64);
  sc.shape["drugA"] = {0.03, -2e-5};
  sc.shape["drugB"] = {0.02, -1e-5};
  sc.shape["drugC"] = {0.04, -3.5e-5};
  return sc;
}

Scenario parse_scenario(std::string_view text) {
  const auto kv = io::KeyValues::parse(text);
  Scenario sc = default_scenario();
  auto positive_count = [&](const std::string& key, std::size_t fallback) {
    const long long v = kv.get_integer(key, static_cast<long long>(fallback));
    if (v < 0) throw Error(ErrorCode::InvalidSpec, key + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  sc.seed = static_cast<std::uint64_t>(kv.get_integer("seed", 1));
  sc.studies = positive_count("studies", sc.studies);
  if (auto agents = kv.get("agents")) {
    sc.agents.clear();
    sc.doses.clear();
    sc.shape.clear();
    for (const auto& a : io::split(*agents, ',')) sc.agents.emplace_back(io::trim(a));
  }
  const auto common_doses = kv.get_doubles("doses", {10, 20, 40});
  for (const auto& a : sc.agents) {
    sc.doses[a] = kv.get_doubles("doses." + a, common_doses);
    if (auto c = kv.get("class." + a)) sc.classes[a] = std::string(io::trim(*c));
    if (kv.contains("factor." + a)) sc.factors[a] = kv.get_double("factor." + a, 1.0);
  }
  sc.min_active_arms = positive_count("active_arms_min", sc.min_active_arms);
  sc.max_active_arms = positive_count("active_arms_max", sc.max_active_arms);
  sc.placebo_fraction = kv.get_double("placebo_fraction", sc.placebo_fraction);
  sc.sample_size = kv.get_integer("n", sc.sample_size);
  sc.tau = kv.get_double("tau", sc.tau);
  sc.placebo_logit_mean = kv.get_double("placebo_logit_mean", sc.placebo_logit_mean);
  sc.placebo_logit_sd = kv.get_double("placebo_logit_sd", sc.placebo_logit_sd);
  sc.knot_percentiles = kv.get_doubles("knot_percentiles", sc.knot_percentiles);
  if (auto cs = kv.get("class_shapes")) sc.class_shapes = io::trim(*cs) == "true";
  for (const auto& [key, value] : kv.entries()) {
    if (key.starts_with("shape.")) sc.shape[key.substr(6)] = kv.get_doubles(key, {});
  }
  if (auto cov = kv.get("covariate"); cov && io::trim(*cov) != "none") {
    sc.covariate = std::string(io::trim(*cov));
    sc.covariate_low = kv.get_double("covariate.low", 0.0);
    sc.covariate_high = kv.get_double("covariate.high", 1.0);
    sc.covariate_center = kv.get_double("covariate.center", 0.0);
    sc.covariate_effect = kv.get_double("covariate.g", 0.0);
  }
  sc.validate();
  return sc;
}

std::string emit_scenario(const Scenario& sc) {
  io::KeyValues kv;
  kv.set("seed", std::to_string(sc.seed));
  kv.set("studies", std::to_string(sc.studies));
  kv.set("agents", join(sc.agents));
  for (const auto& a : sc.agents) kv.set("doses." + a, join(sc.doses.at(a)));
  kv.set("active_arms_min", std::to_string(sc.min_active_arms));
  kv.set("active_arms_max", std::to_string(sc.max_active_arms));
  kv.set("placebo_fraction", io::format_double(sc.placebo_fraction));
  kv.set("n", std::to_string(sc.sample_size));
  kv.set("tau", io::format_double(sc.tau));
  kv.set("placebo_logit_mean", io::format_double(sc.placebo_logit_mean));
  kv.set("placebo_logit_sd", io::format_double(sc.placebo_logit_sd));
  kv.set("knot_percentiles", join(sc.knot_percentiles));
  kv.set("class_shapes", sc.class_shapes ? "true" : "false");
  for (const auto& [agent, cls] : sc.classes) kv.set("class." + agent, cls);
  for (const auto& [agent, f] : sc.factors) kv.set("factor." + agent, io::format_double(f));
  for (const auto& [key, coef] : sc.shape) kv.set("shape." + key, join(coef));
  kv.set("covariate", sc.covariate.value_or("none"));
  if (sc.covariate) {
    kv.set("covariate.low", io::format_double(sc.covariate_low));
    kv.set("covariate.high", io::format_double(sc.covariate_high));
    kv.set("covariate.center", io::format_double(sc.covariate_center));
    kv.set("covariate.g", io::format_double(sc.covariate_effect));
  }
  return kv.to_string();
}

std::optional<double> Truth::find(std::string_view name) const {
  for (const auto& [n, v] : parameters) {
    if (n == name) return v;
  }
  return std::nullopt;
}

std::string emit_truth(const Truth& truth) {
  io::KeyValues kv;
  kv.set("seed", std::to_string(truth.seed));
  for (const auto& [group, k] : truth.knots) kv.set("knots." + group, join(k.knots));
  for (const auto& [name, value] : truth.parameters) kv.set("param." + name, io::format_double(value));
  return kv.to_string();
}

Truth parse_truth(std::string_view text) {
  const auto kv = io::KeyValues::parse(text);
  Truth t;
  t.seed = static_cast<std::uint64_t>(kv.get_integer("seed", 0));
  for (const auto& [key, value] : kv.entries()) {
    if (key.starts_with("knots.")) {
      const std::string group = key.substr(6);
      t.knots[group] = KnotSet{group, kv.get_doubles(key, {})};
    } else if (key.starts_with("param.")) {
      const auto v = io::parse_double(io::trim(value));
      if (!v) throw Error(ErrorCode::ParseFailure, "truth value for " + key);
      t.parameters.emplace_back(key.substr(6), *v);
    }
  }
  return t;
}

Simulation generate(const Scenario& sc) {
  sc.validate();
  Rng rng(sc.seed);

  // Arm layout first: knots depend on it.
  std::vector<std::pair<std::string, double>> candidates;
  for (const auto& a : sc.agents) {
    for (double d : sc.doses.at(a)) candidates.emplace_back(a, d);
  }
  struct Layout {
    bool placebo;
    std::vector<std::pair<std::string, double>> active;
  };
  std::vector<Layout> layouts(sc.studies);
  for (auto& lay : layouts) {
    lay.placebo = sc.placebo_fraction >= 1.0 || rng.uniform() < sc.placebo_fraction;
    std::size_t min_arms = lay.placebo ? sc.min_active_arms : std::max<std::size_t>(2, sc.min_active_arms);
    const std::size_t count = min_arms + rng.below(sc.max_active_arms - min_arms + 1);
    auto pool = candidates;
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t j = i + rng.below(pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    lay.active.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(lay.active.begin(), lay.active.end());
  }

  Simulation sim;
  sim.truth.seed = sc.seed;
  std::map<std::string, std::vector<double>> group_doses;
  for (const auto& lay : layouts) {
    for (const auto& [agent, dose] : lay.active) {
      group_doses[curve_key(sc, agent)].push_back(sc.class_shapes ? dose * factor_of(sc, agent) : dose);
    }
  }
  for (const auto& [group, doses] : group_doses) {
    sim.truth.knots[group] = place_knots(doses, sc.knot_percentiles, group);
  }
  auto effect = [&](const std::string& agent, double dose) {
    if (is_placebo(agent)) return 0.0;
    const std::string key = curve_key(sc, agent);
    const double x = sc.class_shapes ? dose * factor_of(sc, agent) : dose;
    return dose_effect(x, sim.truth.knots.at(key), sc.shape.at(key));
  };

  Dataset data;
  std::binomial_distribution<long long> binomial;
  for (std::size_t i = 0; i < sc.studies; ++i) {
    const auto& lay = layouts[i];
    Study study;
    study.id = "S" + std::to_string(i + 1);
    if (lay.placebo) study.arms.push_back({std::string(kPlacebo), 0.0, 0.0, 0, sc.sample_size, 0});
    for (const auto& [agent, dose] : lay.active) study.arms.push_back({agent, dose, dose, 0, sc.sample_size, 0});

    const double u = rng.normal(sc.placebo_logit_mean, sc.placebo_logit_sd);
    double z = 0.0;
    if (sc.covariate) {
      const double raw = rng.uniform(sc.covariate_low, sc.covariate_high);
      study.covariates[*sc.covariate] = raw;
      z = raw - sc.covariate_center;
    }
    const std::size_t ref = select_reference_arm(study, nullptr);
    const auto& ref_arm = study.arms[ref];
    const double ref_effect = effect(ref_arm.agent, ref_arm.dose);
    const double ref_interaction = is_placebo(ref_arm.agent) ? 0.0 : ref_arm.dose;
    // Shared component gives the multi-arm covariance tau^2 / 2.
    const double shared = rng.normal();
    std::vector<double> probs;
    for (std::size_t a = 0; a < study.arms.size(); ++a) {
      auto& arm = study.arms[a];
      double eta = u;
      if (a != ref) {
        const double mean = effect(arm.agent, arm.dose) - ref_effect;
        const double delta = mean + sc.tau * std::sqrt(0.5) * (shared + rng.normal());
        eta += delta + z * sc.covariate_effect * (arm.dose - ref_interaction);
      }
      const double p = expit(eta);
      probs.push_back(p);
      binomial.param(std::binomial_distribution<long long>::param_type(arm.sample_size, p));
      arm.events = binomial(rng);
    }
    sim.probabilities.push_back(std::move(probs));
    sim.truth.parameters.emplace_back("u[" + study.id + "]", u);
    data.studies.push_back(std::move(study));
  }
  if (sc.covariate) data.covariate_columns.push_back(*sc.covariate);
  std::set<std::string> agent_ids;
  for (const auto& s : data.studies) {
    for (const auto& arm : s.arms) {
      if (!is_placebo(arm.agent)) agent_ids.insert(arm.agent);
    }
  }
  for (const auto& a : agent_ids) data.agents.push_back({a, "", 1.0});

  // Normalise through the ingestion path so the result equals what a reader of the file sees.
  sim.dataset = parse_dataset(emit_dataset(data));

  for (const auto& [key, coef] : sc.shape) {
    const bool used = sim.truth.knots.contains(key);
    if (!used) continue;
    for (std::size_t p = 0; p < coef.size(); ++p) {
      const std::string name = sc.class_shapes ? "b[" + key + ":" + std::to_string(p + 1) + "]"
                                               : "B[" + key + ":" + std::to_string(p + 1) + "]";
      sim.truth.parameters.emplace_back(name, coef[p]);
    }
  }
  sim.truth.parameters.emplace_back("tau", sc.tau);
  if (sc.covariate) sim.truth.parameters.emplace_back("g[1]", sc.covariate_effect);

  if (!sc.classes.empty() || !sc.factors.empty()) {
    EquivalenceTable table;
    for (const auto& a : sc.agents) {
      table.factors[a] = factor_of(sc, a);
      if (auto c = sc.classes.find(a); c != sc.classes.end()) table.classes[a] = c->second;
    }
    sim.equivalence = table;
  }
  return sim;
}

std::vector<RecoveryItem> score_recovery(const Truth& truth, const PosteriorDraws& draws,
                                         const std::vector<std::string>& names) {
  std::vector<std::pair<std::string, double>> selected;
  if (names.empty()) {
    selected = truth.parameters;
  } else {
    for (const auto& n : names) {
      auto v = truth.find(n);
      if (!v) throw Error(ErrorCode::LayoutMismatch, "no truth for " + n);
      selected.emplace_back(n, *v);
    }
  }
  std::vector<RecoveryItem> out;
  for (const auto& [name, value] : selected) {
    const auto idx = draws.index_of(name);
    if (!idx) throw Error(ErrorCode::LayoutMismatch, "draws have no parameter " + name);
    auto column = draws.pooled_column(*idx);
    RecoveryItem item;
    item.name = name;
    item.truth = value;
    item.median = quantile(column, 0.5);
    item.lo95 = quantile(column, 0.025);
    item.hi95 = quantile(column, 0.975);
    item.bias = item.median - value;
    item.covered = item.lo95 <= value && value <= item.hi95;
    out.push_back(std::move(item));
  }
  return out;
}

std::string emit_recovery(const std::vector<RecoveryItem>& items) {
  std::string out = "parameter,truth,median,bias,lo95,hi95,covered\n";
  for (const auto& i : items) {
    out += i.name + "," + io::format_double(i.truth) + "," + io::format_double(i.median) + "," +
           io::format_double(i.bias) + "," + io::format_double(i.lo95) + "," + io::format_double(i.hi95) + "," +
           (i.covered ? "1" : "0") + "\n";
  }
  return out;
}

}  // namespace denma
