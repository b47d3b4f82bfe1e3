#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "denma/error.hpp"
#include "denma/model.hpp"
#include "denma/simgen.hpp"

using namespace denma;

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

double normal_lpdf(double x, double m, double var) { return -0.5 * (kLog2Pi + std::log(var) + (x - m) * (x - m) / var); }

double lchoose(double n, double r) { return std::lgamma(n + 1) - std::lgamma(r + 1) - std::lgamma(n - r + 1); }

double binom_lpmf(double r, double n, double eta) {
  const double p = 1.0 / (1.0 + std::exp(-eta));
  return lchoose(n, r) + r * std::log(p) + (n - r) * std::log1p(-p);
}

double rcs_f(double x, double t1, double t2, double t3) {
  auto c = [](double v) { return v > 0 ? v * v * v : 0.0; };
  return c(x - t1) - (t3 - t1) / (t3 - t2) * c(x - t2) + (t2 - t1) / (t3 - t2) * c(x - t3);
}

ModelSpec common_delta_spec() {
  ModelSpec s = preset("M1");
  s.delta = DeltaAssumption::Common;
  return s;
}

void set(std::vector<double>& state, const ParameterLayout& layout, const std::string& name, double v) {
  const auto idx = layout.find(name);
  REQUIRE_MESSAGE(idx.has_value(), name);
  state[*idx] = v;
}

const std::map<std::string, KnotSet> kKnots = {{"drugA", {"drugA", {10, 20, 30}}}, {"drugB", {"drugB", {20, 50, 80}}}};

// Two studies: one placebo-controlled, one head-to-head without placebo.
Dataset small_network() {
  return parse_dataset(
      "study_id,agent,dose,events,n\n"
      "S1,placebo,0,0,10\nS1,drugA,20,5,10\nS1,drugB,50,7,10\n"
      "S2,drugB,50,30,60\nS2,drugA,20,25,60\n");
}

}  // namespace

TEST_CASE("linear predictor") {
  DoseEffectModel m(small_network(), common_delta_spec(), kKnots);
  const auto& L = m.layout();
  std::vector<double> s(L.size(), 0.0);
  set(s, L, "u[S1]", -0.5);
  set(s, L, "u[S2]", 0.25);
  set(s, L, "B[drugA:1]", 0.03);
  set(s, L, "B[drugA:2]", -2e-5);
  set(s, L, "B[drugB:1]", 0.01);
  set(s, L, "B[drugB:2]", 4e-5);

  CHECK(m.linear_predictor(s, 0, 0) == -0.5);
  const double FA = 0.03 * 20 + -2e-5 * rcs_f(20, 10, 20, 30);
  const double FB = 0.01 * 50 + 4e-5 * rcs_f(50, 20, 50, 80);
  CHECK(m.linear_predictor(s, 0, 1) == doctest::Approx(-0.5 + FA).epsilon(1e-14));
  // S2 has no placebo: drugA at the lower dose is the reference.
  CHECK(m.reference_arm(1) == 1);
  CHECK(m.linear_predictor(s, 1, 1) == 0.25);
  CHECK(m.linear_predictor(s, 1, 0) - m.linear_predictor(s, 1, 1) == doctest::Approx(FB - FA).epsilon(1e-14));
  CHECK(m.delta_mean(s, 1, 0) == doctest::Approx(FB - FA).epsilon(1e-14));

  std::vector<double> wrong(L.size() + 1);
  CHECK_THROWS_AS(m.linear_predictor(wrong, 0, 0), Error);
}

TEST_CASE("binomial log likelihood keeps the normalising constant") {
  const auto d = parse_dataset("study_id,agent,dose,events,n\nS1,placebo,0,0,10\nS1,drugA,20,5,10\n");
  DoseEffectModel m(d, common_delta_spec(), std::map<std::string, KnotSet>{{"drugA", {"drugA", {10, 20, 30}}}});
  std::vector<double> s(m.dimension(), 0.0);
  const double want = 10 * std::log(0.5) + (lchoose(10, 5) + 10 * std::log(0.5));
  CHECK(m.log_likelihood(s) == doctest::Approx(want).epsilon(1e-14));
  CHECK(10 * std::log(0.5) == doctest::Approx(-6.931).epsilon(1e-4));
  s[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK(m.log_likelihood(s) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("likelihood at simulated truth matches direct summation") {
  const auto sim = generate(default_scenario());
  DoseEffectModel m(sim.dataset, preset("M1"), sim.truth.knots);
  const auto& L = m.layout();
  std::vector<double> s(L.size(), 0.0);
  for (const auto& [name, value] : sim.truth.parameters) {
    if (auto idx = L.find(name)) s[*idx] = value;
  }
  // delta at its mean
  for (std::size_t i = 0; i < m.study_count(); ++i) {
    for (std::size_t a = 0; a < sim.dataset.studies[i].arms.size(); ++a) {
      if (L.delta[i][a] != kAbsent) s[L.delta[i][a]] = m.delta_mean(s, i, a);
    }
  }
  double oracle = 0.0;
  for (std::size_t i = 0; i < sim.dataset.studies.size(); ++i) {
    const auto& study = sim.dataset.studies[i];
    const double u = *sim.truth.find("u[" + study.id + "]");
    for (const auto& arm : study.arms) {
      double eta = u;
      if (!is_placebo(arm.agent)) {
        const auto& t = sim.truth.knots.at(arm.agent).knots;
        eta += *sim.truth.find("B[" + arm.agent + ":1]") * arm.dose +
               *sim.truth.find("B[" + arm.agent + ":2]") * rcs_f(arm.dose, t[0], t[1], t[2]);
      }
      oracle += binom_lpmf(static_cast<double>(arm.events), static_cast<double>(arm.sample_size), eta);
    }
  }
  CHECK(std::fabs(m.log_likelihood(s) - oracle) <= 1e-10 * std::fabs(oracle));
}

TEST_CASE("prior support and closed forms") {
  SUBCASE("heterogeneity above its bound") {
    DoseEffectModel m(small_network(), preset("M1"), kKnots);
    std::vector<double> s(m.dimension(), 0.0);
    s[m.layout().tau] = 6.0;
    CHECK(m.log_prior(s) == -std::numeric_limits<double>::infinity());
    CHECK(m.log_posterior(s) == -std::numeric_limits<double>::infinity());
  }
  SUBCASE("all-zero state is a sum of normal densities at zero") {
    DoseEffectModel m(small_network(), common_delta_spec(), kKnots);
    std::vector<double> s(m.dimension(), 0.0);
    const double each = -0.5 * (kLog2Pi + std::log(1000.0));
    CHECK(m.log_prior(s) == doctest::Approx(each * static_cast<double>(m.dimension())).epsilon(1e-14));
    CHECK(m.log_posterior(s) == doctest::Approx(m.log_prior(s) + m.log_likelihood(s)).epsilon(1e-14));
  }
}

TEST_CASE("three-arm study relative effects follow the dense bivariate normal") {
  DoseEffectModel m(small_network(), preset("M1"), kKnots);
  const auto& L = m.layout();
  std::vector<double> s(L.size(), 0.0);
  const double tau = 0.4;
  s[L.tau] = tau;
  set(s, L, "B[drugA:1]", 0.02);
  set(s, L, "B[drugB:2]", 1e-5);
  set(s, L, "delta[S1:drugA@20]", 0.7);
  set(s, L, "delta[S1:drugB@50]", -0.1);
  set(s, L, "delta[S2:drugB@50]", 0.3);

  // Oracle: explicit 2x2 covariance inverse and determinant.
  const double e1 = 0.7 - m.delta_mean(s, 0, 1), e2 = -0.1 - m.delta_mean(s, 0, 2);
  const double v = tau * tau, c = tau * tau / 2;
  const double det = v * v - c * c;
  const double quad = (v * e1 * e1 - 2 * c * e1 * e2 + v * e2 * e2) / det;
  const double mvn = -0.5 * (2 * kLog2Pi + std::log(det) + quad);
  const double single = normal_lpdf(0.3 - m.delta_mean(s, 1, 0), 0.0, v);

  double rest = 0.0;
  for (std::size_t i = 0; i < L.size(); ++i) {
    if (L.names[i].starts_with("u[") || L.names[i].starts_with("B[")) rest += normal_lpdf(s[i], 0.0, 1000.0);
  }
  rest += -std::log(5.0);  // tau ~ U(0, 5)
  CHECK(m.log_prior(s) == doctest::Approx(rest + mvn + single).epsilon(1e-13));
}

TEST_CASE("finite-difference check on a baseline") {
  DoseEffectModel m(small_network(), preset("M1"), kKnots);
  const auto& L = m.layout();
  std::vector<double> s(L.size(), 0.0);
  s[L.tau] = 0.3;
  set(s, L, "u[S1]", -0.4);
  set(s, L, "delta[S1:drugA@20]", 0.5);
  set(s, L, "delta[S1:drugB@50]", 0.9);
  const std::size_t u = *L.find("u[S1]");
  // d/du: sum over S1 arms of (r - n p), plus the N(0, 1000) prior slope.
  double analytic = -s[u] / 1000.0;
  const double events[] = {0, 5, 7};
  for (std::size_t a = 0; a < 3; ++a) {
    const double p = 1.0 / (1.0 + std::exp(-m.linear_predictor(s, 0, a)));
    analytic += events[a] - 10.0 * p;
  }
  for (double eps : {1e-3, 1e-4}) {
    auto plus = s, minus = s;
    plus[u] += eps;
    minus[u] -= eps;
    const double fd = (m.log_posterior(plus) - m.log_posterior(minus)) / (2 * eps);
    CHECK(std::fabs(fd - analytic) < 10 * eps * eps + 1e-7);
    const double one_sided = m.log_posterior(plus) - m.log_posterior(s);
    CHECK(std::fabs(one_sided - eps * analytic) < 10 * eps * eps);
  }
}

TEST_CASE("consistency of indirect contrasts") {
  DoseEffectModel m(small_network(), common_delta_spec(), kKnots);
  const auto& L = m.layout();
  std::vector<double> s(L.size(), 0.0);
  set(s, L, "B[drugA:1]", 0.021);
  set(s, L, "B[drugA:2]", -3e-5);
  set(s, L, "B[drugB:1]", 0.013);
  set(s, L, "B[drugB:2]", 2e-6);
  // S2 contrast B vs A equals (B vs placebo) - (A vs placebo) from S1.
  const double direct = m.delta_mean(s, 1, 0);
  const double via_placebo = m.delta_mean(s, 0, 2) - m.delta_mean(s, 0, 1);
  CHECK(direct == doctest::Approx(via_placebo).epsilon(1e-14));
}

TEST_CASE("common interaction cancels between agents at equal dose") {
  const auto d = parse_dataset(
      "study_id,agent,dose,events,n,rob\n"
      "S1,placebo,0,10,50,0.8\nS1,drugA,20,20,50,0.8\nS1,drugB,20,25,50,0.8\n"
      "S2,placebo,0,11,50,0.1\nS2,drugA,40,22,50,0.1\nS2,drugB,40,24,50,0.1\n"
      "S3,placebo,0,12,50,0.5\nS3,drugA,10,15,50,0.5\nS3,drugB,10,16,50,0.5\n");
  ModelSpec spec = preset("M2");
  spec.delta = DeltaAssumption::Common;
  DoseEffectModel m(d, spec);
  const auto& L = m.layout();
  std::vector<double> s(L.size(), 0.0);
  set(s, L, "B[drugA:1]", 0.02);
  set(s, L, "B[drugB:1]", 0.03);
  auto contrast = [&](double g) {
    set(s, L, "g[1]", g);
    return m.linear_predictor(s, 0, 2) - m.linear_predictor(s, 0, 1);
  };
  CHECK(contrast(0.0) == doctest::Approx(contrast(3.0)).epsilon(1e-14));
  // but it does move an active-vs-placebo contrast
  set(s, L, "g[1]", 1.0);
  CHECK(m.linear_predictor(s, 0, 1) - m.linear_predictor(s, 0, 0) ==
        doctest::Approx(0.02 * 20 + 0.8 * 1.0 * 20).epsilon(1e-14));
}

TEST_CASE("a zero covariate reduces the regression to the base model") {
  const auto d = parse_dataset(
      "study_id,agent,dose,events,n,rob\n"
      "S1,placebo,0,10,50,0\nS1,drugA,20,20,50,0\nS1,drugA,40,23,50,0\n"
      "S2,placebo,0,11,50,0\nS2,drugA,10,15,50,0\nS2,drugA,30,22,50,0\n");
  DoseEffectModel base(d, preset("M1"));
  DoseEffectModel reg(d, preset("M2"));
  std::vector<double> sb(base.dimension(), 0.1), sr(reg.dimension(), 0.1);
  const double g = 0.37;
  sr[reg.layout().g[0]] = g;
  CHECK(reg.log_posterior(sr) == doctest::Approx(base.log_posterior(sb) + normal_lpdf(g, 0.0, 1000.0)).epsilon(1e-13));
}

TEST_CASE("vanishing heterogeneity reproduces the common-effect likelihood") {
  const auto sim = generate(default_scenario());
  DoseEffectModel ex(sim.dataset, preset("M1"), sim.truth.knots);
  DoseEffectModel co(sim.dataset, common_delta_spec(), sim.truth.knots);
  std::vector<double> se(ex.dimension(), 0.0), sc(co.dimension(), 0.0);
  for (const auto& [name, value] : sim.truth.parameters) {
    if (auto i = ex.layout().find(name)) se[*i] = value;
    if (auto i = co.layout().find(name)) sc[*i] = value;
  }
  se[ex.layout().tau] = 1e-12;
  for (std::size_t i = 0; i < ex.study_count(); ++i) {
    for (std::size_t a = 0; a < ex.layout().delta[i].size(); ++a) {
      if (ex.layout().delta[i][a] != kAbsent) se[ex.layout().delta[i][a]] = ex.delta_mean(se, i, a);
    }
  }
  CHECK(ex.log_likelihood(se) == co.log_likelihood(sc));
}

TEST_CASE("parameter counts") {
  SUBCASE("M1 with twenty agents") {
    Scenario sc = default_scenario();
    sc.agents.clear();
    sc.doses.clear();
    sc.shape.clear();
    for (int k = 0; k < 20; ++k) {
      const std::string a = "agent" + std::to_string(k + 10);
      sc.agents.push_back(a);
      sc.doses[a] = {10, 20, 40};
      sc.shape[a] = {0.02, -1e-5};
    }
    sc.studies = 80;
    const auto d = generate(sc).dataset;
    REQUIRE(d.agents.size() == 20);
    std::size_t deltas = 0;
    for (const auto& s : d.studies) deltas += s.arms.size() - 1;
    const auto L = parameter_layout(preset("M1"), d);
    CHECK(L.size() == d.studies.size() + deltas + 40 + 1);
  }
  SUBCASE("common effects and a common curve") {
    auto d = small_network();
    EquivalenceTable t;
    t.factors = {{"drugA", 1.0}, {"drugB", 0.5}};
    ModelSpec spec = common_delta_spec();
    spec.shape_across_agents = AgentShape::Common;
    d = prepare_dataset(d, spec, &t);
    CHECK(parameter_layout(spec, d).size() == d.studies.size() + 2);
  }
  SUBCASE("class-common curves") {
    auto d = small_network();
    EquivalenceTable t;
    t.factors = {{"drugA", 1.0}, {"drugB", 0.5}};
    t.classes = {{"drugA", "c1"}, {"drugB", "c2"}};
    const auto spec = preset("M5");
    d = prepare_dataset(d, spec, &t);
    const auto L = parameter_layout(spec, d);
    CHECK(L.b.size() == 2 * 2);
    CHECK(L.B.size() == 4);
    for (auto i : L.B) CHECK(i == kAbsent);
  }
  SUBCASE("class assumption without a class map") {
    try {
      parameter_layout(preset("M5"), small_network());
      FAIL("no error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::SpecDatasetMismatch);
    }
  }
  SUBCASE("layout is deterministic") {
    CHECK(parameter_layout(preset("M1"), small_network()).names ==
          parameter_layout(preset("M1"), small_network()).names);
  }
}

TEST_CASE("disconnected networks") {
  const auto d = parse_dataset(
      "study_id,agent,dose,events,n\n"
      "S1,drugA,10,5,50\nS1,drugA,20,6,50\nS1,drugA,40,9,50\n"
      "S2,drugB,10,5,50\nS2,drugB,20,6,50\nS2,drugB,40,8,50\n");
  try {
    prepare_dataset(d, preset("M1"), nullptr);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DisconnectedNetwork);
  }
  ModelSpec exch = preset("M1");
  exch.shape_across_agents = AgentShape::Exchangeable;
  std::vector<std::string> warnings;
  CHECK_NOTHROW(prepare_dataset(d, exch, nullptr, &warnings));
  CHECK(warnings.size() == 1);
}

TEST_CASE("specification files") {
  for (const char* name : {"M1", "M2", "M3", "M4", "M5"}) {
    const auto spec = preset(name);
    const auto text = emit_model_spec(spec);
    CHECK(emit_model_spec(parse_model_spec(text)) == text);
  }
  CHECK(preset("M3").covariate->center == 2010.0);
  CHECK(preset("M4").covariate->name == "var_logor");
  CHECK(preset("M5").shape_across_agents == AgentShape::ClassCommon);
  const auto custom = parse_model_spec("preset = M1\nshape_across_studies = exchangeable\nsigma_beta = per_p\n");
  CHECK(custom.shape_across_studies == StudyShape::Exchangeable);
  CHECK_FALSE(custom.shared_sigma_beta);
  CHECK(preset("M1").sampler.retained_per_chain() == 6000);
  CHECK_THROWS_AS(preset("M9"), Error);
}

TEST_CASE("every lattice configuration builds and starts finite") {
  const auto sim = generate(default_scenario());
  EquivalenceTable t;
  t.factors = {{"drugA", 1.0}, {"drugB", 1.0}, {"drugC", 1.0}};
  t.classes = {{"drugA", "c1"}, {"drugB", "c1"}, {"drugC", "c2"}};
  for (auto delta : {DeltaAssumption::Exchangeable, DeltaAssumption::Common}) {
    for (auto studies : {StudyShape::Common, StudyShape::Exchangeable}) {
      for (auto agents : {AgentShape::Independent, AgentShape::Exchangeable, AgentShape::Common,
                          AgentShape::ClassExchangeable, AgentShape::ClassCommon}) {
        ModelSpec spec = preset("M1");
        spec.delta = delta;
        spec.shape_across_studies = studies;
        spec.shape_across_agents = agents;
        CAPTURE(to_string(delta));
        CAPTURE(to_string(studies));
        CAPTURE(to_string(agents));
        const auto d = prepare_dataset(sim.dataset, spec, &t);
        DoseEffectModel m(d, spec);
        Rng rng(3, 1);
        const auto s = m.initial_state(rng, 0);
        CHECK(std::isfinite(m.log_posterior(s)));
        CHECK(std::isfinite(m.log_density(s)));
        CHECK(m.log_density(s) == doctest::Approx(m.log_posterior(s)).epsilon(1e-12));
      }
    }
  }
}
