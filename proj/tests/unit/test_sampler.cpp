#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "denma/diagnostics.hpp"
#include "denma/error.hpp"
#include "denma/model.hpp"
#include "denma/sampler.hpp"
#include "denma/simgen.hpp"

using namespace denma;

namespace {

double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// r ~ Bin(n, expit(u)), u ~ N(0, 1000).
class BinomialToy final : public Target {
 public:
  BinomialToy(double r, double n) : r_(r), n_(n) {
    blocks_.push_back({"u", {0}, {0}, MoveKind::RandomWalk, std::numeric_limits<double>::infinity(), {0.5}, {}});
  }
  std::size_t dimension() const override { return 1; }
  std::vector<std::string> parameter_names() const override { return {"u"}; }
  const std::vector<BlockSpec>& blocks() const override { return blocks_; }
  std::size_t term_count() const override { return 1; }
  double term_log_density(std::span<const double> s, std::size_t) const override { return log_density_at(s[0]); }
  std::vector<double> initial_state(Rng& rng, std::size_t) const override { return {rng.normal(0.0, 1.0)}; }

  double log_density_at(double u) const {
    const double p = expit(u);
    return r_ * std::log(p) + (n_ - r_) * std::log1p(-p) - u * u / 2000.0;
  }

 private:
  double r_, n_;
  std::vector<BlockSpec> blocks_;
};

// Two locations with a shared positive scale: y_j ~ N(mu, s^2), s ~ U(0, 5).
class NormalScaleToy final : public Target {
 public:
  explicit NormalScaleToy(std::vector<double> y) : y_(std::move(y)) {
    blocks_.push_back({"mu", {0}, {0}, MoveKind::RandomWalk, std::numeric_limits<double>::infinity(), {0.5}, {}});
    blocks_.push_back({"s", {1}, {0}, MoveKind::LogRandomWalk, 5.0, {0.3}, {}});
  }
  std::size_t dimension() const override { return 2; }
  std::vector<std::string> parameter_names() const override { return {"mu", "s"}; }
  const std::vector<BlockSpec>& blocks() const override { return blocks_; }
  std::size_t term_count() const override { return 1; }
  double term_log_density(std::span<const double> st, std::size_t) const override { return at(st[0], st[1]); }
  std::vector<double> initial_state(Rng& rng, std::size_t) const override {
    return {rng.normal(0.0, 1.0), rng.uniform(0.5, 2.0)};
  }
  double at(double mu, double s) const {
    if (!(s > 0.0) || s > 5.0) return -std::numeric_limits<double>::infinity();
    double lp = -static_cast<double>(y_.size()) * std::log(s);
    for (double y : y_) lp -= (y - mu) * (y - mu) / (2 * s * s);
    return lp;
  }

 private:
  std::vector<double> y_;
  std::vector<BlockSpec> blocks_;
};

double sample_quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Quantile of a density tabulated on a uniform grid.
double grid_quantile(const std::vector<double>& x, const std::vector<double>& w, double q) {
  double total = 0.0;
  for (double v : w) total += v;
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double next = acc + w[i] / total;
    if (next >= q) {
      const double step = x.size() > 1 ? x[1] - x[0] : 0.0;
      return x[i] - step / 2 + step * (q - acc) / (w[i] / total);
    }
    acc = next;
  }
  return x.back();
}

SamplerConfig small_config(std::uint64_t seed) {
  SamplerConfig c;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("conjugate toy against quadrature") {
  BinomialToy toy(30, 100);
  const auto draws = run(toy, small_config(11));
  REQUIRE(draws.rows_per_chain == 6000);

  // Oracle: midpoint rule on a fine u grid.
  const double lo = -3.5, hi = 0.5;
  const std::size_t G = 200000;
  std::vector<double> x(G), w(G);
  double peak = -1e300;
  for (std::size_t i = 0; i < G; ++i) {
    x[i] = lo + (hi - lo) * (static_cast<double>(i) + 0.5) / G;
    peak = std::max(peak, toy.log_density_at(x[i]));
  }
  double z = 0.0, m1 = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < G; ++i) {
    w[i] = std::exp(toy.log_density_at(x[i]) - peak);
    z += w[i];
    m1 += w[i] * expit(x[i]);
    m2 += w[i] * expit(x[i]) * expit(x[i]);
  }
  const double mean = m1 / z, sd = std::sqrt(m2 / z - mean * mean);

  std::vector<double> p;
  for (double u : draws.pooled_column(0)) p.push_back(expit(u));
  double sample_mean = 0.0;
  for (double v : p) sample_mean += v;
  sample_mean /= static_cast<double>(p.size());
  const double n_eff = ess(draws.per_chain(0)).value;
  const double mcse = sd / std::sqrt(n_eff);
  CHECK(std::fabs(sample_mean - mean) < 2 * mcse);
  CHECK(std::fabs(sample_mean - mean) < 0.01);
  for (double q : {0.1, 0.5, 0.9}) {
    std::vector<double> pgrid(G);
    for (std::size_t i = 0; i < G; ++i) pgrid[i] = expit(x[i]);
    CHECK(std::fabs(sample_quantile(p, q) - grid_quantile(pgrid, w, q)) < 0.01);
  }
}

TEST_CASE("two-parameter target matches dense integration quantiles") {
  NormalScaleToy toy({-0.3, 0.4, 1.1, 0.2, -0.8, 0.5});
  const auto draws = run(toy, small_config(5));
  const std::size_t G = 800;
  std::vector<double> mu(G), s(G), wmu(G, 0.0), ws(G, 0.0);
  for (std::size_t i = 0; i < G; ++i) {
    mu[i] = -3.0 + 6.0 * (i + 0.5) / G;
    s[i] = 5.0 * (i + 0.5) / G;
  }
  double peak = -1e300;
  for (std::size_t i = 0; i < G; ++i)
    for (std::size_t j = 0; j < G; ++j) peak = std::max(peak, toy.at(mu[i], s[j]));
  for (std::size_t i = 0; i < G; ++i) {
    for (std::size_t j = 0; j < G; ++j) {
      const double w = std::exp(toy.at(mu[i], s[j]) - peak);
      wmu[i] += w;
      ws[j] += w;
    }
  }
  for (double q : {0.1, 0.5, 0.9}) {
    CAPTURE(q);
    CHECK(std::fabs(sample_quantile(draws.pooled_column(0), q) - grid_quantile(mu, wmu, q)) < 0.02);
    CHECK(std::fabs(sample_quantile(draws.pooled_column(1), q) - grid_quantile(s, ws, q)) < 0.02);
  }
  for (double v : draws.pooled_column(1)) REQUIRE((v > 0.0 && v <= 5.0));
}

TEST_CASE("runs are reproducible and chains differ") {
  BinomialToy toy(3, 40);
  SamplerConfig c = small_config(99);
  c.iterations = 600;
  c.burn_in = 200;
  const auto a = run(toy, c);
  const auto b = run(toy, c);
  CHECK(emit_draws(a) == emit_draws(b));
  c.parallel = false;
  CHECK(emit_draws(run(toy, c)) == emit_draws(a));
  CHECK(a.chains[0].initial != a.chains[1].initial);
  CHECK(a.chains[0].values != a.chains[1].values);
  c.seed = 100;
  CHECK(emit_draws(run(toy, c)) != emit_draws(a));
}

TEST_CASE("draws text round trip") {
  BinomialToy toy(3, 40);
  SamplerConfig c = small_config(4);
  c.iterations = 100;
  c.burn_in = 50;
  c.thinning = 3;
  const auto d = run(toy, c);
  CHECK(d.rows_per_chain == 17);
  const auto back = parse_draws(emit_draws(d));
  CHECK(back.names == d.names);
  CHECK(back.rows_per_chain == d.rows_per_chain);
  for (std::size_t k = 0; k < d.chains.size(); ++k) CHECK(back.chains[k].values == d.chains[k].values);
  CHECK_THROWS_AS(parse_draws("x,y\n1,2\n"), Error);
}

TEST_CASE("schedule arithmetic") {
  SamplerConfig c;
  CHECK(c.retained_per_chain() == 6000);
  c.burn_in = c.iterations;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("initialisation") {
  class Hopeless final : public Target {
   public:
    Hopeless() { blocks_.push_back({"x", {0}, {0}, MoveKind::RandomWalk, std::numeric_limits<double>::infinity(), {1.0}, {}}); }
    std::size_t dimension() const override { return 1; }
    std::vector<std::string> parameter_names() const override { return {"x"}; }
    const std::vector<BlockSpec>& blocks() const override { return blocks_; }
    std::size_t term_count() const override { return 1; }
    double term_log_density(std::span<const double>, std::size_t) const override {
      return -std::numeric_limits<double>::infinity();
    }
    std::vector<double> initial_state(Rng&, std::size_t) const override { return {0.0}; }

   private:
    std::vector<BlockSpec> blocks_;
  };
  try {
    initialize(Hopeless{}, 1, 0);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InitializationFailure);
  }

  const auto sim = generate(default_scenario());
  DoseEffectModel m(prepare_dataset(sim.dataset, preset("M1"), nullptr), preset("M1"));
  const auto s0 = initialize(m, 7, 0), s1 = initialize(m, 7, 1);
  CHECK(std::isfinite(m.log_density(s0)));
  CHECK(std::isfinite(m.log_density(s1)));
  CHECK(s0 != s1);

  // A zero-event arm still gives a finite start.
  const auto zero = parse_dataset(
      "study_id,agent,dose,events,n\nS1,placebo,0,0,40\nS1,drugA,10,0,40\nS1,drugA,20,3,40\n"
      "S2,placebo,0,2,40\nS2,drugA,30,6,40\nS2,drugA,40,0,40\n");
  DoseEffectModel mz(prepare_dataset(zero, preset("M1"), nullptr), preset("M1"));
  CHECK(std::isfinite(mz.log_density(initialize(mz, 1, 0))));
}

TEST_CASE("adaptation on the default simulated network") {
  const auto sim = generate(default_scenario());
  const auto spec = preset("M1");
  DoseEffectModel m(prepare_dataset(sim.dataset, spec, nullptr), spec);
  const auto draws = run(m, spec.sampler);
  for (const auto& chain : draws.chains) {
    for (const auto& b : chain.blocks) {
      CAPTURE(b.name);
      CHECK(b.rate() >= 0.1);
      CHECK(b.rate() <= 0.6);
    }
    for (double lp : chain.log_density) REQUIRE(std::isfinite(lp));
  }
}
