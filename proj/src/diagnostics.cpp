#include "denma/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "denma/error.hpp"
#include "denma/io.hpp"
#include "denma/kernels.hpp"
#include "denma/model.hpp"
#include "denma/spline.hpp"

namespace denma {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double mean_of(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double variance_of(std::span<const double> x, double mean) {
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return ss / static_cast<double>(x.size() - 1);
}

void require_draws(const std::vector<std::vector<double>>& chains, std::size_t min_chains) {
  if (chains.size() < min_chains) {
    throw Error(ErrorCode::TooFewDraws, "need at least " + std::to_string(min_chains) + " chains");
  }
  for (const auto& c : chains) {
    if (c.size() < 4) throw Error(ErrorCode::TooFewDraws, "need at least 4 draws per chain");
    if (c.size() != chains.front().size()) throw Error(ErrorCode::TooFewDraws, "chains differ in length");
  }
}

double clamp_eta(double eta) { return std::clamp(eta, -kernels::kLogitClamp, kernels::kLogitClamp); }

double expit(double eta) {
  return eta >= 0.0 ? 1.0 / (1.0 + std::exp(-eta)) : std::exp(eta) / (1.0 + std::exp(eta));
}

}  // namespace

Statistic rhat(const std::vector<std::vector<double>>& chains) {
  require_draws(chains, 2);
  const std::size_t half = chains.front().size() / 2;
  const std::size_t n_total = chains.front().size();
  std::vector<double> means, vars;
  for (const auto& c : chains) {
    const std::span<const double> first(c.data(), half);
    const std::span<const double> second(c.data() + n_total - half, half);
    for (auto part : {first, second}) {
      const double m = mean_of(part);
      means.push_back(m);
      vars.push_back(variance_of(part, m));
    }
  }
  const double n = static_cast<double>(half);
  const double grand = mean_of(means);
  const double between = n * variance_of(means, grand);
  const double within = mean_of(vars);
  if (!(within > 0.0)) return {kNaN, true};
  const double pooled = (n - 1.0) / n * within + between / n;
  return {std::sqrt(pooled / within), false};
}

Statistic ess(const std::vector<std::vector<double>>& chains) {
  require_draws(chains, 1);
  const std::size_t m = chains.size();
  const std::size_t n = chains.front().size();
  const double nd = static_cast<double>(n);

  std::vector<double> means(m), vars(m);
  std::vector<std::vector<double>> centred(m);
  for (std::size_t j = 0; j < m; ++j) {
    means[j] = mean_of(chains[j]);
    vars[j] = variance_of(chains[j], means[j]);
    centred[j].resize(n);
    for (std::size_t t = 0; t < n; ++t) centred[j][t] = chains[j][t] - means[j];
  }
  const double within = mean_of(vars);
  double pooled = within * (nd - 1.0) / nd;
  if (m > 1) pooled += variance_of(means, mean_of(means));
  if (!(pooled > 0.0) || !(within > 0.0)) return {kNaN, true};

  // Chain-averaged biased autocovariance at lag t.
  auto acov = [&](std::size_t t) {
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double* x = centred[j].data();
      double s = 0.0;
      for (std::size_t i = 0; i + t < n; ++i) s += x[i] * x[i + t];
      total += s / nd;
    }
    return total / static_cast<double>(m);
  };
  auto rho = [&](std::size_t t) { return 1.0 - (within - acov(t)) / pooled; };

  double tau = -1.0;
  double previous_pair = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t + 1 < n; t += 2) {
    double pair = rho(t) + rho(t + 1);
    if (pair < 0.0) break;
    pair = std::min(pair, previous_pair);
    previous_pair = pair;
    tau += 2.0 * pair;
  }
  const double total = static_cast<double>(m * n);
  tau = std::max(tau, 1.0 / std::log10(total));
  return {std::min(total, total / tau), false};
}

Statistic rhat(const PosteriorDraws& draws, std::string_view param) {
  return rhat(draws.per_chain(draws.require(param)));
}

Statistic ess(const PosteriorDraws& draws, std::string_view param) {
  return ess(draws.per_chain(draws.require(param)));
}

std::vector<ParameterSummary> summarize(const PosteriorDraws& draws) {
  std::vector<ParameterSummary> out;
  for (std::size_t p = 0; p < draws.dimension(); ++p) {
    ParameterSummary s;
    s.name = draws.names[p];
    auto pooled = draws.pooled_column(p);
    if (pooled.size() < 2) throw Error(ErrorCode::TooFewDraws, "need at least 2 draws to summarize");
    s.mean = mean_of(pooled);
    s.sd = std::sqrt(variance_of(pooled, s.mean));
    s.median = quantile(pooled, 0.5);
    s.lo95 = quantile(pooled, 0.025);
    s.hi95 = quantile(pooled, 0.975);
    const auto chains = draws.per_chain(p);
    s.rhat = chains.size() >= 2 && draws.rows_per_chain >= 4 ? rhat(chains) : Statistic{kNaN, true};
    s.ess = draws.rows_per_chain >= 4 ? ess(chains) : Statistic{kNaN, true};
    out.push_back(std::move(s));
  }
  return out;
}

double binomial_deviance(double events, double trials, double log_choose, double eta) {
  const double e = clamp_eta(eta);
  // log(1 + exp(e)) in a form that does not overflow.
  const double softplus = e > 0.0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
  return -2.0 * (log_choose + events * e - trials * softplus);
}

double residual_deviance(double events, double trials, double p) {
  const double failures = trials - events;
  double d = 0.0;
  if (events > 0.0) d += events * std::log(events / (trials * p));
  if (failures > 0.0) d += failures * std::log(failures / (trials * (1.0 - p)));
  return 2.0 * d;
}

FitSummary dic(const PosteriorDraws& draws, const ArmData& data, std::size_t dimension,
               const PredictorFn& predictors) {
  const std::size_t arms = data.events.size();
  if (draws.dimension() != dimension || data.trials.size() != arms || data.log_binomial_coefficients.size() != arms) {
    throw Error(ErrorCode::ModelDatasetMismatch, "draws, model and data dimensions disagree");
  }
  const std::size_t rows = draws.total_rows();
  if (rows == 0) throw Error(ErrorCode::TooFewDraws, "no draws");

  std::vector<double> eta(arms), eta_sum(arms, 0.0), dev_sum(arms, 0.0), res_sum(arms, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    predictors(draws.pooled_row(r), eta);
    for (std::size_t a = 0; a < arms; ++a) {
      const double e = clamp_eta(eta[a]);
      eta_sum[a] += e;
      dev_sum[a] += binomial_deviance(data.events[a], data.trials[a], data.log_binomial_coefficients[a], e);
      res_sum[a] += residual_deviance(data.events[a], data.trials[a], expit(e));
    }
  }

  FitSummary fit;
  const double nr = static_cast<double>(rows);
  fit.observations.resize(arms);
  for (std::size_t a = 0; a < arms; ++a) {
    auto& o = fit.observations[a];
    o.dbar = dev_sum[a] / nr;
    o.dplug = binomial_deviance(data.events[a], data.trials[a], data.log_binomial_coefficients[a], eta_sum[a] / nr);
    o.leverage = o.dbar - o.dplug;
    o.dres = res_sum[a] / nr;
    fit.dbar += o.dbar;
    fit.pd += o.leverage;
    fit.dres += o.dres;
  }
  fit.dic = fit.dbar + fit.pd;
  return fit;
}

FitSummary dic(const PosteriorDraws& draws, const DoseEffectModel& model) {
  if (draws.names != model.layout().names) {
    throw Error(ErrorCode::ModelDatasetMismatch, "draws were not produced by this model and dataset");
  }
  const ArmData data{model.events(), model.trials(), model.log_binomial_coefficients()};
  return dic(draws, data, model.dimension(),
             [&model](std::span<const double> s, std::span<double> out) { model.linear_predictors(s, out); });
}

std::vector<std::string> observation_labels(const DoseEffectModel& model) {
  std::vector<std::string> out;
  for (const auto& study : model.dataset().studies) {
    for (std::size_t a = 0; a < study.arms.size(); ++a) {
      const auto& arm = study.arms[a];
      out.push_back(study.id + "," + std::to_string(a + 1) + "," + arm.agent + "," +
                    io::format_double(arm.original_dose));
    }
  }
  return out;
}

std::string FitSummary::to_text() const {
  std::ostringstream os;
  os << "DIC = " << io::format_double(dic) << "\n";
  os << "pD = " << io::format_double(pd) << "\n";
  os << "Dbar = " << io::format_double(dbar) << "\n";
  os << "Dres = " << io::format_double(dres) << "\n";
  os << "observations = " << observations.size() << "\n";
  return os.str();
}

std::string FitSummary::observation_table(const std::vector<std::string>& labels) const {
  if (labels.size() != observations.size()) {
    throw Error(ErrorCode::DimensionMismatch, "one label per observation required");
  }
  std::string out = "study,arm,agent,dose,dbar,dplug,leverage,dres\n";
  for (std::size_t i = 0; i < observations.size(); ++i) {
    const auto& o = observations[i];
    out += labels[i] + "," + io::format_double(o.dbar) + "," + io::format_double(o.dplug) + "," +
           io::format_double(o.leverage) + "," + io::format_double(o.dres) + "\n";
  }
  return out;
}

}  // namespace denma
