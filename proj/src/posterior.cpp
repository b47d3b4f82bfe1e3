#include "denma/posterior.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>

#include "denma/error.hpp"
#include "denma/io.hpp"
#include "denma/kernels.hpp"
#include "denma/spline.hpp"

namespace denma {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
const double kLogTwoPi = std::log(2.0 * std::numbers::pi);

double normal_logpdf(double x, double mean, double sd) {
  if (!(sd > 0.0)) return kNegInf;
  const double z = (x - mean) / sd;
  return -0.5 * kLogTwoPi - std::log(sd) - 0.5 * z * z;
}

double expit(double eta) {
  const double e = std::clamp(eta, -kernels::kLogitClamp, kernels::kLogitClamp);
  return e >= 0.0 ? 1.0 / (1.0 + std::exp(-e)) : std::exp(e) / (1.0 + std::exp(e));
}

bool names_placebo(const std::string& name) {
  std::string lower = name;
  for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return is_placebo(lower);
}

// Curve parameters of an agent or class, resolved once per request.
struct CurveSource {
  std::string group;
  bool is_class = false;
  std::size_t index = 0;
  const KnotSet* knots = nullptr;
  double max_dose = 0.0;
};

CurveSource resolve(const DoseEffectModel& model, const std::string& group) {
  const auto& data = model.dataset();
  if (auto k = data.agent_index(group)) {
    return {group, false, *k, &model.agent_knots(*k), model.agent_max_dose(*k)};
  }
  if (model.spec().uses_classes()) {
    if (auto c = data.class_index(group)) {
      return {group, true, *c, &model.class_knots(*c), model.class_max_dose(*c)};
    }
  }
  throw Error(ErrorCode::UnknownAgent, group);
}

std::vector<double> shape_of(const DoseEffectModel& model, const CurveSource& src, std::span<const double> state) {
  return src.is_class ? model.class_shape(state, src.index) : model.agent_shape(state, src.index);
}

// Interaction contribution cov * G(x) at centred covariate z.
double interaction_at(const DoseEffectModel& model, const CurveSource& src, std::span<const double> state,
                      double x, double z) {
  if (model.interaction_dimension() == 0 || z == 0.0) return 0.0;
  std::vector<double> coef;
  std::vector<double> basis;
  if (src.is_class) {
    const auto& cov = *model.spec().covariate;
    if (cov.across_agents != InteractionPooling::Common) {
      throw Error(ErrorCode::InvalidSpec, "class curves with a covariate need a common interaction across agents");
    }
    const auto& layout = model.layout();
    for (std::size_t idx : layout.g) coef.push_back(state[idx]);
    basis = cov.form == InteractionForm::Linear ? std::vector<double>{x} : rcs_basis(x, *src.knots);
  } else {
    coef = model.agent_interaction(state, src.index);
    basis = model.interaction_basis(x, src.index);
  }
  double total = 0.0;
  for (std::size_t m = 0; m < coef.size(); ++m) total += coef[m] * basis[m];
  return z * total;
}

std::vector<double> curve_grid(const CurveSource& src, const CurveOptions& options) {
  if (options.grid) {
    for (double x : *options.grid) {
      if (!std::isfinite(x) || x < 0.0) throw Error(ErrorCode::Extrapolation, "negative or non-finite dose");
      if (!options.allow_extrapolation && x > src.max_dose * (1.0 + 1e-12)) {
        throw Error(ErrorCode::Extrapolation, "dose " + io::format_double(x) + " exceeds the largest observed dose " +
                                                  io::format_double(src.max_dose) + " for " + src.group);
      }
    }
    auto grid = *options.grid;
    if (!std::is_sorted(grid.begin(), grid.end())) throw Error(ErrorCode::InvalidSpec, "dose grid must be ascending");
    return grid;
  }
  std::vector<double> grid(100);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = src.max_dose * static_cast<double>(i) / 99.0;
  grid.back() = src.max_dose;
  return grid;
}

double centred_covariate(const DoseEffectModel& model, const CurveOptions& options) {
  if (!options.covariate) return 0.0;
  if (!model.spec().covariate) throw Error(ErrorCode::InvalidSpec, "model has no covariate");
  return *options.covariate - model.spec().covariate->center;
}

void require_layout(const DoseEffectModel& model, const PosteriorDraws& draws) {
  if (draws.names != model.layout().names) {
    throw Error(ErrorCode::LayoutMismatch, "draws were not produced by this model");
  }
}

double agent_log_or(const DoseEffectModel& model, const CurveSource* src, std::span<const double> state, double x) {
  if (!src) return 0.0;
  const auto coef = shape_of(model, *src, state);
  return dose_effect(x, *src->knots, coef);
}

}  // namespace

PlaceboModel::PlaceboModel(const Dataset& dataset, const PriorSet& priors) : priors_(priors) {
  names_ = {"logit_P0", "sigma0"};
  for (const auto& study : dataset.studies) {
    for (const auto& arm : study.arms) {
      if (!is_placebo(arm.agent)) continue;
      names_.push_back("theta[" + study.id + "]");
      events_.push_back(static_cast<double>(arm.events));
      trials_.push_back(static_cast<double>(arm.sample_size));
      lchoose_.push_back(std::lgamma(trials_.back() + 1.0) - std::lgamma(events_.back() + 1.0) -
                         std::lgamma(trials_.back() - events_.back() + 1.0));
    }
  }
  if (events_.size() < 2) {
    throw Error(ErrorCode::TooFewPlaceboArms,
                "found " + std::to_string(events_.size()) + " placebo arms; at least 2 are needed");
  }
  const std::size_t n = events_.size();
  std::vector<std::size_t> all_terms(n + 1);
  for (std::size_t t = 0; t <= n; ++t) all_terms[t] = t;
  std::vector<std::size_t> thetas(n);
  for (std::size_t i = 0; i < n; ++i) thetas[i] = 2 + i;

  for (std::size_t i = 0; i < n; ++i) {
    BlockSpec b;
    b.name = names_[2 + i];
    b.indices = {2 + i};
    b.terms = {i};
    b.initial_scales = {std::sqrt(1.0 / (events_[i] + 0.5) + 1.0 / (trials_[i] - events_[i] + 0.5))};
    blocks_.push_back(std::move(b));
  }
  BlockSpec mu;
  mu.name = "logit_P0";
  mu.indices = {0};
  mu.terms = all_terms;
  mu.initial_scales = {0.1};
  blocks_.push_back(mu);
  mu.name = "logit_P0~shift";
  mu.dependents = thetas;
  blocks_.push_back(mu);

  BlockSpec sigma;
  sigma.name = "sigma0";
  sigma.indices = {1};
  sigma.terms = all_terms;
  sigma.move = MoveKind::LogRandomWalk;
  sigma.upper = priors_.sigma0_upper;
  sigma.initial_scales = {0.3};
  blocks_.push_back(sigma);
  sigma.name = "sigma0~scale";
  sigma.dependents = thetas;
  blocks_.push_back(sigma);
}

double PlaceboModel::term_log_density(std::span<const double> s, std::size_t term) const {
  if (term == events_.size()) {
    const double sigma = s[1];
    if (!(sigma >= 0.0 && sigma <= priors_.sigma0_upper)) return kNegInf;
    return normal_logpdf(s[0], priors_.placebo_logit.mean, std::sqrt(priors_.placebo_logit.variance)) -
           std::log(priors_.sigma0_upper);
  }
  const double theta = s[2 + term];
  const double prior = normal_logpdf(theta, s[0], s[1]);
  if (!std::isfinite(prior) || !std::isfinite(theta)) return kNegInf;
  const double e = std::clamp(theta, -kernels::kLogitClamp, kernels::kLogitClamp);
  const double softplus = e > 0.0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
  return prior + lchoose_[term] + events_[term] * e - trials_[term] * softplus;
}

double PlaceboModel::couple(std::size_t block, std::span<const double> before, std::span<double> after) const {
  const std::string& name = blocks_[block].name;
  const std::size_t n = events_.size();
  if (name == "logit_P0~shift") {
    const double shift = after[0] - before[0];
    for (std::size_t i = 0; i < n; ++i) after[2 + i] = before[2 + i] + shift;
    return 0.0;
  }
  if (name == "sigma0~scale") {
    const double ratio = after[1] / before[1];
    for (std::size_t i = 0; i < n; ++i) after[2 + i] = before[0] + ratio * (before[2 + i] - before[0]);
    return static_cast<double>(n) * std::log(ratio);
  }
  return 0.0;
}

std::vector<double> PlaceboModel::initial_state(Rng& rng, std::size_t) const {
  const std::size_t n = events_.size();
  std::vector<double> s(2 + n);
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = (events_[i] + 0.5) / (trials_[i] + 1.0);
    s[2 + i] = std::log(p / (1.0 - p)) + rng.normal(0.0, 0.2);
    mean += s[2 + i];
  }
  s[0] = mean / static_cast<double>(n) + rng.normal(0.0, 0.2);
  s[1] = rng.uniform(0.05, std::min(0.5, 0.5 * priors_.sigma0_upper));
  return s;
}

PosteriorDraws fit_placebo(const Dataset& dataset, const SamplerConfig& config, const PriorSet& priors) {
  const PlaceboModel model(dataset, priors);
  return run(model, config);
}

std::vector<std::size_t> matched_rows(std::size_t available, std::size_t n) {
  if (available == 0) throw Error(ErrorCode::TooFewDraws, "no draws to match");
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    rows[i] = static_cast<std::size_t>((static_cast<unsigned __int128>(i) * available) / n);
  }
  return rows;
}

std::vector<double> placebo_logits(const PosteriorDraws& placebo, std::size_t n) {
  const std::size_t mu = placebo.require("logit_P0");
  std::vector<double> out;
  out.reserve(n);
  for (std::size_t r : matched_rows(placebo.total_rows(), n)) out.push_back(placebo.pooled_row(r)[mu]);
  return out;
}

Interval summarize_sample(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorCode::TooFewDraws, "empty sample");
  return {quantile(values, 0.5), quantile(values, 0.025), quantile(values, 0.975)};
}

Interval placebo_summary(const PosteriorDraws& placebo, std::size_t n) {
  auto logits = placebo_logits(placebo, n);
  for (auto& v : logits) v = expit(v);
  return summarize_sample(std::move(logits));
}

CurveEstimate absolute_curve(const DoseEffectModel& model, const PosteriorDraws& draws, const PosteriorDraws& placebo,
                             const std::string& group, const CurveOptions& options) {
  require_layout(model, draws);
  const auto src = resolve(model, group);
  const double z = centred_covariate(model, options);
  CurveEstimate curve;
  curve.group = src.group;
  curve.is_class = src.is_class;
  curve.scale = CurveScale::Absolute;
  curve.dose = curve_grid(src, options);
  curve.covariate = options.covariate;

  const std::size_t n = options.matched_draws;
  const auto logits = placebo_logits(placebo, n);
  const auto rows = matched_rows(draws.total_rows(), n);
  std::vector<std::vector<double>> values(curve.dose.size(), std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto state = draws.pooled_row(rows[i]);
    const auto coef = shape_of(model, src, state);
    for (std::size_t g = 0; g < curve.dose.size(); ++g) {
      const double x = curve.dose[g];
      values[g][i] = expit(logits[i] + dose_effect(x, *src.knots, coef) + interaction_at(model, src, state, x, z));
    }
  }
  for (auto& v : values) curve.values.push_back(summarize_sample(std::move(v)));
  return curve;
}

CurveEstimate log_or_curve(const DoseEffectModel& model, const PosteriorDraws& draws, const std::string& group,
                           const CurveOptions& options) {
  require_layout(model, draws);
  const auto src = resolve(model, group);
  const double z = centred_covariate(model, options);
  CurveEstimate curve;
  curve.group = src.group;
  curve.is_class = src.is_class;
  curve.scale = CurveScale::LogOddsRatio;
  curve.dose = curve_grid(src, options);
  curve.covariate = options.covariate;

  const std::size_t n = draws.total_rows();
  std::vector<std::vector<double>> values(curve.dose.size(), std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto state = draws.pooled_row(i);
    const auto coef = shape_of(model, src, state);
    for (std::size_t g = 0; g < curve.dose.size(); ++g) {
      const double x = curve.dose[g];
      values[g][i] = dose_effect(x, *src.knots, coef) + interaction_at(model, src, state, x, z);
    }
  }
  for (auto& v : values) curve.values.push_back(summarize_sample(std::move(v)));
  return curve;
}

std::string emit_curve(const CurveEstimate& curve) {
  std::string out = "agent,dose,median,lo95,hi95\n";
  for (std::size_t g = 0; g < curve.dose.size(); ++g) {
    const auto& v = curve.values[g];
    out += curve.group + "," + io::format_double(curve.dose[g]) + "," + io::format_double(v.median) + "," +
           io::format_double(v.lo95) + "," + io::format_double(v.hi95) + "\n";
  }
  return out;
}

std::vector<double> log_or_draws(const DoseEffectModel& model, const PosteriorDraws& draws, const std::string& agent,
                                 double dose) {
  require_layout(model, draws);
  std::optional<CurveSource> src;
  if (!names_placebo(agent)) src = resolve(model, agent);
  std::vector<double> out(draws.total_rows());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = agent_log_or(model, src ? &*src : nullptr, draws.pooled_row(i), dose);
  }
  return out;
}

RelativeEffect relative_effect(const DoseEffectModel& model, const PosteriorDraws& draws, const std::string& agent_a,
                               double dose_a, const std::string& agent_c, double dose_c) {
  const auto a = log_or_draws(model, draws, agent_a, dose_a);
  const auto c = log_or_draws(model, draws, agent_c, dose_c);
  RelativeEffect out;
  out.log_or.resize(a.size());
  std::vector<double> odds(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.log_or[i] = a[i] - c[i];
    odds[i] = std::exp(out.log_or[i]);
  }
  out.odds_ratio = summarize_sample(std::move(odds));
  return out;
}

RankTable rank_agents(const DoseEffectModel& model, const PosteriorDraws& draws, const PosteriorDraws& placebo,
                      const std::map<std::string, double>& common_doses, const EquivalenceTable* table,
                      std::size_t matched_draws) {
  require_layout(model, draws);
  const auto& data = model.dataset();
  if (common_doses.empty()) throw Error(ErrorCode::UnknownAgent, "no agents to rank");
  if (common_doses.size() > 1 && !data.harmonized && !table) {
    throw Error(ErrorCode::MissingEquivalence, "ranking several agents needs doses on one scale");
  }
  RankTable out;
  std::vector<CurveSource> sources;
  for (const auto& [agent, dose] : common_doses) {
    auto src = resolve(model, agent);
    if (src.is_class) throw Error(ErrorCode::UnknownAgent, agent + " is a class, not an agent");
    double analysis_dose = dose;
    if (!data.harmonized && table) {
      const auto factor = table->factor(agent);
      if (!factor) throw Error(ErrorCode::MissingEquivalence, agent);
      analysis_dose = dose / *factor;
    }
    out.agents.push_back(agent);
    out.dose.push_back(analysis_dose);
    sources.push_back(std::move(src));
  }
  const std::size_t K = sources.size();
  out.probability.assign(K, std::vector<double>(K, 0.0));
  out.mean_rank.assign(K, 0.0);

  const auto logits = placebo_logits(placebo, matched_draws);
  const auto rows = matched_rows(draws.total_rows(), matched_draws);
  std::vector<double> response(K);
  std::vector<std::size_t> order(K);
  for (std::size_t i = 0; i < matched_draws; ++i) {
    const auto state = draws.pooled_row(rows[i]);
    for (std::size_t k = 0; k < K; ++k) {
      response[k] = expit(logits[i] + agent_log_or(model, &sources[k], state, out.dose[k]));
    }
    for (std::size_t k = 0; k < K; ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return response[a] > response[b]; });
    for (std::size_t r = 0; r < K; ++r) {
      out.probability[order[r]][r] += 1.0;
      out.mean_rank[order[r]] += static_cast<double>(r + 1);
    }
  }
  const double n = static_cast<double>(matched_draws);
  for (std::size_t k = 0; k < K; ++k) {
    for (auto& p : out.probability[k]) p /= n;
    out.mean_rank[k] /= n;
  }
  return out;
}

std::string RankTable::to_csv() const {
  std::string out = "agent,rank,probability\n";
  for (std::size_t k = 0; k < agents.size(); ++k) {
    for (std::size_t r = 0; r < probability[k].size(); ++r) {
      out += agents[k] + "," + std::to_string(r + 1) + "," + io::format_double(probability[k][r]) + "\n";
    }
  }
  return out;
}

}  // namespace denma
