#pragma once

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "denma/sampler.hpp"

namespace denma {

class DoseEffectModel;

// A convergence statistic; `degenerate` is set (and value is NaN) when the
// draws have zero variance.
struct Statistic {
  double value = 0.0;
  bool degenerate = false;
};

// Split R-hat. Needs at least 2 chains of at least 4 draws.
Statistic rhat(const std::vector<std::vector<double>>& chains);
Statistic rhat(const PosteriorDraws& draws, std::string_view param);

// Multi-chain effective sample size with Geyer's initial monotone sequence,
// capped at the total number of draws. One chain of at least 4 draws suffices.
Statistic ess(const std::vector<std::vector<double>>& chains);
Statistic ess(const PosteriorDraws& draws, std::string_view param);

struct ParameterSummary {
  std::string name;
  double mean = 0.0, sd = 0.0, median = 0.0, lo95 = 0.0, hi95 = 0.0;
  Statistic rhat, ess;
};

std::vector<ParameterSummary> summarize(const PosteriorDraws& draws);

// Arm-level data a fit is scored against.
struct ArmData {
  std::span<const double> events;
  std::span<const double> trials;
  std::span<const double> log_binomial_coefficients;
};

// state -> logit predictor of every arm.
using PredictorFn = std::function<void(std::span<const double>, std::span<double>)>;

struct Observation {
  double dbar = 0.0;      // posterior mean deviance
  double dplug = 0.0;     // deviance at the posterior-mean predictor
  double leverage = 0.0;  // dbar - dplug
  double dres = 0.0;      // posterior mean residual deviance
};

struct FitSummary {
  double dic = 0.0;
  double pd = 0.0;
  double dbar = 0.0;
  double dres = 0.0;
  std::vector<Observation> observations;

  std::string to_text() const;
  // study,arm,agent,dose,dbar,dplug,leverage,dres; labels supplied per observation.
  std::string observation_table(const std::vector<std::string>& labels) const;
};

// Deviance of one binomial observation at logit predictor eta, full density.
double binomial_deviance(double events, double trials, double log_choose, double eta);
// Saturated residual deviance at probability p, with 0 log 0 = 0.
double residual_deviance(double events, double trials, double p);

FitSummary dic(const PosteriorDraws& draws, const ArmData& data, std::size_t dimension, const PredictorFn& predictors);
// Throws ModelDatasetMismatch when the draws do not belong to the model's layout.
FitSummary dic(const PosteriorDraws& draws, const DoseEffectModel& model);

// "study,arm,agent,dose" label header fields for a model's arms.
std::vector<std::string> observation_labels(const DoseEffectModel& model);

}  // namespace denma
