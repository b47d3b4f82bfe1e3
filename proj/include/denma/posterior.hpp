#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "denma/dataset.hpp"
#include "denma/model.hpp"
#include "denma/sampler.hpp"

namespace denma {

inline constexpr std::size_t kMatchedDraws = 4000;

// Standalone random-effects model for placebo arms:
// r_i ~ Bin(n_i, expit(theta_i)), theta_i ~ N(logit P0, sigma0^2).
class PlaceboModel final : public Target {
 public:
  PlaceboModel(const Dataset& dataset, const PriorSet& priors = {});

  std::size_t arm_count() const { return events_.size(); }
  std::size_t mu_index() const { return 0; }
  std::size_t sigma_index() const { return 1; }

  std::size_t dimension() const override { return names_.size(); }
  std::vector<std::string> parameter_names() const override { return names_; }
  const std::vector<BlockSpec>& blocks() const override { return blocks_; }
  std::size_t term_count() const override { return events_.size() + 1; }
  double term_log_density(std::span<const double> state, std::size_t term) const override;
  double couple(std::size_t block, std::span<const double> before, std::span<double> after) const override;
  std::vector<double> initial_state(Rng& rng, std::size_t chain) const override;

 private:
  PriorSet priors_;
  std::vector<std::string> names_;
  std::vector<double> events_, trials_, lchoose_;
  std::vector<BlockSpec> blocks_;
};

// Throws TooFewPlaceboArms with fewer than two placebo arms.
PosteriorDraws fit_placebo(const Dataset& dataset, const SamplerConfig& config, const PriorSet& priors = {});

// Evenly spaced pooled-row indices, floor(i * L / n) for i < n.
std::vector<std::size_t> matched_rows(std::size_t available, std::size_t n);

// logit P0 for each matched placebo draw.
std::vector<double> placebo_logits(const PosteriorDraws& placebo, std::size_t n = kMatchedDraws);

struct Interval {
  double median = 0.0, lo95 = 0.0, hi95 = 0.0;
};
Interval summarize_sample(std::vector<double> values);

// Summary of P0 over the matched placebo draws.
Interval placebo_summary(const PosteriorDraws& placebo, std::size_t n = kMatchedDraws);

enum class CurveScale { Absolute, LogOddsRatio };

struct CurveEstimate {
  std::string group;  // agent or class id
  bool is_class = false;
  CurveScale scale = CurveScale::Absolute;
  std::vector<double> dose;
  std::vector<Interval> values;
  std::optional<double> covariate;
};

struct CurveOptions {
  std::optional<std::vector<double>> grid;  // analysis-scale doses; default 100 points on [0, max observed]
  std::optional<double> covariate;          // raw covariate value; the spec centre is subtracted
  bool allow_extrapolation = false;
  std::size_t matched_draws = kMatchedDraws;
};

// Absolute response probability curve for an agent (or a class under class
// assumptions), pairing DE-NMA and placebo draws by index.
CurveEstimate absolute_curve(const DoseEffectModel& model, const PosteriorDraws& draws, const PosteriorDraws& placebo,
                             const std::string& group, const CurveOptions& options = {});
// Log odds ratio versus placebo over every pooled draw.
CurveEstimate log_or_curve(const DoseEffectModel& model, const PosteriorDraws& draws, const std::string& group,
                           const CurveOptions& options = {});

std::string emit_curve(const CurveEstimate& curve);

// Population-level log odds ratio of (agent, dose) vs placebo for every pooled
// draw. Placebo gives zeros.
std::vector<double> log_or_draws(const DoseEffectModel& model, const PosteriorDraws& draws, const std::string& agent,
                                 double dose);

struct RelativeEffect {
  std::vector<double> log_or;  // per pooled draw
  Interval odds_ratio;
};

RelativeEffect relative_effect(const DoseEffectModel& model, const PosteriorDraws& draws, const std::string& agent_a,
                               double dose_a, const std::string& agent_c, double dose_c);

struct RankTable {
  std::vector<std::string> agents;
  std::vector<double> dose;                       // agent dose on the analysis scale
  std::vector<std::vector<double>> probability;   // [agent][rank - 1]
  std::vector<double> mean_rank;

  std::string to_csv() const;  // agent,rank,probability
};

// Ranks agents by absolute response at the given doses; rank 1 is the highest
// response. Doses are on the common (equivalence) scale, converted with the
// table when the model data are not harmonized. Throws MissingEquivalence for
// several agents without a common scale.
RankTable rank_agents(const DoseEffectModel& model, const PosteriorDraws& draws, const PosteriorDraws& placebo,
                      const std::map<std::string, double>& common_doses, const EquivalenceTable* table,
                      std::size_t matched_draws = kMatchedDraws);

}  // namespace denma
