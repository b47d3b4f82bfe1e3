#pragma once

#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "denma/dataset.hpp"
#include "denma/model_spec.hpp"
#include "denma/sampler.hpp"
#include "denma/spline.hpp"

namespace denma {

inline constexpr std::size_t kAbsent = std::numeric_limits<std::size_t>::max();

// Index map of every free scalar. Ordering: u, delta, beta, B, b, tau,
// sigma_beta, sigma_B, gamma, Gamma, g, tau_gamma, tau_Gamma; within each
// family studies, arms and agents follow dataset order.
struct ParameterLayout {
  std::vector<std::string> names;
  std::vector<std::size_t> u;                   // per study
  std::vector<std::vector<std::size_t>> delta;  // per study, per arm (kAbsent for reference arms)
  std::vector<std::vector<std::size_t>> beta;   // per study: slot * P + p
  std::vector<std::size_t> B;                   // agent * P + p, kAbsent when tied to b
  std::vector<std::size_t> b;                   // p, or class * P + p
  std::size_t tau = kAbsent;
  std::vector<std::size_t> sigma_beta;  // one shared, or one per p
  std::vector<std::size_t> sigma_B;     // per p
  std::vector<std::vector<std::size_t>> gamma;  // per study: slot * M + m
  std::vector<std::size_t> Gamma;               // agent * M + m
  std::vector<std::size_t> g;                   // m
  std::size_t tau_gamma = kAbsent;
  std::size_t tau_Gamma = kAbsent;

  std::size_t size() const { return names.size(); }
  std::optional<std::size_t> find(std::string_view name) const;
};

// Raw data -> analysis data for a spec: attaches the class map, harmonizes
// doses where the assumptions need one scale, derives var_logor when the
// covariate asks for it, and enforces the connectivity rule.
Dataset prepare_dataset(const Dataset& raw, const ModelSpec& spec, const EquivalenceTable* table,
                        std::vector<std::string>* warnings = nullptr);

// Reference arm of every study in analysis order.
std::vector<std::size_t> reference_arms(const Dataset& dataset);

ParameterLayout parameter_layout(const ModelSpec& spec, const Dataset& dataset);

class DoseEffectModel final : public Target {
 public:
  // `data` must come from prepare_dataset for the same spec. Knots are placed
  // from the data unless supplied (keyed by knot group).
  DoseEffectModel(Dataset data, ModelSpec spec, std::optional<std::map<std::string, KnotSet>> knots = std::nullopt,
                  std::vector<std::string>* warnings = nullptr);

  const Dataset& dataset() const { return data_; }
  const ModelSpec& spec() const { return spec_; }
  const ParameterLayout& layout() const { return layout_; }
  const std::map<std::string, KnotSet>& knots() const { return knots_; }
  const SplineDesign& design() const { return design_; }
  std::size_t shape_dimension() const { return P_; }
  std::size_t interaction_dimension() const { return M_; }
  std::size_t study_count() const { return studies_.size(); }
  std::size_t arm_count() const { return arms_.size(); }
  const std::vector<double>& covariate() const { return z_; }
  std::size_t reference_arm(std::size_t study) const { return studies_[study].ref - studies_[study].first; }

  // Target
  std::size_t dimension() const override { return layout_.size(); }
  std::vector<std::string> parameter_names() const override { return layout_.names; }
  const std::vector<BlockSpec>& blocks() const override { return blocks_; }
  std::size_t term_count() const override { return studies_.size() + 1; }
  double term_log_density(std::span<const double> state, std::size_t term) const override;
  double couple(std::size_t block, std::span<const double> before, std::span<double> after) const override;
  std::vector<double> initial_state(Rng& rng, std::size_t chain) const override;

  // Logit-scale predictor of one arm (arm index within the study).
  double linear_predictor(std::span<const double> state, std::size_t study, std::size_t arm) const;
  // All arms, flattened in study/arm order.
  void linear_predictors(std::span<const double> state, std::span<double> out) const;
  // Mean of the relative effect of a non-reference arm: F(x; beta_k) - F(x_ref; beta_R).
  double delta_mean(std::span<const double> state, std::size_t study, std::size_t arm) const;

  // Full binomial log density, including log C(n, r). -inf for non-finite predictors.
  double log_likelihood(std::span<const double> state) const;
  double log_prior(std::span<const double> state) const;
  double log_posterior(std::span<const double> state) const;

  // Observed counts, flattened like linear_predictors.
  std::span<const double> events() const { return events_; }
  std::span<const double> trials() const { return trials_; }
  std::span<const double> log_binomial_coefficients() const { return lchoose_; }

  // Population-level curve parameters.
  std::vector<double> agent_shape(std::span<const double> state, std::size_t agent) const;
  std::vector<double> class_shape(std::span<const double> state, std::size_t cls) const;
  std::vector<double> agent_interaction(std::span<const double> state, std::size_t agent) const;
  const KnotSet& agent_knots(std::size_t agent) const;
  const KnotSet& class_knots(std::size_t cls) const;
  double agent_max_dose(std::size_t agent) const { return agent_max_dose_[agent]; }
  double class_max_dose(std::size_t cls) const;
  // Interaction basis at dose x for an agent: (x) for the linear form, the agent's RCS basis otherwise.
  std::vector<double> interaction_basis(double x, std::size_t agent) const;

 private:
  struct ArmInfo {
    std::size_t study = 0;
    std::size_t agent = kAbsent;  // kAbsent for placebo
    std::size_t slot = kAbsent;   // position of the agent among the study's active agents
    bool reference = false;
  };
  struct StudyInfo {
    std::size_t first = 0;  // flat index of first arm
    std::size_t count = 0;
    std::size_t ref = 0;  // flat index of reference arm
    std::vector<std::size_t> agents;  // slot -> agent
  };
  enum class Coupling { None, Shift, Scale };

  void build_structure();
  void build_blocks();
  double agent_coef(std::span<const double> s, std::size_t agent, std::size_t p) const;
  double shape_coef(std::span<const double> s, std::size_t study, std::size_t slot, std::size_t p) const;
  double agent_icoef(std::span<const double> s, std::size_t agent, std::size_t m) const;
  double interaction_coef(std::span<const double> s, std::size_t study, std::size_t slot, std::size_t m) const;
  double arm_effect(std::span<const double> s, std::size_t flat) const;       // F(x) of the arm's own agent
  double arm_interaction(std::span<const double> s, std::size_t flat) const;  // G(x)
  double flat_delta_mean(std::span<const double> s, std::size_t flat) const;
  double flat_predictor(std::span<const double> s, std::size_t flat) const;
  double study_likelihood(std::span<const double> s, std::size_t study) const;
  double study_prior(std::span<const double> s, std::size_t study) const;
  double global_prior(std::span<const double> s) const;

  Dataset data_;
  ModelSpec spec_;
  std::size_t P_ = 0;
  std::size_t M_ = 0;
  std::map<std::string, KnotSet> knots_;
  std::map<std::string, std::string> group_of_;
  SplineDesign design_;
  std::vector<double> interaction_design_;  // arm * M + m
  ParameterLayout layout_;
  std::vector<ArmInfo> arms_;
  std::vector<StudyInfo> studies_;
  std::vector<double> events_, trials_, lchoose_;
  std::vector<double> z_;  // centred covariate per study (zeros without a covariate)
  std::vector<std::vector<std::size_t>> studies_of_agent_;
  std::vector<double> agent_max_dose_;
  std::vector<double> basis_scale_;  // agent * P + p, largest |basis| among the agent's arms
  std::vector<BlockSpec> blocks_;
  std::vector<Coupling> coupling_;
  std::vector<std::vector<std::size_t>> coupled_arms_;  // flat arms whose delta is rewritten
};

}  // namespace denma
