#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "denma/dataset.hpp"
#include "denma/sampler.hpp"
#include "denma/spline.hpp"

namespace denma {

struct Scenario {
  std::uint64_t seed = 1;
  std::size_t studies = 40;
  std::vector<std::string> agents;
  std::map<std::string, std::vector<double>> doses;  // native doses available per agent
  std::size_t min_active_arms = 2;
  std::size_t max_active_arms = 3;
  double placebo_fraction = 1.0;  // share of studies with a placebo arm
  long long sample_size = 300;
  double tau = 0.2;
  double placebo_logit_mean = 0.0;
  double placebo_logit_sd = 0.3;
  std::vector<double> knot_percentiles = kDefaultPercentiles;
  // True curve coefficients, keyed by agent or (with class_shapes) by class.
  std::map<std::string, std::vector<double>> shape;
  std::map<std::string, std::string> classes;  // agent -> class
  std::map<std::string, double> factors;       // agent -> equivalence factor
  bool class_shapes = false;                   // one curve per class on the harmonized scale
  std::optional<std::string> covariate;        // study-level column, Z ~ U(low, high)
  double covariate_low = 0.0;
  double covariate_high = 1.0;
  double covariate_center = 0.0;
  double covariate_effect = 0.0;  // g, linear in dose

  void validate() const;
};

// 40 placebo-controlled studies of drugA/B/C at 10, 20, 40 with n = 300 per arm.
Scenario default_scenario();
Scenario parse_scenario(std::string_view text);
std::string emit_scenario(const Scenario& scenario);

struct Truth {
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, double>> parameters;  // named as in the fitted layout
  std::map<std::string, KnotSet> knots;

  std::optional<double> find(std::string_view name) const;
};

std::string emit_truth(const Truth& truth);
Truth parse_truth(std::string_view text);

struct Simulation {
  Dataset dataset;
  std::optional<EquivalenceTable> equivalence;  // present when the scenario declares classes or factors
  Truth truth;
  std::vector<std::vector<double>> probabilities;  // true event probability per study, arm
};

Simulation generate(const Scenario& scenario);

struct RecoveryItem {
  std::string name;
  double truth = 0.0;
  double median = 0.0;
  double bias = 0.0;
  double lo95 = 0.0;
  double hi95 = 0.0;
  bool covered = false;

  double width() const { return hi95 - lo95; }
};

// Scores the named truths (all of them when `names` is empty). Throws
// LayoutMismatch when a scored truth is not a parameter of the draws.
std::vector<RecoveryItem> score_recovery(const Truth& truth, const PosteriorDraws& draws,
                                         const std::vector<std::string>& names = {});

std::string emit_recovery(const std::vector<RecoveryItem>& items);

}  // namespace denma
