#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "denma/dataset.hpp"

namespace denma {

struct KnotSet {
  std::string group;          // agent id, class id, or "all" for a shared curve
  std::vector<double> knots;  // strictly increasing, at least 3

  std::size_t dimension() const { return knots.size() - 1; }
  bool operator==(const KnotSet&) const = default;
};

inline const std::vector<double> kDefaultPercentiles = {0.25, 0.50, 0.75};

// Linear-interpolation ("type 7") quantile of an unsorted sample.
double quantile(std::vector<double> values, double probability);

// Knots at the given percentiles of the dose multiset (duplicates kept).
// Colliding knots are pushed apart by 1e-3 of the dose range; each nudge
// appends a message to `warnings` when provided.
KnotSet place_knots(std::span<const double> doses, std::span<const double> percentiles, std::string group = {},
                    std::vector<std::string>* warnings = nullptr);

// (x, f_2(x), ..., f_{K-1}(x)) for x >= 0.
std::vector<double> rcs_basis(double x, const KnotSet& knots);

// Basis rows for a batch of doses: row 0 is x itself, row m is f_{m+1}(x).
// Result is dimension() * x.size() values, row-major.
std::vector<double> rcs_basis_rows(std::span<const double> x, const KnotSet& knots);

// F(x) = sum_p coef[p] * basis[p].
double dose_effect(double x, const KnotSet& knots, std::span<const double> coef);

// Per-arm basis values, flattened in study/arm order.
struct SplineDesign {
  std::size_t dimension = 0;
  std::vector<std::size_t> arm_offset;  // first flat arm index of each study
  std::vector<double> values;           // arm-major: values[arm * dimension + p]

  std::span<const double> arm(std::size_t flat_arm) const {
    return {values.data() + flat_arm * dimension, dimension};
  }
};

// Placebo arms get the zero vector; active arms use the knot set of their
// group. `group_of` maps agent id -> knot group key.
SplineDesign build_design(const Dataset& dataset, const std::map<std::string, KnotSet>& knots,
                          const std::map<std::string, std::string>& group_of);

std::string emit_knots(const std::map<std::string, KnotSet>& knots);
std::map<std::string, KnotSet> parse_knots(std::string_view csv_text);

}  // namespace denma
