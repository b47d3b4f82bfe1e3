#include "denma/spline.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "denma/error.hpp"
#include "denma/io.hpp"
#include "denma/kernels.hpp"

namespace denma {

double quantile(std::vector<double> values, double probability) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * probability;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

KnotSet place_knots(std::span<const double> doses, std::span<const double> percentiles, std::string group,
                    std::vector<std::string>* warnings) {
  if (percentiles.size() < 3) throw Error(ErrorCode::InvalidSpec, "need at least three knot percentiles");
  for (std::size_t i = 0; i < percentiles.size(); ++i) {
    if (!(percentiles[i] > 0.0 && percentiles[i] < 1.0) || (i > 0 && !(percentiles[i] > percentiles[i - 1]))) {
      throw Error(ErrorCode::InvalidSpec, "knot percentiles must be strictly increasing in (0, 1)");
    }
  }
  const std::set<double> distinct(doses.begin(), doses.end());
  if (distinct.size() < 2) {
    throw Error(ErrorCode::TooFewDistinctDoses,
                (group.empty() ? std::string("agent") : group) + " has " + std::to_string(distinct.size()) +
                    " distinct dose(s); knot placement needs at least 2");
  }
  const std::vector<double> sample(doses.begin(), doses.end());
  KnotSet out{std::move(group), {}};
  for (double p : percentiles) out.knots.push_back(quantile(sample, p));

  const double lo = *distinct.begin();
  const double hi = *distinct.rbegin();
  const double gap = 1e-3 * (hi - lo);
  bool nudged = false;
  for (std::size_t i = 1; i < out.knots.size(); ++i) {
    if (out.knots[i] <= out.knots[i - 1]) {
      out.knots[i] = out.knots[i - 1] + gap;
      nudged = true;
    }
  }
  // Pushing forward can leave the observed range; pull back from the top.
  if (out.knots.back() > hi) {
    out.knots.back() = hi;
    for (std::size_t i = out.knots.size() - 1; i-- > 0;) {
      if (out.knots[i] >= out.knots[i + 1]) out.knots[i] = out.knots[i + 1] - gap;
    }
  }
  if (nudged && warnings) {
    std::string msg = "knots for " + (out.group.empty() ? std::string("agent") : out.group) +
                      " collided and were nudged apart:";
    for (double k : out.knots) msg += " " + io::format_double(k);
    warnings->push_back(msg);
  }
  return out;
}

std::vector<double> rcs_basis(double x, const KnotSet& knots) {
  return rcs_basis_rows(std::span<const double>(&x, 1), knots);
}

std::vector<double> rcs_basis_rows(std::span<const double> x, const KnotSet& knots) {
  const std::size_t n = x.size();
  std::vector<double> rows(knots.dimension() * n);
  std::copy(x.begin(), x.end(), rows.begin());
  if (knots.knots.size() > 2) {
    kernels::rcs_terms(x, knots.knots, std::span<double>(rows).subspan(n));
  }
  return rows;
}

double dose_effect(double x, const KnotSet& knots, std::span<const double> coef) {
  const auto basis = rcs_basis(x, knots);
  double total = 0.0;
  for (std::size_t p = 0; p < basis.size() && p < coef.size(); ++p) total += coef[p] * basis[p];
  return total;
}

SplineDesign build_design(const Dataset& dataset, const std::map<std::string, KnotSet>& knots,
                          const std::map<std::string, std::string>& group_of) {
  SplineDesign design;
  std::size_t dim = 0;
  for (const auto& [key, k] : knots) {
    if (dim == 0) dim = k.dimension();
    if (k.dimension() != dim) throw Error(ErrorCode::InvalidSpec, "knot sets differ in size");
  }
  design.dimension = dim;
  std::size_t flat = 0;
  for (const auto& study : dataset.studies) {
    design.arm_offset.push_back(flat);
    flat += study.arms.size();
    for (const auto& arm : study.arms) {
      if (is_placebo(arm.agent)) {
        design.values.insert(design.values.end(), dim, 0.0);
        continue;
      }
      auto g = group_of.find(arm.agent);
      auto k = g == group_of.end() ? knots.end() : knots.find(g->second);
      if (k == knots.end()) throw Error(ErrorCode::MissingKnots, arm.agent);
      const auto basis = rcs_basis(arm.dose, k->second);
      design.values.insert(design.values.end(), basis.begin(), basis.end());
    }
  }
  return design;
}

std::string emit_knots(const std::map<std::string, KnotSet>& knots) {
  std::size_t width = 0;
  for (const auto& [key, k] : knots) width = std::max(width, k.knots.size());
  std::string out = "agent";
  for (std::size_t i = 0; i < width; ++i) out += ",t" + std::to_string(i + 1);
  out += '\n';
  for (const auto& [key, k] : knots) {
    out += key;
    for (double t : k.knots) out += "," + io::format_double(t);
    out += '\n';
  }
  return out;
}

std::map<std::string, KnotSet> parse_knots(std::string_view csv_text) {
  const auto table = io::parse_csv(csv_text);
  if (table.header.empty() || table.header[0] != "agent") throw Error(ErrorCode::MissingColumn, "agent");
  std::map<std::string, KnotSet> out;
  for (const auto& row : table.rows) {
    KnotSet k{row[0], {}};
    for (std::size_t i = 1; i < row.size(); ++i) {
      if (io::trim(row[i]).empty()) continue;
      const auto v = io::parse_double(io::trim(row[i]));
      if (!v) throw Error(ErrorCode::ParseFailure, "knot value '" + row[i] + "' for " + row[0]);
      k.knots.push_back(*v);
    }
    if (k.knots.size() < 3 || !std::is_sorted(k.knots.begin(), k.knots.end(), std::less_equal<>())) {
      throw Error(ErrorCode::InvalidSpec, "knots for " + row[0] + " must be at least 3 strictly increasing values");
    }
    out[row[0]] = std::move(k);
  }
  return out;
}

}  // namespace denma
