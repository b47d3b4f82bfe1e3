#include <algorithm>
#include <cmath>

#include "denma/kernels.hpp"
#include "impl.hpp"

namespace denma::kernels::detail::scalar {

namespace {

inline double positive_part(double v) { return v > 0.0 ? v : 0.0; }

inline double cube(double v) { return v * v * v; }

inline double clamp_eta(double eta, std::uint64_t& clamps) {
  if (eta > kLogitClamp) {
    ++clamps;
    return kLogitClamp;
  }
  if (eta < -kLogitClamp) {
    ++clamps;
    return -kLogitClamp;
  }
  return eta;
}

inline double softplus(double eta) { return std::max(eta, 0.0) + std::log1p(std::exp(-std::fabs(eta))); }

}  // namespace

void rcs_terms(const double* x, std::size_t n, const double* knots, std::size_t k, double* out) {
  const double last = knots[k - 1];
  const double penultimate = knots[k - 2];
  const double span = last - penultimate;
  for (std::size_t m = 0; m + 2 < k; ++m) {
    const double a = (last - knots[m]) / span;
    const double b = (penultimate - knots[m]) / span;
    double* row = out + m * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double c1 = cube(positive_part(x[j] - knots[m]));
      const double c2 = cube(positive_part(x[j] - penultimate));
      const double c3 = cube(positive_part(x[j] - last));
      row[j] = (c1 - a * c2) + b * c3;
    }
  }
}

void linear_combination(double offset, const double* coef, std::size_t p, const double* rows, std::size_t n,
                        double* out) {
  for (std::size_t j = 0; j < n; ++j) out[j] = offset;
  for (std::size_t q = 0; q < p; ++q) {
    const double c = coef[q];
    const double* row = rows + q * n;
    for (std::size_t j = 0; j < n; ++j) out[j] = out[j] + c * row[j];
  }
}

void expit(const double* eta, std::size_t n, double* out) {
  std::uint64_t clamps = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const double v = clamp_eta(eta[j], clamps);
    const double e = std::exp(-std::fabs(v));
    out[j] = v >= 0.0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
  }
  note_clamps(clamps);
}

void binomial_kernel(const double* events, const double* trials, const double* eta, std::size_t n, double* out) {
  std::uint64_t clamps = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const double v = clamp_eta(eta[j], clamps);
    out[j] = events[j] * v - trials[j] * softplus(v);
  }
  note_clamps(clamps);
}

double binomial_kernel_sum(const double* events, const double* trials, const double* eta, std::size_t n) {
  std::uint64_t clamps = 0;
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double v = clamp_eta(eta[j], clamps);
    total += events[j] * v - trials[j] * softplus(v);
  }
  note_clamps(clamps);
  return total;
}

}  // namespace denma::kernels::detail::scalar
