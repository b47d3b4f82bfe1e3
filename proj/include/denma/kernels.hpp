#pragma once

// Data-parallel inner loops. Every kernel has a scalar reference
// implementation; an AVX2 variant is selected at first use when the CPU
// supports it. Set DENMA_KERNELS=scalar to force the reference path.

#include <cstdint>
#include <span>

namespace denma::kernels {

enum class Isa { Scalar, Avx2 };

const char* isa_name(Isa isa) noexcept;
bool isa_supported(Isa isa) noexcept;
Isa active_isa() noexcept;
// Test hook; throws std::invalid_argument when the CPU lacks the extension.
void force_isa(Isa isa);

// Predictors are clamped to this magnitude before expit/softplus.
inline constexpr double kLogitClamp = 35.0;

// Number of predictor values clamped since process start.
std::uint64_t clamp_events() noexcept;

// Cubic truncated-power terms of a restricted cubic spline with knots
// t_1 < ... < t_K: row m (0-based, m < K-2) of `out` holds f_{m+2}(x) for every x.
// out.size() must be (K-2) * x.size().
void rcs_terms(std::span<const double> x, std::span<const double> knots, std::span<double> out);

// out[j] = offset + sum_p coef[p] * rows[p * n + j], n = out.size().
void linear_combination(double offset, std::span<const double> coef, std::span<const double> rows,
                        std::span<double> out);

void expit(std::span<const double> eta, std::span<double> out);

// Binomial log density without the log binomial coefficient:
// events * eta - n * log(1 + exp(eta)).
void binomial_kernel(std::span<const double> events, std::span<const double> n, std::span<const double> eta,
                     std::span<double> out);
double binomial_kernel_sum(std::span<const double> events, std::span<const double> n,
                           std::span<const double> eta);

// Direct access to one implementation, used by equivalence tests.
struct Table {
  void (*rcs_terms)(const double* x, std::size_t n, const double* knots, std::size_t k, double* out);
  void (*linear_combination)(double offset, const double* coef, std::size_t p, const double* rows, std::size_t n,
                             double* out);
  void (*expit)(const double* eta, std::size_t n, double* out);
  void (*binomial_kernel)(const double* events, const double* trials, const double* eta, std::size_t n,
                          double* out);
  double (*binomial_kernel_sum)(const double* events, const double* trials, const double* eta, std::size_t n);
};

const Table& table(Isa isa);

}  // namespace denma::kernels
