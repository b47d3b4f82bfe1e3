#pragma once

// Raw-pointer kernel entry points. The AVX2 translation unit includes only
// this header so no inline library code is compiled with AVX2 enabled.

#include <cstddef>
#include <cstdint>

namespace denma::kernels::detail {

void note_clamps(std::uint64_t count) noexcept;

namespace scalar {
void rcs_terms(const double* x, std::size_t n, const double* knots, std::size_t k, double* out);
void linear_combination(double offset, const double* coef, std::size_t p, const double* rows, std::size_t n,
                        double* out);
void expit(const double* eta, std::size_t n, double* out);
void binomial_kernel(const double* events, const double* trials, const double* eta, std::size_t n, double* out);
double binomial_kernel_sum(const double* events, const double* trials, const double* eta, std::size_t n);
}  // namespace scalar

namespace avx2 {
void rcs_terms(const double* x, std::size_t n, const double* knots, std::size_t k, double* out);
void linear_combination(double offset, const double* coef, std::size_t p, const double* rows, std::size_t n,
                        double* out);
void expit(const double* eta, std::size_t n, double* out);
void binomial_kernel(const double* events, const double* trials, const double* eta, std::size_t n, double* out);
double binomial_kernel_sum(const double* events, const double* trials, const double* eta, std::size_t n);
}  // namespace avx2

}  // namespace denma::kernels::detail
