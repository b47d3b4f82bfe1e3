// AVX2 variants of the kernels in scalar.cpp. exp and log follow the Cephes
// double-precision rational approximations; results agree with the libm-based
// reference path to within a few ulp.

#include <immintrin.h>

#include "impl.hpp"

namespace denma::kernels::detail::avx2 {

namespace {

constexpr double kClamp = 35.0;

inline __m256d splat(double v) { return _mm256_set1_pd(v); }

inline __m256d positive_part(__m256d v) { return _mm256_max_pd(v, _mm256_setzero_pd()); }

inline __m256d cube(__m256d v) { return _mm256_mul_pd(_mm256_mul_pd(v, v), v); }

inline unsigned popcount4(int mask) { return static_cast<unsigned>(__builtin_popcount(mask & 0xF)); }

// Clamp to [-kClamp, kClamp], NaN passes through. Counts clamped lanes.
inline __m256d clamp_eta(__m256d eta, std::uint64_t& clamps) {
  const __m256d sign_mask = splat(-0.0);
  const __m256d magnitude = _mm256_andnot_pd(sign_mask, eta);
  clamps += popcount4(_mm256_movemask_pd(_mm256_cmp_pd(magnitude, splat(kClamp), _CMP_GT_OQ)));
  return _mm256_max_pd(splat(-kClamp), _mm256_min_pd(splat(kClamp), eta));
}

inline __m256d pow2n(__m256d n) {
  const __m128i n32 = _mm256_cvtpd_epi32(n);
  __m256i n64 = _mm256_cvtepi32_epi64(n32);
  n64 = _mm256_add_epi64(n64, _mm256_set1_epi64x(1023));
  return _mm256_castsi256_pd(_mm256_slli_epi64(n64, 52));
}

// exp(x) for x in roughly [-700, 700].
inline __m256d exp_pd(__m256d x) {
  const __m256d fx = _mm256_round_pd(_mm256_fmadd_pd(x, splat(1.4426950408889634073599), splat(0.5)),
                                     _MM_FROUND_TO_NEG_INF | _MM_FROUND_NO_EXC);
  x = _mm256_fnmadd_pd(fx, splat(6.93145751953125E-1), x);
  x = _mm256_fnmadd_pd(fx, splat(1.42860682030941723212E-6), x);
  const __m256d xx = _mm256_mul_pd(x, x);
  __m256d p = _mm256_fmadd_pd(splat(1.26177193074810590878E-4), xx, splat(3.02994407707441961300E-2));
  p = _mm256_fmadd_pd(p, xx, splat(9.99999999999999999910E-1));
  p = _mm256_mul_pd(p, x);
  __m256d q = _mm256_fmadd_pd(splat(3.00198505138664455042E-6), xx, splat(2.52448340349684104192E-3));
  q = _mm256_fmadd_pd(q, xx, splat(2.27265548208155028766E-1));
  q = _mm256_fmadd_pd(q, xx, splat(2.00000000000000000009E0));
  __m256d e = _mm256_div_pd(p, _mm256_sub_pd(q, p));
  e = _mm256_fmadd_pd(e, splat(2.0), splat(1.0));
  return _mm256_mul_pd(e, pow2n(fx));
}

// log(u) for finite u >= 1.
inline __m256d log_pd(__m256d u) {
  const __m256i bits = _mm256_castpd_si256(u);
  const __m256i exp_field = _mm256_srli_epi64(bits, 52);
  // Exponent field to double via the 2^52 trick (field is non-negative and < 2^11).
  const __m256d magic = splat(4503599627370496.0);
  __m256d e = _mm256_sub_pd(_mm256_castsi256_pd(_mm256_or_si256(exp_field, _mm256_castpd_si256(magic))), magic);
  e = _mm256_sub_pd(e, splat(1022.0));
  const __m256i mantissa = _mm256_and_si256(bits, _mm256_set1_epi64x(0x000FFFFFFFFFFFFFLL));
  const __m256d m = _mm256_castsi256_pd(_mm256_or_si256(mantissa, _mm256_set1_epi64x(0x3FE0000000000000LL)));

  const __m256d small = _mm256_cmp_pd(m, splat(0.70710678118654752440), _CMP_LT_OQ);
  e = _mm256_sub_pd(e, _mm256_and_pd(small, splat(1.0)));
  const __m256d x = _mm256_blendv_pd(_mm256_sub_pd(m, splat(1.0)),
                                     _mm256_sub_pd(_mm256_add_pd(m, m), splat(1.0)), small);
  const __m256d z = _mm256_mul_pd(x, x);

  __m256d p = splat(1.01875663804580931796E-4);
  p = _mm256_fmadd_pd(p, x, splat(4.97494994976747001425E-1));
  p = _mm256_fmadd_pd(p, x, splat(4.70579119878881725854E0));
  p = _mm256_fmadd_pd(p, x, splat(1.44989225341610930846E1));
  p = _mm256_fmadd_pd(p, x, splat(1.79368678507819816313E1));
  p = _mm256_fmadd_pd(p, x, splat(7.70838733755885391666E0));
  __m256d q = _mm256_add_pd(x, splat(1.12873587189167450590E1));
  q = _mm256_fmadd_pd(q, x, splat(4.52279145837532221105E1));
  q = _mm256_fmadd_pd(q, x, splat(8.29875266912776603211E1));
  q = _mm256_fmadd_pd(q, x, splat(7.11544750618167440876E1));
  q = _mm256_fmadd_pd(q, x, splat(2.31251620126765340583E1));

  __m256d y = _mm256_mul_pd(x, _mm256_div_pd(_mm256_mul_pd(z, p), q));
  y = _mm256_fnmadd_pd(e, splat(2.121944400546905827679e-4), y);
  y = _mm256_fnmadd_pd(z, splat(0.5), y);
  __m256d r = _mm256_add_pd(x, y);
  return _mm256_fmadd_pd(e, splat(0.693359375), r);
}

// log(1 + y) for y in [0, 1].
inline __m256d log1p_pd(__m256d y) {
  const __m256d u = _mm256_add_pd(splat(1.0), y);
  const __m256d correction = _mm256_div_pd(_mm256_sub_pd(_mm256_sub_pd(u, splat(1.0)), y), u);
  return _mm256_sub_pd(log_pd(u), correction);
}

inline __m256d softplus_pd(__m256d v) {
  const __m256d e = exp_pd(_mm256_sub_pd(_mm256_setzero_pd(), _mm256_andnot_pd(splat(-0.0), v)));
  return _mm256_add_pd(_mm256_max_pd(v, _mm256_setzero_pd()), log1p_pd(e));
}

inline __m256d expit_pd(__m256d v) {
  const __m256d e = exp_pd(_mm256_sub_pd(_mm256_setzero_pd(), _mm256_andnot_pd(splat(-0.0), v)));
  const __m256d denom = _mm256_add_pd(splat(1.0), e);
  const __m256d nonneg = _mm256_cmp_pd(v, _mm256_setzero_pd(), _CMP_GE_OQ);
  const __m256d num = _mm256_blendv_pd(e, splat(1.0), nonneg);
  return _mm256_div_pd(num, denom);
}

inline double horizontal_sum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d pair = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(pair, _mm_unpackhi_pd(pair, pair)));
}

// Loads up to four values, filling the rest with `fill`.
inline __m256d load_partial(const double* p, std::size_t count, double fill) {
  alignas(32) double tmp[4] = {fill, fill, fill, fill};
  for (std::size_t i = 0; i < count; ++i) tmp[i] = p[i];
  return _mm256_load_pd(tmp);
}

inline void store_partial(double* p, std::size_t count, __m256d v) {
  alignas(32) double tmp[4];
  _mm256_store_pd(tmp, v);
  for (std::size_t i = 0; i < count; ++i) p[i] = tmp[i];
}

}  // namespace

void rcs_terms(const double* x, std::size_t n, const double* knots, std::size_t k, double* out) {
  const double last = knots[k - 1];
  const double penultimate = knots[k - 2];
  const double span = last - penultimate;
  const __m256d vlast = splat(last);
  const __m256d vpen = splat(penultimate);
  for (std::size_t m = 0; m + 2 < k; ++m) {
    // Same operation order as the scalar path, without fused multiply-add,
    // so both produce identical bits.
    const __m256d a = splat((last - knots[m]) / span);
    const __m256d b = splat((penultimate - knots[m]) / span);
    const __m256d tm = splat(knots[m]);
    double* row = out + m * n;
    std::size_t j = 0;
    auto eval = [&](__m256d xv) {
      const __m256d c1 = cube(positive_part(_mm256_sub_pd(xv, tm)));
      const __m256d c2 = cube(positive_part(_mm256_sub_pd(xv, vpen)));
      const __m256d c3 = cube(positive_part(_mm256_sub_pd(xv, vlast)));
      return _mm256_add_pd(_mm256_sub_pd(c1, _mm256_mul_pd(a, c2)), _mm256_mul_pd(b, c3));
    };
    for (; j + 4 <= n; j += 4) _mm256_storeu_pd(row + j, eval(_mm256_loadu_pd(x + j)));
    if (j < n) store_partial(row + j, n - j, eval(load_partial(x + j, n - j, 0.0)));
  }
}

void linear_combination(double offset, const double* coef, std::size_t p, const double* rows, std::size_t n,
                        double* out) {
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    __m256d acc = splat(offset);
    for (std::size_t q = 0; q < p; ++q) {
      acc = _mm256_add_pd(acc, _mm256_mul_pd(splat(coef[q]), _mm256_loadu_pd(rows + q * n + j)));
    }
    _mm256_storeu_pd(out + j, acc);
  }
  for (; j < n; ++j) {
    double acc = offset;
    for (std::size_t q = 0; q < p; ++q) acc = acc + coef[q] * rows[q * n + j];
    out[j] = acc;
  }
}

void expit(const double* eta, std::size_t n, double* out) {
  std::uint64_t clamps = 0;
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) _mm256_storeu_pd(out + j, expit_pd(clamp_eta(_mm256_loadu_pd(eta + j), clamps)));
  if (j < n) store_partial(out + j, n - j, expit_pd(clamp_eta(load_partial(eta + j, n - j, 0.0), clamps)));
  note_clamps(clamps);
}

void binomial_kernel(const double* events, const double* trials, const double* eta, std::size_t n, double* out) {
  std::uint64_t clamps = 0;
  auto eval = [&](__m256d r, __m256d t, __m256d e) {
    const __m256d v = clamp_eta(e, clamps);
    return _mm256_sub_pd(_mm256_mul_pd(r, v), _mm256_mul_pd(t, softplus_pd(v)));
  };
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    _mm256_storeu_pd(out + j, eval(_mm256_loadu_pd(events + j), _mm256_loadu_pd(trials + j), _mm256_loadu_pd(eta + j)));
  }
  if (j < n) {
    const std::size_t rest = n - j;
    store_partial(out + j, rest,
                  eval(load_partial(events + j, rest, 0.0), load_partial(trials + j, rest, 0.0),
                       load_partial(eta + j, rest, 0.0)));
  }
  note_clamps(clamps);
}

double binomial_kernel_sum(const double* events, const double* trials, const double* eta, std::size_t n) {
  std::uint64_t clamps = 0;
  __m256d acc = _mm256_setzero_pd();
  auto eval = [&](__m256d r, __m256d t, __m256d e) {
    const __m256d v = clamp_eta(e, clamps);
    return _mm256_sub_pd(_mm256_mul_pd(r, v), _mm256_mul_pd(t, softplus_pd(v)));
  };
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    acc = _mm256_add_pd(acc, eval(_mm256_loadu_pd(events + j), _mm256_loadu_pd(trials + j), _mm256_loadu_pd(eta + j)));
  }
  if (j < n) {
    // Padding lanes have zero events and zero trials, so they contribute 0.
    const std::size_t rest = n - j;
    acc = _mm256_add_pd(acc, eval(load_partial(events + j, rest, 0.0), load_partial(trials + j, rest, 0.0),
                                  load_partial(eta + j, rest, 0.0)));
  }
  note_clamps(clamps);
  return horizontal_sum(acc);
}

}  // namespace denma::kernels::detail::avx2
