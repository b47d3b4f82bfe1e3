#include <atomic>
#include <cstdlib>
#include <cstring>
#include <stdexcept>

#include "denma/kernels.hpp"
#include "impl.hpp"

namespace denma::kernels {

namespace {

std::atomic<std::uint64_t> g_clamps{0};

constexpr Table kScalarTable{
    detail::scalar::rcs_terms,
    detail::scalar::linear_combination,
    detail::scalar::expit,
    detail::scalar::binomial_kernel,
    detail::scalar::binomial_kernel_sum,
};

#if defined(DENMA_HAVE_AVX2)
constexpr Table kAvx2Table{
    detail::avx2::rcs_terms,
    detail::avx2::linear_combination,
    detail::avx2::expit,
    detail::avx2::binomial_kernel,
    detail::avx2::binomial_kernel_sum,
};
#endif

Isa detect() noexcept {
  const char* env = std::getenv("DENMA_KERNELS");
  if (env && std::strcmp(env, "scalar") == 0) return Isa::Scalar;
  return isa_supported(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

const Table& active() { return table(current().load(std::memory_order_relaxed)); }

}  // namespace

namespace detail {
void note_clamps(std::uint64_t count) noexcept {
  if (count) g_clamps.fetch_add(count, std::memory_order_relaxed);
}
}  // namespace detail

const char* isa_name(Isa isa) noexcept { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

bool isa_supported(Isa isa) noexcept {
  if (isa == Isa::Scalar) return true;
#if defined(DENMA_HAVE_AVX2)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa active_isa() noexcept { return current().load(std::memory_order_relaxed); }

void force_isa(Isa isa) {
  if (!isa_supported(isa)) throw std::invalid_argument(std::string("kernel ISA not supported: ") + isa_name(isa));
  current().store(isa, std::memory_order_relaxed);
}

std::uint64_t clamp_events() noexcept { return g_clamps.load(std::memory_order_relaxed); }

const Table& table(Isa isa) {
#if defined(DENMA_HAVE_AVX2)
  if (isa == Isa::Avx2) {
    if (!isa_supported(Isa::Avx2)) throw std::invalid_argument("avx2 kernels not supported on this CPU");
    return kAvx2Table;
  }
#else
  if (isa == Isa::Avx2) throw std::invalid_argument("avx2 kernels not built");
#endif
  return kScalarTable;
}

void rcs_terms(std::span<const double> x, std::span<const double> knots, std::span<double> out) {
  if (knots.size() < 3 || out.size() != (knots.size() - 2) * x.size()) {
    throw std::invalid_argument("rcs_terms: bad sizes");
  }
  active().rcs_terms(x.data(), x.size(), knots.data(), knots.size(), out.data());
}

void linear_combination(double offset, std::span<const double> coef, std::span<const double> rows,
                        std::span<double> out) {
  if (rows.size() != coef.size() * out.size()) throw std::invalid_argument("linear_combination: bad sizes");
  active().linear_combination(offset, coef.data(), coef.size(), rows.data(), out.size(), out.data());
}

void expit(std::span<const double> eta, std::span<double> out) {
  if (eta.size() != out.size()) throw std::invalid_argument("expit: bad sizes");
  active().expit(eta.data(), eta.size(), out.data());
}

void binomial_kernel(std::span<const double> events, std::span<const double> n, std::span<const double> eta,
                     std::span<double> out) {
  if (events.size() != eta.size() || n.size() != eta.size() || out.size() != eta.size()) {
    throw std::invalid_argument("binomial_kernel: bad sizes");
  }
  active().binomial_kernel(events.data(), n.data(), eta.data(), eta.size(), out.data());
}

double binomial_kernel_sum(std::span<const double> events, std::span<const double> n,
                           std::span<const double> eta) {
  if (events.size() != eta.size() || n.size() != eta.size()) {
    throw std::invalid_argument("binomial_kernel_sum: bad sizes");
  }
  return active().binomial_kernel_sum(events.data(), n.data(), eta.data(), eta.size());
}

}  // namespace denma::kernels
