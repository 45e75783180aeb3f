#include "fadingid/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace fadingid::kernels {

namespace {

bool cpu_has_avx2() noexcept {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa detect() {
  const char* env = std::getenv("FADINGID_ISA");
  if (env != nullptr) {
    const std::string want(env);
    if (want == "scalar") return Isa::scalar;
    if (want == "avx2" && isa_supported(Isa::avx2)) return Isa::avx2;
  }
  return isa_supported(Isa::avx2) ? Isa::avx2 : Isa::scalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

}  // namespace

bool isa_supported(Isa isa) noexcept {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
      return avx2::compiled() && cpu_has_avx2();
  }
  return false;
}

Isa active_isa() noexcept { return current().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  if (!isa_supported(isa)) {
    throw std::invalid_argument("kernel ISA not supported on this CPU: " +
                                std::string(isa_name(isa)));
  }
  current().store(isa, std::memory_order_relaxed);
}

std::string_view isa_name(Isa isa) noexcept {
  return isa == Isa::avx2 ? "avx2" : "scalar";
}

#define FADINGID_DISPATCH(fn, ...) \
  (active_isa() == Isa::avx2 ? avx2::fn(__VA_ARGS__) : scalar::fn(__VA_ARGS__))

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate) {
  FADINGID_DISPATCH(gemm_nn, m, n, k, a.data(), b.data(), c.data(), accumulate);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate) {
  FADINGID_DISPATCH(gemm_nt, m, n, k, a.data(), b.data(), c.data(), accumulate);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate) {
  FADINGID_DISPATCH(gemm_tn, m, n, k, a.data(), b.data(), c.data(), accumulate);
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  FADINGID_DISPATCH(axpy, x.size(), alpha, x.data(), y.data());
}

double dot(std::span<const double> x, std::span<const double> y) {
  return FADINGID_DISPATCH(dot, x.size(), x.data(), y.data());
}

void tanh_forward(std::span<const double> x, std::span<double> out) {
  FADINGID_DISPATCH(tanh_forward, x.size(), x.data(), out.data());
}

void tanh_backward(std::span<const double> y, std::span<const double> gy, std::span<double> gx) {
  FADINGID_DISPATCH(tanh_backward, y.size(), y.data(), gy.data(), gx.data());
}

#undef FADINGID_DISPATCH

}  // namespace fadingid::kernels
