#pragma once

// Dense inner loops used by the tensor engine.
//
// Every kernel has a portable scalar reference and, where the target allows
// it, an AVX2+FMA variant. The active variant is chosen once at startup from
// CPUID and may be overridden with FADINGID_ISA={scalar,avx2} or set_isa().
// The scalar variants are compiled without FP contraction and are the
// ground truth the vector variants are tested against.

#include <cstddef>
#include <span>
#include <string_view>

namespace fadingid::kernels {

enum class Isa { scalar, avx2 };

/// ISA used by the dispatched entry points below.
Isa active_isa() noexcept;

/// Forces a variant. Throws std::invalid_argument if the CPU lacks it.
void set_isa(Isa isa);

bool isa_supported(Isa isa) noexcept;

std::string_view isa_name(Isa isa) noexcept;

// Row-major matrices. `accumulate` selects C += product instead of C = product.
//   gemm_nn: C[m x n] = A[m x k] * B[k x n]
//   gemm_nt: C[m x n] = A[m x k] * B[n x k]^T
//   gemm_tn: C[m x n] = A[k x m]^T * B[k x n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate);

/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

double dot(std::span<const double> x, std::span<const double> y);

/// out[i] = tanh(x[i])
void tanh_forward(std::span<const double> x, std::span<double> out);

/// gx[i] += gy[i] * (1 - y[i]^2), where y = tanh(x)
void tanh_backward(std::span<const double> y, std::span<const double> gy,
                   std::span<double> gx);

// Per-variant entry points, exposed for equivalence tests and benchmarks.
namespace scalar {
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
void axpy(std::size_t n, double alpha, const double* x, double* y);
double dot(std::size_t n, const double* x, const double* y);
void tanh_forward(std::size_t n, const double* x, double* out);
void tanh_backward(std::size_t n, const double* y, const double* gy, double* gx);
}  // namespace scalar

namespace avx2 {
bool compiled() noexcept;
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
void axpy(std::size_t n, double alpha, const double* x, double* y);
double dot(std::size_t n, const double* x, const double* y);
void tanh_forward(std::size_t n, const double* x, double* out);
void tanh_backward(std::size_t n, const double* y, const double* gy, double* gx);
}  // namespace avx2

}  // namespace fadingid::kernels
