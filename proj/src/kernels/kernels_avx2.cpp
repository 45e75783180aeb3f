// AVX2 + FMA kernels. This translation unit is compiled with -mavx2 -mfma
// and must only be entered after the dispatcher has checked CPUID.

#include "fadingid/kernels.hpp"

#include <cmath>

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#define FADINGID_HAVE_AVX2 1
#else
#define FADINGID_HAVE_AVX2 0
#endif

namespace fadingid::kernels::avx2 {

#if FADINGID_HAVE_AVX2

namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// Row i of C (length n) = sum_p coef(p) * B[p, :], with coef(p) = a[p * a_stride].
inline void row_combination(std::size_t n, std::size_t k, const double* a,
                            std::size_t a_stride, const double* b, double* crow,
                            bool accumulate) {
  std::size_t j = 0;
  for (; j + 16 <= n; j += 16) {
    __m256d c0, c1, c2, c3;
    if (accumulate) {
      c0 = _mm256_loadu_pd(crow + j);
      c1 = _mm256_loadu_pd(crow + j + 4);
      c2 = _mm256_loadu_pd(crow + j + 8);
      c3 = _mm256_loadu_pd(crow + j + 12);
    } else {
      c0 = c1 = c2 = c3 = _mm256_setzero_pd();
    }
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d ap = _mm256_set1_pd(a[p * a_stride]);
      const double* brow = b + p * n + j;
      c0 = _mm256_fmadd_pd(ap, _mm256_loadu_pd(brow), c0);
      c1 = _mm256_fmadd_pd(ap, _mm256_loadu_pd(brow + 4), c1);
      c2 = _mm256_fmadd_pd(ap, _mm256_loadu_pd(brow + 8), c2);
      c3 = _mm256_fmadd_pd(ap, _mm256_loadu_pd(brow + 12), c3);
    }
    _mm256_storeu_pd(crow + j, c0);
    _mm256_storeu_pd(crow + j + 4, c1);
    _mm256_storeu_pd(crow + j + 8, c2);
    _mm256_storeu_pd(crow + j + 12, c3);
  }
  for (; j + 4 <= n; j += 4) {
    __m256d c0 = accumulate ? _mm256_loadu_pd(crow + j) : _mm256_setzero_pd();
    for (std::size_t p = 0; p < k; ++p) {
      c0 = _mm256_fmadd_pd(_mm256_set1_pd(a[p * a_stride]), _mm256_loadu_pd(b + p * n + j), c0);
    }
    _mm256_storeu_pd(crow + j, c0);
  }
  for (; j < n; ++j) {
    double acc = accumulate ? crow[j] : 0.0;
    for (std::size_t p = 0; p < k; ++p) acc = std::fma(a[p * a_stride], b[p * n + j], acc);
    crow[j] = acc;
  }
}

// exp(r) - 1 for |r| <= 1.25 by Taylor expansion to degree 20.
inline __m256d expm1_small(__m256d r) {
  static constexpr double kInvFact[] = {
      1.0 / 2432902008176640000.0, 1.0 / 121645100408832000.0, 1.0 / 6402373705728000.0,
      1.0 / 355687428096000.0,     1.0 / 20922789888000.0,     1.0 / 1307674368000.0,
      1.0 / 87178291200.0,         1.0 / 6227020800.0,         1.0 / 479001600.0,
      1.0 / 39916800.0,            1.0 / 3628800.0,            1.0 / 362880.0,
      1.0 / 40320.0,               1.0 / 5040.0,               1.0 / 720.0,
      1.0 / 120.0,                 1.0 / 24.0,                 1.0 / 6.0,
      1.0 / 2.0,                   1.0};
  __m256d acc = _mm256_set1_pd(kInvFact[0]);
  for (std::size_t i = 1; i < std::size(kInvFact); ++i) {
    acc = _mm256_fmadd_pd(acc, r, _mm256_set1_pd(kInvFact[i]));
  }
  return _mm256_mul_pd(acc, r);
}

// exp(x) for 0 <= x <= 45: x = n ln2 + r with |r| <= ln2/2, exp(r) by Taylor degree 13.
inline __m256d exp_positive(__m256d x) {
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634074);
  const __m256d ln2_hi = _mm256_set1_pd(6.93145751953125e-1);
  const __m256d ln2_lo = _mm256_set1_pd(1.42860682030941723212e-6);
  const __m256d n = _mm256_round_pd(_mm256_mul_pd(x, log2e),
                                    _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, ln2_hi, x);
  r = _mm256_fnmadd_pd(n, ln2_lo, r);
  static constexpr double kInvFact[] = {
      1.0 / 6227020800.0, 1.0 / 479001600.0, 1.0 / 39916800.0, 1.0 / 3628800.0,
      1.0 / 362880.0,     1.0 / 40320.0,     1.0 / 5040.0,     1.0 / 720.0,
      1.0 / 120.0,        1.0 / 24.0,        1.0 / 6.0,        1.0 / 2.0,
      1.0,                1.0};
  __m256d p = _mm256_set1_pd(kInvFact[0]);
  for (std::size_t i = 1; i < std::size(kInvFact); ++i) {
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(kInvFact[i]));
  }
  // Scale by 2^n through the exponent field.
  const __m128i ni = _mm256_cvtpd_epi32(n);
  const __m256i e = _mm256_slli_epi64(_mm256_add_epi64(_mm256_cvtepi32_epi64(ni),
                                                       _mm256_set1_epi64x(1023)),
                                      52);
  return _mm256_mul_pd(p, _mm256_castsi256_pd(e));
}

inline __m256d tanh_vec(__m256d x) {
  const __m256d sign_mask = _mm256_set1_pd(-0.0);
  const __m256d sign = _mm256_and_pd(x, sign_mask);
  __m256d ax = _mm256_andnot_pd(sign_mask, x);
  ax = _mm256_min_pd(ax, _mm256_set1_pd(22.0));
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d two = _mm256_set1_pd(2.0);

  // Small arguments: tanh = em1 / (em1 + 2) with em1 = expm1(2|x|), no cancellation.
  const __m256d small_arg = _mm256_min_pd(_mm256_add_pd(ax, ax), _mm256_set1_pd(1.25));
  const __m256d em1 = expm1_small(small_arg);
  const __m256d t_small = _mm256_div_pd(em1, _mm256_add_pd(em1, two));

  // Large arguments: tanh = 1 - 2 / (exp(2|x|) + 1).
  const __m256d ex = exp_positive(_mm256_add_pd(ax, ax));
  const __m256d t_large = _mm256_sub_pd(one, _mm256_div_pd(two, _mm256_add_pd(ex, one)));

  const __m256d use_small = _mm256_cmp_pd(ax, _mm256_set1_pd(0.625), _CMP_LT_OQ);
  const __m256d t = _mm256_blendv_pd(t_large, t_small, use_small);
  return _mm256_or_pd(t, sign);
}

}  // namespace

bool compiled() noexcept { return true; }

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) row_combination(n, k, a + i * k, 1, b, c + i * n, accumulate);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) row_combination(n, k, a + i, m, b, c + i * n, accumulate);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const double* b0 = b + j * k;
      const double* b1 = b0 + k;
      const double* b2 = b1 + k;
      const double* b3 = b2 + k;
      __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
      __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        const __m256d av = _mm256_loadu_pd(arow + p);
        s0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b0 + p), s0);
        s1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b1 + p), s1);
        s2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b2 + p), s2);
        s3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b3 + p), s3);
      }
      double r0 = hsum(s0), r1 = hsum(s1), r2 = hsum(s2), r3 = hsum(s3);
      for (; p < k; ++p) {
        r0 = std::fma(arow[p], b0[p], r0);
        r1 = std::fma(arow[p], b1[p], r1);
        r2 = std::fma(arow[p], b2[p], r2);
        r3 = std::fma(arow[p], b3[p], r3);
      }
      if (accumulate) {
        crow[j] += r0;
        crow[j + 1] += r1;
        crow[j + 2] += r2;
        crow[j + 3] += r3;
      } else {
        crow[j] = r0;
        crow[j + 1] = r1;
        crow[j + 2] = r2;
        crow[j + 3] = r3;
      }
    }
    for (; j < n; ++j) {
      const double r = dot(k, arow, b + j * k);
      crow[j] = accumulate ? crow[j] + r : r;
    }
  }
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

double dot(std::size_t n, const double* x, const double* y) {
  __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), s1);
  }
  for (; i + 4 <= n; i += 4) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
  }
  double acc = hsum(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) acc = std::fma(x[i], y[i], acc);
  return acc;
}

void tanh_forward(std::size_t n, const double* x, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, tanh_vec(_mm256_loadu_pd(x + i)));
  if (i < n) {
    alignas(32) double buf[4] = {0.0, 0.0, 0.0, 0.0};
    for (std::size_t j = i; j < n; ++j) buf[j - i] = x[j];
    _mm256_store_pd(buf, tanh_vec(_mm256_load_pd(buf)));
    for (std::size_t j = i; j < n; ++j) out[j] = buf[j - i];
  }
}

void tanh_backward(std::size_t n, const double* y, const double* gy, double* gx) {
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d yv = _mm256_loadu_pd(y + i);
    const __m256d d = _mm256_fnmadd_pd(yv, yv, one);
    _mm256_storeu_pd(gx + i, _mm256_fmadd_pd(_mm256_loadu_pd(gy + i), d, _mm256_loadu_pd(gx + i)));
  }
  for (; i < n; ++i) gx[i] = std::fma(gy[i], std::fma(-y[i], y[i], 1.0), gx[i]);
}

#else  // !FADINGID_HAVE_AVX2

bool compiled() noexcept { return false; }

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  scalar::gemm_nn(m, n, k, a, b, c, accumulate);
}
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  scalar::gemm_nt(m, n, k, a, b, c, accumulate);
}
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  scalar::gemm_tn(m, n, k, a, b, c, accumulate);
}
void axpy(std::size_t n, double alpha, const double* x, double* y) { scalar::axpy(n, alpha, x, y); }
double dot(std::size_t n, const double* x, const double* y) { return scalar::dot(n, x, y); }
void tanh_forward(std::size_t n, const double* x, double* out) { scalar::tanh_forward(n, x, out); }
void tanh_backward(std::size_t n, const double* y, const double* gy, double* gx) {
  scalar::tanh_backward(n, y, gy, gx);
}

#endif

}  // namespace fadingid::kernels::avx2
