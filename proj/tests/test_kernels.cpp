#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "fadingid/kernels.hpp"

namespace k = fadingid::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

// Reference product in long double, independent of both variants.
std::vector<double> naive(std::size_t m, std::size_t n, std::size_t kk, const std::vector<double>& a,
                          const std::vector<double>& b, bool ta, bool tb) {
  std::vector<double> c(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      long double s = 0;
      for (std::size_t p = 0; p < kk; ++p) {
        const double x = ta ? a[p * m + i] : a[i * kk + p];
        const double y = tb ? b[j * kk + p] : b[p * n + j];
        s += static_cast<long double>(x) * y;
      }
      c[i * n + j] = static_cast<double>(s);
    }
  }
  return c;
}

void check_close(const std::vector<double>& got, const std::vector<double>& want, double tol) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(std::abs(got[i] - want[i]) <= tol * (1.0 + std::abs(want[i])));
  }
}

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("scalar gemm variants match a long-double reference") {
    std::mt19937_64 rng(11);
    using Dims = std::tuple<std::size_t, std::size_t, std::size_t>;
    for (auto [m, n, kk] : {Dims{1, 1, 1}, Dims{3, 5, 7}, Dims{17, 33, 9}, Dims{64, 1, 40}, Dims{2, 70, 3}}) {
      const auto a = random_vec(m * kk, rng), b = random_vec(kk * n, rng), bt = random_vec(n * kk, rng);
      std::vector<double> c(m * n);
      k::scalar::gemm_nn(m, n, kk, a.data(), b.data(), c.data(), false);
      check_close(c, naive(m, n, kk, a, b, false, false), 1e-13);
      k::scalar::gemm_nt(m, n, kk, a.data(), bt.data(), c.data(), false);
      check_close(c, naive(m, n, kk, a, bt, false, true), 1e-13);
      const auto at = random_vec(kk * m, rng);
      k::scalar::gemm_tn(m, n, kk, at.data(), b.data(), c.data(), false);
      check_close(c, naive(m, n, kk, at, b, true, false), 1e-13);
    }
  }

  TEST_CASE("avx2 kernels agree with the scalar reference") {
    if (!k::isa_supported(k::Isa::avx2)) {
      MESSAGE("AVX2 not available on this CPU; equivalence not exercised");
      return;
    }
    std::mt19937_64 rng(12);
    for (std::size_t m : {1u, 2u, 5u, 16u, 37u}) {
      for (std::size_t n : {1u, 3u, 4u, 15u, 16u, 33u, 100u}) {
        for (std::size_t kk : {1u, 2u, 7u, 32u, 65u}) {
          const auto a = random_vec(m * kk, rng), b = random_vec(kk * n, rng);
          const auto bt = random_vec(n * kk, rng), at = random_vec(kk * m, rng);
          const auto seed_c = random_vec(m * n, rng);
          for (bool acc : {false, true}) {
            std::vector<double> s = seed_c, v = seed_c;
            k::scalar::gemm_nn(m, n, kk, a.data(), b.data(), s.data(), acc);
            k::avx2::gemm_nn(m, n, kk, a.data(), b.data(), v.data(), acc);
            check_close(v, s, 1e-13);
            s = seed_c, v = seed_c;
            k::scalar::gemm_nt(m, n, kk, a.data(), bt.data(), s.data(), acc);
            k::avx2::gemm_nt(m, n, kk, a.data(), bt.data(), v.data(), acc);
            check_close(v, s, 1e-13);
            s = seed_c, v = seed_c;
            k::scalar::gemm_tn(m, n, kk, at.data(), b.data(), s.data(), acc);
            k::avx2::gemm_tn(m, n, kk, at.data(), b.data(), v.data(), acc);
            check_close(v, s, 1e-13);
          }
        }
      }
    }
    for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 31u, 1000u}) {
      const auto x = random_vec(n, rng), y0 = random_vec(n, rng);
      std::vector<double> ys = y0, yv = y0;
      k::scalar::axpy(n, 0.37, x.data(), ys.data());
      k::avx2::axpy(n, 0.37, x.data(), yv.data());
      check_close(yv, ys, 1e-15);
      const double ds = k::scalar::dot(n, x.data(), y0.data());
      const double dv = k::avx2::dot(n, x.data(), y0.data());
      CHECK(std::abs(ds - dv) <= 1e-13 * (1.0 + std::abs(ds)));
    }
  }

  TEST_CASE("tanh variants track std::tanh") {
    std::vector<double> x;
    for (double v = -30.0; v <= 30.0; v += 0.001) x.push_back(v);
    for (double v : {0.0, -0.0, 1e-300, -1e-300, 1e-8, 0.625, -0.625, 0.6249999999, 22.0, 23.0, 700.0, -710.0}) {
      x.push_back(v);
    }
    std::vector<double> s(x.size()), v(x.size());
    k::scalar::tanh_forward(x.size(), x.data(), s.data());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(s[i] == std::tanh(x[i]));
    if (!k::isa_supported(k::Isa::avx2)) return;
    k::avx2::tanh_forward(x.size(), x.data(), v.data());
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double ref = std::tanh(x[i]);
      worst = std::max(worst, std::abs(v[i] - ref) / std::max(std::abs(ref), 1e-300));
    }
    CHECK(worst < 1e-14);
    CHECK(std::signbit(v[x.size() - 11]));  // -0.0 keeps its sign

    std::mt19937_64 rng(5);
    const auto y = random_vec(101, rng, 0.5), gy = random_vec(101, rng), g0 = random_vec(101, rng);
    std::vector<double> gs = g0, gv = g0;
    k::scalar::tanh_backward(y.size(), y.data(), gy.data(), gs.data());
    k::avx2::tanh_backward(y.size(), y.data(), gy.data(), gv.data());
    check_close(gv, gs, 1e-15);
  }

  TEST_CASE("dispatch honours set_isa") {
    const k::Isa before = k::active_isa();
    k::set_isa(k::Isa::scalar);
    CHECK(k::active_isa() == k::Isa::scalar);
    std::vector<double> a{1, 2}, b{3, 4}, c(1);
    k::gemm_nn(1, 1, 2, a, b, c, false);
    CHECK(c[0] == 11.0);
    if (k::isa_supported(k::Isa::avx2)) {
      k::set_isa(k::Isa::avx2);
      CHECK(k::active_isa() == k::Isa::avx2);
    } else {
      CHECK_THROWS_AS(k::set_isa(k::Isa::avx2), std::invalid_argument);
    }
    k::set_isa(before);
    CHECK(k::isa_name(k::Isa::scalar) == "scalar");
  }
}
