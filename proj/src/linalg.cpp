#include "fadingid/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fadingid/errors.hpp"

namespace fadingid::linalg {

namespace {

void require_square(const Tensor& m, const char* what) {
  if (m.rank() != 2 || m.dim(0) != m.dim(1)) {
    throw DimensionError(std::string(what) + ": expected a square matrix, got " +
                         shape_string(m.shape()));
  }
}

}  // namespace

Tensor cholesky(const Tensor& m) {
  require_square(m, "cholesky");
  const std::size_t n = m.dim(0);
  Tensor l({n, n});
  for (std::size_t j = 0; j < n; ++j) {
    double d = m.at(j, j);
    for (std::size_t p = 0; p < j; ++p) d -= l.at(j, p) * l.at(j, p);
    if (!(d > 0.0) || !std::isfinite(d)) {
      throw NumericalError("cholesky: matrix is not positive definite (pivot " +
                               std::to_string(j) + " = " + std::to_string(d) + ")",
                           j);
    }
    const double ljj = std::sqrt(d);
    l.at(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m.at(i, j);
      for (std::size_t p = 0; p < j; ++p) s -= l.at(i, p) * l.at(j, p);
      l.at(i, j) = s / ljj;
    }
  }
  return l;
}

Tensor cholesky_solve(const Tensor& chol, const Tensor& b) {
  require_square(chol, "cholesky_solve");
  const std::size_t n = chol.dim(0);
  const std::size_t r = b.rank() == 1 ? 1 : b.cols();
  if (b.rows() != n) {
    throw DimensionError("cholesky_solve: rhs " + shape_string(b.shape()) +
                         " does not match factor " + shape_string(chol.shape()));
  }
  Tensor x = b;
  for (std::size_t c = 0; c < r; ++c) {
    // Forward substitution with L, then back substitution with L^T.
    for (std::size_t i = 0; i < n; ++i) {
      double s = x[i * r + c];
      for (std::size_t p = 0; p < i; ++p) s -= chol.at(i, p) * x[p * r + c];
      x[i * r + c] = s / chol.at(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
      double s = x[ii * r + c];
      for (std::size_t p = ii + 1; p < n; ++p) s -= chol.at(p, ii) * x[p * r + c];
      x[ii * r + c] = s / chol.at(ii, ii);
    }
  }
  return x;
}

Tensor spd_inverse(const Tensor& chol) {
  const std::size_t n = chol.dim(0);
  Tensor inv = cholesky_solve(chol, Tensor::identity(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = 0.5 * (inv.at(i, j) + inv.at(j, i));
      inv.at(i, j) = s;
      inv.at(j, i) = s;
    }
  }
  return inv;
}

double logdet_from_cholesky(const Tensor& chol) {
  double acc = 0.0;
  for (std::size_t i = 0; i < chol.dim(0); ++i) acc += std::log(chol.at(i, i));
  return 2.0 * acc;
}

double asymmetry(const Tensor& m) {
  require_square(m, "asymmetry");
  double worst = 0.0;
  for (std::size_t i = 0; i < m.dim(0); ++i) {
    for (std::size_t j = i + 1; j < m.dim(0); ++j) {
      worst = std::max(worst, std::abs(m.at(i, j) - m.at(j, i)));
    }
  }
  return worst;
}

}  // namespace fadingid::linalg
