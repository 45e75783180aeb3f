#pragma once

// Small dense routines for the (n_B+1) x (n_B+1) systems that appear in the
// loss. None of this is meant for large matrices.

#include "fadingid/tensor.hpp"

namespace fadingid::linalg {

/// Lower Cholesky factor of a symmetric positive-definite matrix. Only the
/// lower triangle of `m` is read. Throws NumericalError naming the pivot.
Tensor cholesky(const Tensor& m);

/// Solves L L^T x = b for a Cholesky factor L; b is n or n x r.
Tensor cholesky_solve(const Tensor& chol, const Tensor& b);

/// Inverse of an SPD matrix from its Cholesky factor; exactly symmetric.
Tensor spd_inverse(const Tensor& chol);

/// 2 * sum(log(diag(L))).
double logdet_from_cholesky(const Tensor& chol);

/// Largest |m(i,j) - m(j,i)|.
double asymmetry(const Tensor& m);

}  // namespace fadingid::linalg
