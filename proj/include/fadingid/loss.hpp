#pragma once

// Training objective for the fading architecture:
//
//   ||Y - F theta||^2 / eta^2 + N log eta^2          (Gaussian fit)
//   + theta^T Lambda^{-1} theta                      (fading prior)
//   + log |F Lambda F^T + eta^2 I|                   (marginal-likelihood bound)
//   + nu * sum_blocks so_penalty                     (block weight prior)
//
// with Lambda = diag(kappa lambda^i), i = 0..n_B. The log-determinant is
// evaluated through the matrix determinant lemma on a (n_B+1)-sized system.

#include <utility>

#include "fadingid/model.hpp"
#include "fadingid/tensor.hpp"

namespace fadingid {

struct LossBreakdown {
  double fit = 0.0;
  double theta_prior = 0.0;  // scaled contribution that enters `total`
  double logdet_term = 0.0;
  double so_term = 0.0;      // scaled contribution that enters `total`
  double total = 0.0;
};

struct LossWeights {
  double so_weight = 1e-3;  // nu
  /// Multiplies the data-free prior terms; the trainer uses
  /// batch_size / dataset_size so a full epoch sums to one prior.
  double prior_scale = 1.0;
};

/// Lambda_ii = kappa * lambda^i, from the raw (unconstrained) parameters:
/// kappa = softplus(raw_kappa), lambda = logistic(raw_lambda).
ad::Var lambda_diag(const ad::Var& raw_kappa, const ad::Var& raw_lambda, std::size_t n_blocks);

/// Plain-value form for constrained kappa > 0 and lambda in (0, 1].
Tensor lambda_diag(double kappa, double lambda, std::size_t n_blocks);

/// log |F Lambda F^T + eta2 I| for F: N x k, via
/// N log eta2 + log det(I_k + Lambda^{1/2} F^T F Lambda^{1/2} / eta2).
ad::Var logdet_capacity(const ad::Var& features, const ad::Var& lambda_diag, const ad::Var& eta2);
double logdet_capacity(const Tensor& features, const Tensor& lambda_diag, double eta2);

/// theta^T Lambda^{-1} theta.
ad::Var theta_prior(const ad::Var& theta, const ad::Var& lambda_diag);

/// log |Lambda| = sum_i log(kappa lambda^i): the prior normalizer of the
/// joint MAP objective, which diverges to -inf as lambda -> 0.
double log_det_prior(double kappa, double lambda, std::size_t n_blocks);

struct Objective {
  ad::Var total;
  ad::Var predictions;
  LossBreakdown breakdown;
};

/// Objective on one batch with train-mode bank normalization (updates the
/// running statistics of `model`).
Objective objective(const ModelVars& vars, FadingModel& model, const BatchWindows& windows,
                    const Tensor& targets, const LossWeights& weights, NormMode mode = NormMode::train);

/// Whole regressor matrix as a single batch.
LossBreakdown objective(FadingModel& model, const RegressorMatrix& r, const LossWeights& weights,
                        NormMode mode = NormMode::train);

struct RidgeIdentity {
  double lhs = 0.0;  // min over theta of ||Y - F theta||^2 / eta2 + theta^T Lambda^{-1} theta
  double rhs = 0.0;  // Y^T (F Lambda F^T + eta2 I)^{-1} Y
};

/// Both sides of the ridge / marginal quadratic-form identity, from direct
/// dense solves. Intended for small N.
RidgeIdentity ridge_identity_check(const Tensor& features, const Tensor& lambda_diag, double eta2,
                                   const Tensor& targets);

}  // namespace fadingid
