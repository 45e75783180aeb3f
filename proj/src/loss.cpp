#include "fadingid/loss.hpp"

#include <cmath>

#include "fadingid/errors.hpp"
#include "fadingid/kernels.hpp"
#include "fadingid/linalg.hpp"

namespace fadingid {

ad::Var lambda_diag(const ad::Var& raw_kappa, const ad::Var& raw_lambda, std::size_t n_blocks) {
  ad::Tape& tape = raw_kappa.tape();
  const ad::Var kappa = ad::softplus(raw_kappa);
  // log(logistic(x)) = -softplus(-x)
  const ad::Var log_lambda = ad::scale(ad::softplus(ad::scale(raw_lambda, -1.0)), -1.0);
  Tensor powers({n_blocks + 1});
  for (std::size_t i = 0; i <= n_blocks; ++i) powers[i] = static_cast<double>(i);
  const ad::Var exponents = ad::mul(tape.constant(std::move(powers)), log_lambda);
  return ad::mul(ad::exp(exponents), kappa);
}

Tensor lambda_diag(double kappa, double lambda, std::size_t n_blocks) {
  Tensor out({n_blocks + 1});
  for (std::size_t i = 0; i <= n_blocks; ++i) {
    out[i] = kappa * std::pow(lambda, static_cast<double>(i));
  }
  return out;
}

ad::Var logdet_capacity(const ad::Var& features, const ad::Var& lambda_diag, const ad::Var& eta2) {
  ad::Tape& tape = features.tape();
  const Tensor& fv = features.value();
  if (fv.rank() != 2 || fv.dim(1) != lambda_diag.value().size()) {
    throw DimensionError("logdet_capacity: features " + shape_string(fv.shape()) +
                         " vs prior diagonal " + shape_string(lambda_diag.value().shape()));
  }
  const std::size_t n = fv.dim(0), k = fv.dim(1);
  const ad::Var gram = ad::matmul(ad::transpose(features), features);
  const ad::Var root = ad::exp(ad::scale(ad::log(lambda_diag), 0.5));
  const ad::Var outer = ad::matmul(root, ad::transpose(root));
  const ad::Var inner = ad::add(ad::div(ad::mul(gram, outer), eta2),
                                tape.constant(Tensor::identity(k)));
  return ad::add(ad::logdet_spd(inner), ad::scale(ad::log(eta2), static_cast<double>(n)));
}

double logdet_capacity(const Tensor& features, const Tensor& lambda_diag, double eta2) {
  ad::Tape tape;
  return logdet_capacity(tape.constant(features), tape.constant(lambda_diag),
                         tape.constant(Tensor::scalar(eta2)))
      .item();
}

ad::Var theta_prior(const ad::Var& theta, const ad::Var& lambda_diag) {
  return ad::sum(ad::div(ad::square(theta), lambda_diag));
}

double log_det_prior(double kappa, double lambda, std::size_t n_blocks) {
  double acc = 0.0;
  for (std::size_t i = 0; i <= n_blocks; ++i) {
    acc += std::log(kappa) + static_cast<double>(i) * std::log(lambda);
  }
  return acc;
}

Objective objective(const ModelVars& vars, FadingModel& model, const BatchWindows& windows,
                    const Tensor& targets, const LossWeights& weights, NormMode mode) {
  ad::Tape& tape = vars.theta.tape();
  const std::size_t batch = targets.size();
  if (batch == 0) throw ContractError("objective: empty batch");

  const ad::Var features = block_feature_matrix(vars, model, windows, mode);
  const ad::Var predictions = ad::matmul(features, vars.theta);
  const ad::Var eta2 = ad::exp(vars.raw_log_eta2);

  const ad::Var residual = ad::sub(tape.constant(targets), predictions);
  const ad::Var fit = ad::add(ad::div(ad::sum(ad::square(residual)), eta2),
                              ad::scale(vars.raw_log_eta2, static_cast<double>(batch)));

  const ad::Var diag = lambda_diag(vars.raw_kappa, vars.raw_lambda, model.n_blocks);
  const ad::Var logdet = logdet_capacity(features, diag, eta2);
  const ad::Var prior = ad::scale(theta_prior(vars.theta, diag), weights.prior_scale);

  ad::Var total = ad::add(ad::add(fit, logdet), prior);
  double so_value = 0.0;
  if (weights.so_weight != 0.0) {
    ad::Var so;
    for (const BlockVars& b : vars.blocks) {
      const ad::Var term = so_penalty(b);
      so = so.valid() ? ad::add(so, term) : term;
    }
    so = ad::scale(so, weights.so_weight * weights.prior_scale);
    so_value = so.item();
    total = ad::add(total, so);
  }

  Objective out;
  out.total = total;
  out.predictions = predictions;
  out.breakdown = LossBreakdown{fit.item(), prior.item(), logdet.item(), so_value, total.item()};
  return out;
}

LossBreakdown objective(FadingModel& model, const RegressorMatrix& r, const LossWeights& weights,
                        NormMode mode) {
  check_compatible(model, r);
  std::vector<std::size_t> rows(r.rows());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  ad::Tape tape;
  const ModelVars vars = bind_model(tape, model);
  return objective(vars, model, gather_batch(r, rows), r.targets, weights, mode).breakdown;
}

RidgeIdentity ridge_identity_check(const Tensor& features, const Tensor& lambda_diag, double eta2,
                                   const Tensor& targets) {
  if (features.rank() != 2 || features.dim(1) != lambda_diag.size() ||
      features.dim(0) != targets.size()) {
    throw DimensionError("ridge_identity_check: features " + shape_string(features.shape()) +
                         ", prior " + shape_string(lambda_diag.shape()) + ", targets " +
                         shape_string(targets.shape()));
  }
  if (!(eta2 > 0.0)) throw DomainError("ridge_identity_check: eta2 must be positive");
  const std::size_t n = features.dim(0), k = features.dim(1);
  const auto f = features.values();
  const auto y = targets.values();

  // theta* = (F^T F / eta2 + Lambda^{-1})^{-1} F^T Y / eta2
  Tensor normal({k, k});
  kernels::gemm_tn(k, k, n, f, f, normal.values(), false);
  for (double& v : normal.values()) v /= eta2;
  for (std::size_t i = 0; i < k; ++i) normal.at(i, i) += 1.0 / lambda_diag[i];
  Tensor rhs_vec({k});
  kernels::gemm_tn(k, 1, n, f, y, rhs_vec.values(), false);
  for (double& v : rhs_vec.values()) v /= eta2;
  const Tensor theta = linalg::cholesky_solve(linalg::cholesky(normal), rhs_vec);

  Tensor fitted({n});
  kernels::gemm_nn(n, 1, k, f, theta.values(), fitted.values(), false);
  double lhs = 0.0;
  for (std::size_t i = 0; i < n; ++i) lhs += (y[i] - fitted[i]) * (y[i] - fitted[i]);
  lhs /= eta2;
  for (std::size_t i = 0; i < k; ++i) lhs += theta[i] * theta[i] / lambda_diag[i];

  // Y^T Sigma^{-1} Y with Sigma = F Lambda F^T + eta2 I
  Tensor scaled = features;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < k; ++c) scaled.at(r, c) *= lambda_diag[c];
  Tensor sigma({n, n});
  kernels::gemm_nt(n, n, k, scaled.values(), f, sigma.values(), false);
  for (std::size_t i = 0; i < n; ++i) sigma.at(i, i) += eta2;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) sigma.at(j, i) = sigma.at(i, j);
  const Tensor solved = linalg::cholesky_solve(linalg::cholesky(sigma), targets);
  double rhs = 0.0;
  for (std::size_t i = 0; i < n; ++i) rhs += y[i] * solved[i];
  return RidgeIdentity{lhs, rhs};
}

}  // namespace fadingid
