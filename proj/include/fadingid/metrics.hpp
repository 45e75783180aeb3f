#pragma once

#include <span>
#include <vector>

#include "fadingid/model.hpp"

namespace fadingid {

/// Root mean squared one-step error. Throws ContractError on empty or
/// mismatched inputs.
double eta_hat(std::span<const double> y, std::span<const double> yhat);

struct BlockRelevance {
  /// mean over rows of |theta_i * fbar_i|
  std::vector<double> importance;
  /// RMS of y - sum_{j <= i} theta_j * fbar_j
  std::vector<double> truncated_std;
};

/// Eval-mode relevance diagnostics over every row of `r`.
BlockRelevance block_relevance(const FadingModel& model, const RegressorMatrix& r);

struct EvalReport {
  double eta_hat_train = 0.0;
  double eta_hat_test = 0.0;
  double eta_true = 0.0;
  double gap = 0.0;  // test - train
  BlockRelevance relevance;  // on the test set; empty for the plain baseline
};

}  // namespace fadingid
