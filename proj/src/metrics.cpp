#include "fadingid/metrics.hpp"

#include <cmath>

#include "fadingid/errors.hpp"
#include "fadingid/kernels.hpp"

namespace fadingid {

double eta_hat(std::span<const double> y, std::span<const double> yhat) {
  if (y.size() != yhat.size()) {
    throw ContractError("eta_hat: " + std::to_string(y.size()) + " targets vs " +
                        std::to_string(yhat.size()) + " predictions");
  }
  if (y.empty()) throw ContractError("eta_hat: empty sequence");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - yhat[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(y.size()));
}

BlockRelevance block_relevance(const FadingModel& model, const RegressorMatrix& r) {
  const Tensor features = feature_matrix(model, r);
  const std::size_t rows = r.rows(), k = model.bank_size();
  BlockRelevance out;
  out.importance.assign(k, 0.0);
  out.truncated_std.assign(k, 0.0);
  std::vector<double> partial(k);
  for (std::size_t row = 0; row < rows; ++row) {
    const std::span<const double> f = features.values().subspan(row * k, k);
    // Partial sums go through the same kernel as the model's F * theta so the
    // full truncation reproduces the predictions bit for bit.
    for (std::size_t i = 0; i < k; ++i) {
      kernels::gemm_nn(1, 1, i + 1, f.first(i + 1), model.theta.values().first(i + 1),
                       std::span<double>(&partial[i], 1), false);
    }
    for (std::size_t i = 0; i < k; ++i) {
      out.importance[i] += std::abs(model.theta[i] * f[i]);
      const double resid = r.targets[row] - partial[i];
      out.truncated_std[i] += resid * resid;
    }
  }
  const double n = static_cast<double>(rows);
  for (std::size_t i = 0; i < k; ++i) {
    out.importance[i] /= n;
    out.truncated_std[i] = std::sqrt(out.truncated_std[i] / n);
  }
  return out;
}

}  // namespace fadingid
