#pragma once

// Fading-memory block architecture: n_B + 1 blocks, block i reading the
// p-long window that ends i steps further in the past, normalized by a shared
// bank normalization and recombined linearly with weights theta.

#include <cstdint>
#include <vector>

#include "fadingid/benchmarks.hpp"
#include "fadingid/blocks.hpp"
#include "fadingid/tensor.hpp"

namespace fadingid {

/// Splitmix-style derivation of independent child seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

/// Regressors for one-step-ahead prediction.
///
/// windows(r, i, :) is block i's window for the r-th admissible time t:
/// [y_{t-i-1}, u_{t-i-1}, ..., y_{t-i-p}, u_{t-i-p}] (most recent first).
/// Rows exist for t = n_B + p, ..., N - 1 (zero-based).
struct RegressorMatrix {
  std::size_t p = 0;
  std::size_t n_blocks = 0;  // n_B
  Tensor windows;            // rows x (n_B + 1) x 2p
  Tensor targets;            // rows
  std::size_t first_time = 0;

  std::size_t rows() const noexcept { return targets.size(); }
  std::size_t horizon() const noexcept { return n_blocks + p; }

  /// Block i's windows for the given rows, as a batch x 2p matrix.
  Tensor block_windows(std::size_t block, std::span<const std::size_t> rows) const;
  /// Same for a contiguous range [begin, end).
  Tensor block_windows(std::size_t block, std::size_t begin, std::size_t end) const;
  Tensor gather_targets(std::span<const std::size_t> rows) const;
};

/// Throws DataError when the series is not longer than n_B + p.
RegressorMatrix build_regressors(const TimeSeriesDataset& data, std::size_t p, std::size_t n_blocks);

struct BlockConfig {
  std::vector<std::size_t> hidden = {32, 32, 32};
  Activation activation = Activation::tanh;
};

struct FadingModel {
  /// theta_i = sqrt(kappa0 * lambda0^i), lambda0 = 0.9, kappa0 = 1; eta^2
  /// starts at `initial_eta2`. Block i is seeded from `seed` and i.
  static FadingModel init(std::size_t p, std::size_t n_blocks, const BlockConfig& blocks,
                          std::uint64_t seed, double initial_eta2 = 1.0);

  std::size_t p = 0;
  std::size_t n_blocks = 0;  // n_B
  std::vector<MLPBlock> blocks;
  Tensor theta;
  BlockBankNormState norm;
  Tensor raw_lambda = Tensor::scalar(0.0);
  Tensor raw_kappa = Tensor::scalar(0.0);
  Tensor raw_log_eta2 = Tensor::scalar(0.0);

  std::size_t horizon() const noexcept { return n_blocks + p; }
  std::size_t bank_size() const noexcept { return n_blocks + 1; }

  double lambda() const;
  double kappa() const;
  double eta2() const;

  /// Every trainable tensor in a fixed order: per block (W_1, b_1, ..., W_L,
  /// b_L), then theta, gamma, beta, raw_lambda, raw_kappa, raw_log_eta2.
  std::vector<Tensor*> parameters();
  std::size_t parameter_count() const;
};

/// Model parameters bound to a tape, in FadingModel::parameters() order.
struct ModelVars {
  std::vector<BlockVars> blocks;
  ad::Var theta, gamma, beta, raw_lambda, raw_kappa, raw_log_eta2;

  std::vector<ad::Var> all() const;
};

ModelVars bind_model(ad::Tape& tape, const FadingModel& model);

/// Block windows for one batch, one batch x 2p matrix per block.
using BatchWindows = std::vector<Tensor>;

BatchWindows gather_batch(const RegressorMatrix& r, std::span<const std::size_t> rows);

/// Normalized bank F (batch x (n_B+1)) on the tape. Train mode updates the
/// running statistics in `model.norm`.
ad::Var block_feature_matrix(const ModelVars& vars, FadingModel& model, const BatchWindows& windows,
                             NormMode mode);

/// F * theta, shape {batch}.
ad::Var model_forward(const ModelVars& vars, FadingModel& model, const BatchWindows& windows,
                      NormMode mode);

/// Value-level versions over a whole regressor matrix. Eval mode is computed
/// in row chunks; train mode treats all rows as one batch.
Tensor block_feature_matrix(FadingModel& model, const RegressorMatrix& r, NormMode mode);
Tensor model_forward(FadingModel& model, const RegressorMatrix& r, NormMode mode);

/// Eval-mode predictions of a const model.
Tensor predict(const FadingModel& model, const RegressorMatrix& r);
/// Eval-mode normalized bank of a const model.
Tensor feature_matrix(const FadingModel& model, const RegressorMatrix& r);

void check_compatible(const FadingModel& model, const RegressorMatrix& r);

/// Monolithic MLP over the full horizon T (input width 2T).
struct PlainDNN {
  std::size_t horizon = 0;
  MLPBlock net;
  Tensor raw_log_eta2 = Tensor::scalar(0.0);

  static PlainDNN init(std::size_t horizon, const BlockConfig& config, std::uint64_t seed,
                       double initial_eta2 = 1.0);

  std::vector<Tensor*> parameters();
  std::size_t parameter_count() const { return net.parameter_count(); }
};

/// full_windows: batch x 2T, the window of build_regressors(data, T, 0).
Tensor plain_forward(const PlainDNN& d, const Tensor& full_windows);
ad::Var plain_forward(const BlockVars& net, const ad::Var& full_windows);

/// Eval predictions for every row of a (p = T, n_B = 0) regressor matrix.
Tensor predict(const PlainDNN& d, const RegressorMatrix& r);

/// Sum over layers of (n_{l-1} + 1) n_l.
std::size_t mlp_parameter_count(const std::vector<std::size_t>& dims);

}  // namespace fadingid
