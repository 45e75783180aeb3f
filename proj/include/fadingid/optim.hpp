#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fadingid/loss.hpp"
#include "fadingid/metrics.hpp"
#include "fadingid/model.hpp"
#include "fadingid/tensor.hpp"

namespace fadingid {

struct SgdState {
  double lr = 1e-2;
  double momentum = 0.0;
  std::vector<Tensor> velocity;
};

/// v <- momentum * v + g; p <- p - lr * v. Throws ContractError on shape mismatch.
void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, SgdState& state);

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// Bias-corrected Adam. Throws ContractError on shape mismatch.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state);

/// Shuffled minibatches; every row appears exactly once per epoch. A trailing
/// batch smaller than `min_batch` is folded into the previous one.
class MinibatchSampler {
 public:
  MinibatchSampler(std::size_t rows, std::size_t batch_size, std::uint64_t seed,
                   std::size_t min_batch = 1);
  std::vector<std::vector<std::size_t>> next_epoch();

 private:
  std::size_t rows_;
  std::size_t batch_size_;
  std::size_t min_batch_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
};

enum class OptimizerKind { adam, sgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;  // sgd only
};

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  OptimizerConfig optimizer;
  double so_weight = 1e-3;
  std::uint64_t seed = 0;
  /// Evaluate (train and validation eta_hat, block relevance) every this many
  /// epochs, and always on the last one. 0 disables periodic evaluation.
  std::size_t eval_every = 1;
};

struct EpochLog {
  std::size_t epoch = 0;  // 0 is the state before training
  LossBreakdown loss;     // mean over the epoch's batches
  double lambda = 0.0;
  double kappa = 0.0;
  double eta = 0.0;
  double batch_eta_hat = std::numeric_limits<double>::quiet_NaN();  // train-mode, running
  double train_eta_hat = std::numeric_limits<double>::quiet_NaN();  // eval mode
  double val_eta_hat = std::numeric_limits<double>::quiet_NaN();
  BlockRelevance relevance;  // on the validation rows, when evaluated
};

struct TrainingLog {
  std::vector<EpochLog> epochs;
};

/// Minibatch minimization of the full objective. `validation` may be null.
/// Throws DivergenceError naming the epoch and term when the loss stops being
/// finite.
TrainingLog train(FadingModel& model, const RegressorMatrix& train_rows,
                  const RegressorMatrix* validation, const TrainConfig& config);

/// Plain baseline: Gaussian fit term plus optional soft orthogonality.
TrainingLog train(PlainDNN& model, const RegressorMatrix& train_rows,
                  const RegressorMatrix* validation, const TrainConfig& config);

}  // namespace fadingid
