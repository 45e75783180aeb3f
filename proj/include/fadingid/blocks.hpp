#pragma once

// Elementary block networks and the cross-block output normalization.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fadingid/tensor.hpp"

namespace fadingid {

enum class Activation { tanh, relu, elu, sigmoid };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation a) noexcept;

struct Layer {
  Tensor weight;  // n_out x n_in
  Tensor bias;    // n_out
};

/// Fully connected network with a scalar output and no activation on the last
/// layer. Layer l maps n_{l-1} -> n_l.
class MLPBlock {
 public:
  MLPBlock() = default;
  MLPBlock(std::vector<Layer> layers, Activation activation);

  /// Uniform fan-in initialization, U(-sqrt(1/n_in), sqrt(1/n_in)), zero
  /// biases. Deterministic in `seed`. Throws ConfigError on a zero dimension.
  static MLPBlock init(const std::vector<std::size_t>& dims, Activation activation,
                       std::uint64_t seed);

  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<Layer>& layers() noexcept { return layers_; }
  Activation activation() const noexcept { return activation_; }

  std::vector<std::size_t> dims() const;
  std::size_t input_dim() const;
  std::size_t parameter_count() const;

 private:
  std::vector<Layer> layers_;
  Activation activation_ = Activation::tanh;
};

/// Block parameters registered on a tape.
struct BlockVars {
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;
  Activation activation = Activation::tanh;
};

BlockVars bind_block(ad::Tape& tape, const MLPBlock& block);

/// window: batch x n_0. Returns batch x 1.
ad::Var block_forward(const BlockVars& block, const ad::Var& window);

/// Tape-free forward for callers that only need values.
Tensor block_forward(const MLPBlock& block, const Tensor& window);

/// Sum over layers of ||W^T W - I||_F^2. Biases are not penalized.
ad::Var so_penalty(const BlockVars& block);
double so_penalty(const MLPBlock& block);

enum class NormMode { train, eval };

/// Batch normalization of the n_B+1 block outputs with one affine pair
/// (gamma, beta) shared by every column.
struct BlockBankNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  Tensor gamma = Tensor::scalar(1.0);
  Tensor beta = Tensor::scalar(0.0);
  double momentum = 0.1;
  double eps = 1e-5;

  static BlockBankNormState fresh(std::size_t columns);
  std::size_t columns() const noexcept { return running_mean.size(); }
};

/// raw: batch x columns. Train mode standardizes by batch statistics and
/// folds them into the running averages; eval mode uses the running averages
/// and leaves the state untouched. Throws ContractError for a train batch
/// smaller than 2.
ad::Var normalize_bank(const ad::Var& raw, const ad::Var& gamma, const ad::Var& beta,
                       BlockBankNormState& state, NormMode mode);

}  // namespace fadingid
