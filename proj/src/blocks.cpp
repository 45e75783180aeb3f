#include "fadingid/blocks.hpp"

#include <cmath>
#include <random>

#include "fadingid/errors.hpp"
#include "fadingid/kernels.hpp"

namespace fadingid {

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "elu") return Activation::elu;
  if (name == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation a) noexcept {
  switch (a) {
    case Activation::tanh:
      return "tanh";
    case Activation::relu:
      return "relu";
    case Activation::elu:
      return "elu";
    case Activation::sigmoid:
      return "sigmoid";
  }
  return "tanh";
}

MLPBlock::MLPBlock(std::vector<Layer> layers, Activation activation)
    : layers_(std::move(layers)), activation_(activation) {
  if (layers_.empty()) throw ConfigError("block needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    if (layer.weight.rank() != 2 || layer.bias.size() != layer.weight.dim(0)) {
      throw DimensionError("layer " + std::to_string(l) + ": weight " +
                           shape_string(layer.weight.shape()) + " and bias " +
                           shape_string(layer.bias.shape()) + " disagree");
    }
    if (l > 0 && layers_[l - 1].weight.dim(0) != layer.weight.dim(1)) {
      throw DimensionError("layer " + std::to_string(l) + " expects " +
                           std::to_string(layer.weight.dim(1)) + " inputs but layer " +
                           std::to_string(l - 1) + " produces " +
                           std::to_string(layers_[l - 1].weight.dim(0)));
    }
  }
}

MLPBlock MLPBlock::init(const std::vector<std::size_t>& dims, Activation activation,
                        std::uint64_t seed) {
  if (dims.size() < 2) throw ConfigError("block dims need at least input and output sizes");
  for (std::size_t d : dims) {
    if (d == 0) throw ConfigError("block dims must be positive");
  }
  std::mt19937_64 rng(seed);
  std::vector<Layer> layers;
  for (std::size_t l = 1; l < dims.size(); ++l) {
    const std::size_t in = dims[l - 1], out = dims[l];
    const double bound = std::sqrt(1.0 / static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor w({out, in});
    for (double& v : w.values()) v = dist(rng);
    layers.push_back(Layer{std::move(w), Tensor({out})});
  }
  return MLPBlock(std::move(layers), activation);
}

std::vector<std::size_t> MLPBlock::dims() const {
  std::vector<std::size_t> d;
  if (layers_.empty()) return d;
  d.push_back(layers_.front().weight.dim(1));
  for (const Layer& l : layers_) d.push_back(l.weight.dim(0));
  return d;
}

std::size_t MLPBlock::input_dim() const {
  return layers_.empty() ? 0 : layers_.front().weight.dim(1);
}

std::size_t MLPBlock::parameter_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

BlockVars bind_block(ad::Tape& tape, const MLPBlock& block) {
  BlockVars vars;
  vars.activation = block.activation();
  for (const Layer& l : block.layers()) {
    vars.weights.push_back(tape.leaf(l.weight));
    vars.biases.push_back(tape.leaf(l.bias));
  }
  return vars;
}

namespace {

ad::Var activate(Activation a, const ad::Var& x) {
  switch (a) {
    case Activation::tanh:
      return ad::tanh(x);
    case Activation::relu:
      return ad::relu(x);
    case Activation::elu:
      return ad::elu(x);
    case Activation::sigmoid:
      return ad::sigmoid(x);
  }
  return ad::tanh(x);
}

}  // namespace

ad::Var block_forward(const BlockVars& block, const ad::Var& window) {
  const Tensor& w0 = block.weights.front().value();
  if (window.value().rank() != 2 || window.value().dim(1) != w0.dim(1)) {
    throw DimensionError("block_forward: window " + shape_string(window.value().shape()) +
                         " does not match block input width " + std::to_string(w0.dim(1)));
  }
  ad::Var h = window;
  const std::size_t last = block.weights.size() - 1;
  for (std::size_t l = 0; l <= last; ++l) {
    h = ad::linear(h, block.weights[l], block.biases[l]);
    if (l != last) h = activate(block.activation, h);
  }
  return h;
}

Tensor block_forward(const MLPBlock& block, const Tensor& window) {
  ad::Tape tape;
  const BlockVars vars = bind_block(tape, block);
  return block_forward(vars, tape.constant(window)).value();
}

ad::Var so_penalty(const BlockVars& block) {
  ad::Tape& tape = block.weights.front().tape();
  ad::Var total;
  for (const ad::Var& w : block.weights) {
    const std::size_t n_in = w.value().dim(1);
    const ad::Var gram = ad::matmul(ad::transpose(w), w);
    const ad::Var dev = ad::sub(gram, tape.constant(Tensor::identity(n_in)));
    const ad::Var term = ad::sum(ad::square(dev));
    total = total.valid() ? ad::add(total, term) : term;
  }
  return total;
}

double so_penalty(const MLPBlock& block) {
  ad::Tape tape;
  return so_penalty(bind_block(tape, block)).item();
}

BlockBankNormState BlockBankNormState::fresh(std::size_t columns) {
  BlockBankNormState s;
  s.running_mean.assign(columns, 0.0);
  s.running_var.assign(columns, 1.0);
  return s;
}

ad::Var normalize_bank(const ad::Var& raw, const ad::Var& gamma, const ad::Var& beta,
                       BlockBankNormState& state, NormMode mode) {
  const Tensor& rv = raw.value();
  if (rv.rank() != 2 || rv.dim(1) != state.columns()) {
    throw DimensionError("normalize_bank: bank " + shape_string(rv.shape()) + " vs " +
                         std::to_string(state.columns()) + " normalization columns");
  }
  ad::Var standardized;
  if (mode == NormMode::train) {
    if (rv.dim(0) < 2) {
      throw ContractError("normalize_bank: train mode needs a batch of at least 2 rows, got " +
                          std::to_string(rv.dim(0)));
    }
    ad::ColumnStats stats;
    standardized = ad::standardize_columns(raw, state.eps, &stats);
    const double rho = state.momentum;
    for (std::size_t c = 0; c < state.columns(); ++c) {
      state.running_mean[c] = (1.0 - rho) * state.running_mean[c] + rho * stats.mean[c];
      state.running_var[c] = (1.0 - rho) * state.running_var[c] + rho * stats.var[c];
    }
  } else {
    std::vector<double> inv_std(state.columns());
    for (std::size_t c = 0; c < state.columns(); ++c) {
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
    }
    standardized = ad::column_affine(raw, state.running_mean, inv_std);
  }
  return ad::add(ad::mul(standardized, gamma), beta);
}

}  // namespace fadingid
