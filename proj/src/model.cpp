#include "fadingid/model.hpp"

#include <algorithm>
#include <cmath>

#include "fadingid/errors.hpp"

namespace fadingid {

namespace {

constexpr std::size_t kEvalChunk = 2048;
constexpr double kInitLambda = 0.9;
constexpr double kInitKappa = 1.0;

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

std::vector<std::size_t> block_dims(std::size_t input, const BlockConfig& config) {
  std::vector<std::size_t> dims{input};
  dims.insert(dims.end(), config.hidden.begin(), config.hidden.end());
  dims.push_back(1);
  return dims;
}

ad::Var bank_features(const ModelVars& vars, BlockBankNormState& norm, const BatchWindows& windows,
                      NormMode mode) {
  if (windows.size() != vars.blocks.size()) {
    throw DimensionError("model: " + std::to_string(windows.size()) + " block windows for " +
                         std::to_string(vars.blocks.size()) + " blocks");
  }
  ad::Tape& tape = vars.theta.tape();
  std::vector<ad::Var> columns;
  columns.reserve(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    columns.push_back(block_forward(vars.blocks[i], tape.constant(windows[i])));
  }
  const ad::Var raw = ad::concat_columns(columns);
  return normalize_bank(raw, vars.gamma, vars.beta, norm, mode);
}

// Runs `fn(begin, end)` over row chunks and stacks the resulting row blocks.
template <typename Fn>
Tensor chunked_rows(std::size_t rows, std::size_t cols, Fn&& fn) {
  Tensor out(cols == 0 ? Shape{rows} : Shape{rows, cols});
  const std::size_t width = cols == 0 ? 1 : cols;
  for (std::size_t begin = 0; begin < rows; begin += kEvalChunk) {
    const std::size_t end = std::min(rows, begin + kEvalChunk);
    const Tensor part = fn(begin, end);
    std::copy(part.values().begin(), part.values().end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(begin * width));
  }
  return out;
}

BatchWindows range_windows(const RegressorMatrix& r, std::size_t begin, std::size_t end) {
  BatchWindows w;
  w.reserve(r.n_blocks + 1);
  for (std::size_t i = 0; i <= r.n_blocks; ++i) w.push_back(r.block_windows(i, begin, end));
  return w;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// ---- regressors ------------------------------------------------------------

Tensor RegressorMatrix::block_windows(std::size_t block, std::span<const std::size_t> rows_idx) const {
  const std::size_t width = 2 * p, k = n_blocks + 1;
  if (block >= k) throw DimensionError("block index " + std::to_string(block) + " >= " + std::to_string(k));
  Tensor out({rows_idx.size(), width});
  for (std::size_t r = 0; r < rows_idx.size(); ++r) {
    const double* src = windows.values().data() + (rows_idx[r] * k + block) * width;
    std::copy(src, src + width, out.values().data() + r * width);
  }
  return out;
}

Tensor RegressorMatrix::block_windows(std::size_t block, std::size_t begin, std::size_t end) const {
  const std::size_t width = 2 * p, k = n_blocks + 1;
  if (block >= k) throw DimensionError("block index " + std::to_string(block) + " >= " + std::to_string(k));
  Tensor out({end - begin, width});
  for (std::size_t r = begin; r < end; ++r) {
    const double* src = windows.values().data() + (r * k + block) * width;
    std::copy(src, src + width, out.values().data() + (r - begin) * width);
  }
  return out;
}

Tensor RegressorMatrix::gather_targets(std::span<const std::size_t> rows_idx) const {
  Tensor out({rows_idx.size()});
  for (std::size_t r = 0; r < rows_idx.size(); ++r) out[r] = targets[rows_idx[r]];
  return out;
}

RegressorMatrix build_regressors(const TimeSeriesDataset& data, std::size_t p, std::size_t n_blocks) {
  if (p == 0) throw ConfigError("block window length p must be positive");
  if (data.u.size() != data.y.size()) {
    throw DataError("dataset has " + std::to_string(data.u.size()) + " inputs but " +
                    std::to_string(data.y.size()) + " outputs");
  }
  const std::size_t horizon = n_blocks + p;
  const std::size_t n = data.size();
  if (n <= horizon) {
    throw DataError("series of length " + std::to_string(n) + " is too short: need at least " +
                    std::to_string(horizon + 1) + " samples for n_B=" + std::to_string(n_blocks) +
                    ", p=" + std::to_string(p));
  }
  const std::size_t rows = n - horizon, k = n_blocks + 1, width = 2 * p;
  RegressorMatrix r;
  r.p = p;
  r.n_blocks = n_blocks;
  r.first_time = horizon;
  r.windows = Tensor({rows, k, width});
  r.targets = Tensor({rows});
  for (std::size_t row = 0; row < rows; ++row) {
    const std::size_t t = horizon + row;
    r.targets[row] = data.y[t];
    for (std::size_t i = 0; i < k; ++i) {
      double* dst = r.windows.values().data() + (row * k + i) * width;
      for (std::size_t j = 1; j <= p; ++j) {
        dst[2 * (j - 1)] = data.y[t - i - j];
        dst[2 * (j - 1) + 1] = data.u[t - i - j];
      }
    }
  }
  return r;
}

// ---- fading model ----------------------------------------------------------

FadingModel FadingModel::init(std::size_t p, std::size_t n_blocks, const BlockConfig& blocks,
                              std::uint64_t seed, double initial_eta2) {
  if (p == 0) throw ConfigError("block window length p must be positive");
  if (!(initial_eta2 > 0.0)) throw ConfigError("initial eta^2 must be positive");
  FadingModel m;
  m.p = p;
  m.n_blocks = n_blocks;
  const std::size_t k = n_blocks + 1;
  const std::vector<std::size_t> dims = block_dims(2 * p, blocks);
  m.blocks.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    m.blocks.push_back(MLPBlock::init(dims, blocks.activation, mix_seed(seed, i)));
  }
  m.theta = Tensor({k});
  for (std::size_t i = 0; i < k; ++i) {
    m.theta[i] = std::sqrt(kInitKappa * std::pow(kInitLambda, static_cast<double>(i)));
  }
  m.norm = BlockBankNormState::fresh(k);
  m.raw_lambda = Tensor::scalar(std::log(kInitLambda / (1.0 - kInitLambda)));
  m.raw_kappa = Tensor::scalar(std::log(std::expm1(kInitKappa)));
  m.raw_log_eta2 = Tensor::scalar(std::log(initial_eta2));
  return m;
}

double FadingModel::lambda() const { return logistic(raw_lambda.item()); }
double FadingModel::kappa() const { return softplus(raw_kappa.item()); }
double FadingModel::eta2() const { return std::exp(raw_log_eta2.item()); }

std::vector<Tensor*> FadingModel::parameters() {
  std::vector<Tensor*> out;
  for (MLPBlock& b : blocks) {
    for (Layer& l : b.layers()) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
  }
  out.insert(out.end(), {&theta, &norm.gamma, &norm.beta, &raw_lambda, &raw_kappa, &raw_log_eta2});
  return out;
}

std::size_t FadingModel::parameter_count() const {
  std::size_t n = theta.size() + 5;
  for (const MLPBlock& b : blocks) n += b.parameter_count();
  return n;
}

std::vector<ad::Var> ModelVars::all() const {
  std::vector<ad::Var> out;
  for (const BlockVars& b : blocks) {
    for (std::size_t l = 0; l < b.weights.size(); ++l) {
      out.push_back(b.weights[l]);
      out.push_back(b.biases[l]);
    }
  }
  out.insert(out.end(), {theta, gamma, beta, raw_lambda, raw_kappa, raw_log_eta2});
  return out;
}

ModelVars bind_model(ad::Tape& tape, const FadingModel& model) {
  ModelVars v;
  v.blocks.reserve(model.blocks.size());
  for (const MLPBlock& b : model.blocks) v.blocks.push_back(bind_block(tape, b));
  v.theta = tape.leaf(model.theta);
  v.gamma = tape.leaf(model.norm.gamma);
  v.beta = tape.leaf(model.norm.beta);
  v.raw_lambda = tape.leaf(model.raw_lambda);
  v.raw_kappa = tape.leaf(model.raw_kappa);
  v.raw_log_eta2 = tape.leaf(model.raw_log_eta2);
  return v;
}

BatchWindows gather_batch(const RegressorMatrix& r, std::span<const std::size_t> rows) {
  BatchWindows w;
  w.reserve(r.n_blocks + 1);
  for (std::size_t i = 0; i <= r.n_blocks; ++i) w.push_back(r.block_windows(i, rows));
  return w;
}

void check_compatible(const FadingModel& model, const RegressorMatrix& r) {
  if (model.p != r.p || model.n_blocks != r.n_blocks) {
    throw ContractError("model (p=" + std::to_string(model.p) + ", n_B=" +
                        std::to_string(model.n_blocks) + ") does not match regressors (p=" +
                        std::to_string(r.p) + ", n_B=" + std::to_string(r.n_blocks) + ")");
  }
}

ad::Var block_feature_matrix(const ModelVars& vars, FadingModel& model, const BatchWindows& windows,
                             NormMode mode) {
  return bank_features(vars, model.norm, windows, mode);
}

ad::Var model_forward(const ModelVars& vars, FadingModel& model, const BatchWindows& windows,
                      NormMode mode) {
  return ad::matmul(bank_features(vars, model.norm, windows, mode), vars.theta);
}

Tensor block_feature_matrix(FadingModel& model, const RegressorMatrix& r, NormMode mode) {
  check_compatible(model, r);
  if (mode == NormMode::train) {
    ad::Tape tape;
    const ModelVars vars = bind_model(tape, model);
    return bank_features(vars, model.norm, range_windows(r, 0, r.rows()), mode).value();
  }
  return feature_matrix(model, r);
}

Tensor model_forward(FadingModel& model, const RegressorMatrix& r, NormMode mode) {
  check_compatible(model, r);
  if (mode == NormMode::train) {
    ad::Tape tape;
    const ModelVars vars = bind_model(tape, model);
    return model_forward(vars, model, range_windows(r, 0, r.rows()), mode).value();
  }
  return predict(model, r);
}

Tensor feature_matrix(const FadingModel& model, const RegressorMatrix& r) {
  check_compatible(model, r);
  BlockBankNormState norm = model.norm;
  return chunked_rows(r.rows(), model.bank_size(), [&](std::size_t begin, std::size_t end) {
    ad::Tape tape;
    const ModelVars vars = bind_model(tape, model);
    return bank_features(vars, norm, range_windows(r, begin, end), NormMode::eval).value();
  });
}

Tensor predict(const FadingModel& model, const RegressorMatrix& r) {
  check_compatible(model, r);
  BlockBankNormState norm = model.norm;
  return chunked_rows(r.rows(), 0, [&](std::size_t begin, std::size_t end) {
    ad::Tape tape;
    const ModelVars vars = bind_model(tape, model);
    const ad::Var f = bank_features(vars, norm, range_windows(r, begin, end), NormMode::eval);
    return ad::matmul(f, vars.theta).value();
  });
}

// ---- plain baseline --------------------------------------------------------

PlainDNN PlainDNN::init(std::size_t horizon, const BlockConfig& config, std::uint64_t seed,
                        double initial_eta2) {
  if (horizon == 0) throw ConfigError("plain DNN horizon must be positive");
  PlainDNN d;
  d.horizon = horizon;
  d.net = MLPBlock::init(block_dims(2 * horizon, config), config.activation, mix_seed(seed, 0));
  d.raw_log_eta2 = Tensor::scalar(std::log(initial_eta2));
  return d;
}

std::vector<Tensor*> PlainDNN::parameters() {
  std::vector<Tensor*> out;
  for (Layer& l : net.layers()) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  out.push_back(&raw_log_eta2);
  return out;
}

ad::Var plain_forward(const BlockVars& net, const ad::Var& full_windows) {
  const ad::Var out = block_forward(net, full_windows);
  return ad::reshape(out, {out.value().dim(0)});
}

Tensor plain_forward(const PlainDNN& d, const Tensor& full_windows) {
  if (full_windows.rank() != 2 || full_windows.dim(1) != 2 * d.horizon) {
    throw DimensionError("plain_forward: windows " + shape_string(full_windows.shape()) +
                         " do not match horizon " + std::to_string(d.horizon));
  }
  return block_forward(d.net, full_windows).reshaped({full_windows.dim(0)});
}

Tensor predict(const PlainDNN& d, const RegressorMatrix& r) {
  if (r.n_blocks != 0 || r.p != d.horizon) {
    throw ContractError("plain DNN with horizon " + std::to_string(d.horizon) +
                        " needs regressors with p=T and n_B=0");
  }
  return chunked_rows(r.rows(), 0, [&](std::size_t begin, std::size_t end) {
    return plain_forward(d, r.block_windows(0, begin, end));
  });
}

std::size_t mlp_parameter_count(const std::vector<std::size_t>& dims) {
  std::size_t n = 0;
  for (std::size_t l = 1; l < dims.size(); ++l) n += (dims[l - 1] + 1) * dims[l];
  return n;
}

}  // namespace fadingid
