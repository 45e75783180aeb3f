#include "fadingid/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fadingid/errors.hpp"

namespace fadingid {

namespace {

void check_shapes(std::span<Tensor* const> params, std::span<const Tensor> grads,
                  std::vector<Tensor>& slots, const char* who) {
  if (params.size() != grads.size()) {
    throw ContractError(std::string(who) + ": " + std::to_string(params.size()) +
                        " parameters but " + std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape()) {
      throw ContractError(std::string(who) + ": parameter " + std::to_string(i) + " has shape " +
                          shape_string(params[i]->shape()) + " but gradient " +
                          shape_string(grads[i].shape()));
    }
  }
  if (slots.empty()) {
    for (Tensor* p : params) slots.emplace_back(p->shape());
  } else if (slots.size() != params.size()) {
    throw ContractError(std::string(who) + ": optimizer state tracks " +
                        std::to_string(slots.size()) + " parameters, got " +
                        std::to_string(params.size()));
  }
}

}  // namespace

void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, SgdState& state) {
  check_shapes(params, grads, state.velocity, "sgd_step");
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::span<double> p = params[i]->values();
    std::span<double> v = state.velocity[i].values();
    std::span<const double> g = grads[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = state.momentum * v[j] + g[j];
      p[j] -= state.lr * v[j];
    }
  }
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state) {
  check_shapes(params, grads, state.m, "adam_step");
  if (state.v.empty()) {
    for (Tensor* p : params) state.v.emplace_back(p->shape());
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::span<double> p = params[i]->values();
    std::span<double> m = state.m[i].values();
    std::span<double> v = state.v[i].values();
    std::span<const double> g = grads[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      p[j] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

MinibatchSampler::MinibatchSampler(std::size_t rows, std::size_t batch_size, std::uint64_t seed,
                                   std::size_t min_batch)
    : rows_(rows), batch_size_(batch_size), min_batch_(min_batch), rng_(seed), order_(rows) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (rows == 0) throw ContractError("sampler: no rows");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
}

std::vector<std::vector<std::size_t>> MinibatchSampler::next_epoch() {
  std::shuffle(order_.begin(), order_.end(), rng_);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t begin = 0; begin < rows_; begin += batch_size_) {
    const std::size_t end = std::min(rows_, begin + batch_size_);
    std::vector<std::size_t> batch(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                                   order_.begin() + static_cast<std::ptrdiff_t>(end));
    if (batch.size() < min_batch_ && !batches.empty()) {
      batches.back().insert(batches.back().end(), batch.begin(), batch.end());
    } else {
      batches.push_back(std::move(batch));
    }
  }
  return batches;
}

namespace {

class Stepper {
 public:
  explicit Stepper(const OptimizerConfig& c) : kind_(c.kind) {
    adam_.lr = c.lr;
    adam_.beta1 = c.beta1;
    adam_.beta2 = c.beta2;
    adam_.eps = c.eps;
    sgd_.lr = c.lr;
    sgd_.momentum = c.momentum;
  }
  void step(std::span<Tensor* const> params, std::span<const Tensor> grads) {
    if (kind_ == OptimizerKind::adam) {
      adam_step(params, grads, adam_);
    } else {
      sgd_step(params, grads, sgd_);
    }
  }

 private:
  OptimizerKind kind_;
  AdamState adam_;
  SgdState sgd_;
};

void guard_finite(const LossBreakdown& b, std::size_t epoch) {
  const std::pair<const char*, double> terms[] = {{"fit", b.fit},
                                                  {"theta_prior", b.theta_prior},
                                                  {"logdet", b.logdet_term},
                                                  {"so", b.so_term},
                                                  {"total", b.total}};
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) {
      std::ostringstream os;
      os << "training diverged at epoch " << epoch << ": term '" << name << "' = " << value;
      throw DivergenceError(os.str());
    }
  }
}

void accumulate(LossBreakdown& acc, const LossBreakdown& b) {
  acc.fit += b.fit;
  acc.theta_prior += b.theta_prior;
  acc.logdet_term += b.logdet_term;
  acc.so_term += b.so_term;
  acc.total += b.total;
}

void divide(LossBreakdown& acc, double n) {
  acc.fit /= n;
  acc.theta_prior /= n;
  acc.logdet_term /= n;
  acc.so_term /= n;
  acc.total /= n;
}

bool evaluate_now(const TrainConfig& config, std::size_t epoch) {
  if (epoch == config.epochs) return true;
  return config.eval_every != 0 && epoch % config.eval_every == 0;
}

void fill_parameters(EpochLog& row, const FadingModel& m) {
  row.lambda = m.lambda();
  row.kappa = m.kappa();
  row.eta = std::sqrt(m.eta2());
}

void evaluate(EpochLog& row, const FadingModel& m, const RegressorMatrix& train_rows,
              const RegressorMatrix* validation) {
  const Tensor fit = predict(m, train_rows);
  row.train_eta_hat = eta_hat(train_rows.targets.values(), fit.values());
  if (validation != nullptr) {
    const Tensor val = predict(m, *validation);
    row.val_eta_hat = eta_hat(validation->targets.values(), val.values());
    row.relevance = block_relevance(m, *validation);
  }
}

void evaluate(EpochLog& row, const PlainDNN& m, const RegressorMatrix& train_rows,
              const RegressorMatrix* validation) {
  const Tensor fit = predict(m, train_rows);
  row.train_eta_hat = eta_hat(train_rows.targets.values(), fit.values());
  if (validation != nullptr) {
    const Tensor val = predict(m, *validation);
    row.val_eta_hat = eta_hat(validation->targets.values(), val.values());
  }
}

}  // namespace

TrainingLog train(FadingModel& model, const RegressorMatrix& train_rows,
                  const RegressorMatrix* validation, const TrainConfig& config) {
  check_compatible(model, train_rows);
  if (validation != nullptr) check_compatible(model, *validation);
  if (train_rows.rows() < 2) throw DataError("training needs at least 2 regressor rows");

  TrainingLog log;
  EpochLog initial;
  fill_parameters(initial, model);
  if (evaluate_now(config, 0)) evaluate(initial, model, train_rows, validation);
  log.epochs.push_back(initial);

  MinibatchSampler sampler(train_rows.rows(), config.batch_size, config.seed, 2);
  Stepper stepper(config.optimizer);
  const std::vector<Tensor*> params = model.parameters();
  std::vector<Tensor> grads;
  grads.reserve(params.size());

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochLog row;
    row.epoch = epoch;
    double sq_err = 0.0;
    const auto batches = sampler.next_epoch();
    for (const std::vector<std::size_t>& batch : batches) {
      LossWeights weights;
      weights.so_weight = config.so_weight;
      weights.prior_scale =
          static_cast<double>(batch.size()) / static_cast<double>(train_rows.rows());
      ad::Tape tape;
      const ModelVars vars = bind_model(tape, model);
      const Tensor targets = train_rows.gather_targets(batch);
      const Objective obj =
          objective(vars, model, gather_batch(train_rows, batch), targets, weights, NormMode::train);
      guard_finite(obj.breakdown, epoch);
      accumulate(row.loss, obj.breakdown);
      const Tensor& pred = obj.predictions.value();
      for (std::size_t i = 0; i < batch.size(); ++i) {
        sq_err += (targets[i] - pred[i]) * (targets[i] - pred[i]);
      }
      const ad::Gradients g = tape.backward(obj.total);
      grads.clear();
      for (const ad::Var& v : vars.all()) grads.push_back(g[v]);
      stepper.step(params, grads);
    }
    divide(row.loss, static_cast<double>(batches.size()));
    row.batch_eta_hat = std::sqrt(sq_err / static_cast<double>(train_rows.rows()));
    fill_parameters(row, model);
    if (evaluate_now(config, epoch)) evaluate(row, model, train_rows, validation);
    log.epochs.push_back(std::move(row));
  }
  return log;
}

TrainingLog train(PlainDNN& model, const RegressorMatrix& train_rows,
                  const RegressorMatrix* validation, const TrainConfig& config) {
  if (train_rows.n_blocks != 0 || train_rows.p != model.horizon) {
    throw ContractError("plain DNN needs regressors with p=T and n_B=0");
  }
  TrainingLog log;
  EpochLog initial;
  initial.eta = std::exp(0.5 * model.raw_log_eta2.item());
  if (evaluate_now(config, 0)) evaluate(initial, model, train_rows, validation);
  log.epochs.push_back(initial);

  MinibatchSampler sampler(train_rows.rows(), config.batch_size, config.seed, 1);
  Stepper stepper(config.optimizer);
  const std::vector<Tensor*> params = model.parameters();
  std::vector<Tensor> grads;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochLog row;
    row.epoch = epoch;
    double sq_err = 0.0;
    const auto batches = sampler.next_epoch();
    for (const std::vector<std::size_t>& batch : batches) {
      const double prior_scale =
          static_cast<double>(batch.size()) / static_cast<double>(train_rows.rows());
      ad::Tape tape;
      const BlockVars net = bind_block(tape, model.net);
      const ad::Var raw_log_eta2 = tape.leaf(model.raw_log_eta2);
      const Tensor targets = train_rows.gather_targets(batch);
      const ad::Var pred = plain_forward(net, tape.constant(train_rows.block_windows(0, batch)));
      const ad::Var resid = ad::sub(tape.constant(targets), pred);
      const ad::Var fit =
          ad::add(ad::div(ad::sum(ad::square(resid)), ad::exp(raw_log_eta2)),
                  ad::scale(raw_log_eta2, static_cast<double>(batch.size())));
      ad::Var total = fit;
      LossBreakdown b;
      b.fit = fit.item();
      if (config.so_weight != 0.0) {
        const ad::Var so = ad::scale(so_penalty(net), config.so_weight * prior_scale);
        b.so_term = so.item();
        total = ad::add(total, so);
      }
      b.total = total.item();
      guard_finite(b, epoch);
      accumulate(row.loss, b);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const double d = targets[i] - pred.value()[i];
        sq_err += d * d;
      }
      const ad::Gradients g = tape.backward(total);
      grads.clear();
      for (std::size_t l = 0; l < net.weights.size(); ++l) {
        grads.push_back(g[net.weights[l]]);
        grads.push_back(g[net.biases[l]]);
      }
      grads.push_back(g[raw_log_eta2]);
      stepper.step(params, grads);
    }
    divide(row.loss, static_cast<double>(batches.size()));
    row.batch_eta_hat = std::sqrt(sq_err / static_cast<double>(train_rows.rows()));
    row.eta = std::exp(0.5 * model.raw_log_eta2.item());
    if (evaluate_now(config, epoch)) evaluate(row, model, train_rows, validation);
    log.epochs.push_back(std::move(row));
  }
  return log;
}

}  // namespace fadingid
