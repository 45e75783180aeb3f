#include <doctest.h>

#include <cmath>
#include <random>

#include "fadingid/blocks.hpp"
#include "fadingid/errors.hpp"
#include "oracles.hpp"

using namespace fadingid;

namespace {

Tensor forward_values(const MLPBlock& b, const Tensor& window) {
  ad::Tape tape;
  return block_forward(bind_block(tape, b), tape.constant(window)).value();
}

ad::Var normalize(ad::Tape& tape, const Tensor& raw, BlockBankNormState& s, NormMode mode) {
  return normalize_bank(tape.constant(raw), tape.constant(s.gamma), tape.constant(s.beta), s, mode);
}

}  // namespace

TEST_SUITE("blocks") {
  TEST_CASE("initialization") {
    CHECK(MLPBlock::init({4, 100, 100, 100, 100, 100, 1}, Activation::tanh, 1).parameter_count() == 41001);
    const MLPBlock b = MLPBlock::init({2, 1}, Activation::tanh, 9);
    for (double v : b.layers()[0].bias.values()) CHECK(v == 0.0);
    const MLPBlock x = MLPBlock::init({6, 8, 8, 1}, Activation::elu, 42);
    const MLPBlock y = MLPBlock::init({6, 8, 8, 1}, Activation::elu, 42);
    const MLPBlock z = MLPBlock::init({6, 8, 8, 1}, Activation::elu, 43);
    for (std::size_t l = 0; l < x.layers().size(); ++l) {
      CHECK(x.layers()[l].weight == y.layers()[l].weight);
      CHECK(x.layers()[l].bias == y.layers()[l].bias);
      const double bound = std::sqrt(1.0 / static_cast<double>(x.layers()[l].weight.dim(1)));
      for (double v : x.layers()[l].weight.values()) CHECK(std::abs(v) <= bound);
    }
    CHECK_FALSE(x.layers()[0].weight == z.layers()[0].weight);
    CHECK_THROWS_AS(MLPBlock::init({4, 0, 1}, Activation::tanh, 1), ConfigError);
    CHECK_THROWS_AS(MLPBlock({{Tensor({3, 4}), Tensor({3})}, {Tensor({1, 2}), Tensor({1})}}, Activation::tanh),
                    DimensionError);
  }

  TEST_CASE("forward examples") {
    MLPBlock zero = MLPBlock::init({4, 5, 1}, Activation::tanh, 1);
    for (Layer& l : zero.layers()) l.weight = Tensor(l.weight.shape(), 0.0);
    zero.layers().back().bias = Tensor::vector({0.75});
    std::mt19937_64 rng(1);
    const Tensor out = forward_values(zero, oracle::random_tensor({3, 4}, rng));
    for (double v : out.values()) CHECK(v == 0.75);

    const MLPBlock lin({{Tensor::matrix(1, 4, {1, 1, 1, 1}), Tensor::vector({0.0})}}, Activation::relu);
    CHECK(forward_values(lin, Tensor::matrix(1, 4, {1, 2, 3, 4})).item() == 10.0);
    CHECK(block_forward(lin, Tensor::matrix(1, 4, {1, 2, 3, 4})).item() == 10.0);
    CHECK_THROWS_AS(forward_values(lin, Tensor({1, 3})), DimensionError);
  }

  TEST_CASE("forward matches a straight-line evaluation") {
    std::mt19937_64 rng(2);
    for (Activation a : {Activation::tanh, Activation::relu, Activation::elu, Activation::sigmoid}) {
      const MLPBlock b = MLPBlock::init({4, 7, 5, 1}, a, 3);
      const Tensor w = oracle::random_tensor({6, 4}, rng);
      const Tensor out = forward_values(b, w);
      const Tensor plain = block_forward(b, w);
      for (std::size_t r = 0; r < 6; ++r) {
        const std::vector<double> row(w.values().begin() + r * 4, w.values().begin() + r * 4 + 4);
        CHECK(out[r] == doctest::Approx(oracle::block_value(b, row)).epsilon(1e-14));
        CHECK(out[r] == plain[r]);
      }
    }
  }

  TEST_CASE("soft orthogonality") {
    const MLPBlock orth({{Tensor::matrix(3, 2, {1, 0, 0, 1, 0, 0}), Tensor({3})},
                         {Tensor::matrix(1, 3, {0, 1, 0}), Tensor({1})}},
                        Activation::tanh);
    // The 1 x 3 output layer has rank 1, so W^T W = e2 e2^T and the penalty is 2.
    CHECK(so_penalty(orth) == 2.0);
    const MLPBlock square_orth({{Tensor::matrix(2, 2, {0.6, 0.8, -0.8, 0.6}), Tensor({2})}}, Activation::tanh);
    CHECK(so_penalty(square_orth) == doctest::Approx(0.0).epsilon(1e-30));
    const MLPBlock two({{Tensor::matrix(2, 2, {2, 0, 0, 2}), Tensor({2})}}, Activation::tanh);
    CHECK(so_penalty(two) == 18.0);

    // Orthonormal factors from a QR decomposition.
    std::mt19937_64 rng(4);
    const Eigen::MatrixXd g = oracle::to_eigen(oracle::random_tensor({6, 4}, rng));
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ() * Eigen::MatrixXd::Identity(6, 4);
    Tensor wq({6, 4});
    for (int r = 0; r < 6; ++r) {
      for (int c = 0; c < 4; ++c) wq.at(r, c) = q(r, c);
    }
    CHECK(so_penalty(MLPBlock({{wq, Tensor({6})}}, Activation::tanh)) < 1e-28);

    for (int trial = 0; trial < 5; ++trial) {
      const MLPBlock b = MLPBlock::init({4, 9, 3, 1}, Activation::tanh, 100 + trial);
      const double want = oracle::so_penalty(b);
      CHECK(std::abs(so_penalty(b) - want) <= 1e-12 * want);
      ad::Tape tape;
      CHECK(std::abs(so_penalty(bind_block(tape, b)).item() - want) <= 1e-12 * want);
      CHECK(so_penalty(b) >= 0.0);
    }
  }

  TEST_CASE("so penalty gradient") {
    const MLPBlock b = MLPBlock::init({3, 4, 1}, Activation::tanh, 7);
    ad::Tape tape;
    const BlockVars v = bind_block(tape, b);
    const ad::Gradients g = tape.backward(so_penalty(v));
    const Tensor fd = oracle::finite_difference(
        [&](const Tensor& w) {
          MLPBlock c = b;
          c.layers()[0].weight = w;
          return so_penalty(c);
        },
        b.layers()[0].weight);
    CHECK(oracle::max_rel_err(g[v.weights[0]], fd) < 1e-6);
    CHECK(g[v.biases[0]] == Tensor({4}, 0.0));
  }

  TEST_CASE("train-mode normalization") {
    std::mt19937_64 rng(5);
    Tensor raw = oracle::random_tensor({50, 3}, rng);
    for (std::size_t r = 0; r < 50; ++r) raw.at(r, 1) = 3.25;  // constant column
    BlockBankNormState s = BlockBankNormState::fresh(3);
    s.beta = Tensor::scalar(0.4);
    ad::Tape tape;
    const Tensor out = normalize(tape, raw, s, NormMode::train).value();
    for (std::size_t r = 0; r < 50; ++r) CHECK(out.at(r, 1) == 0.4);

    BlockBankNormState unit = BlockBankNormState::fresh(3);
    Tensor wide = oracle::random_tensor({64, 3}, rng, -5.0, 9.0);
    const Tensor z = normalize(tape, wide, unit, NormMode::train).value();
    for (std::size_t c = 0; c < 3; ++c) {
      double mean = 0.0, var = 0.0, raw_mean = 0.0, raw_var = 0.0;
      for (std::size_t r = 0; r < 64; ++r) mean += z.at(r, c), raw_mean += wide.at(r, c);
      mean /= 64, raw_mean /= 64;
      for (std::size_t r = 0; r < 64; ++r) {
        var += (z.at(r, c) - mean) * (z.at(r, c) - mean);
        raw_var += (wide.at(r, c) - raw_mean) * (wide.at(r, c) - raw_mean);
      }
      var /= 64, raw_var /= 64;
      CHECK(std::abs(mean) < 1e-12);
      CHECK(std::abs(var - raw_var / (raw_var + 1e-5)) < 1e-9);
      CHECK(std::abs(var - 1.0) < 1e-4);
    }

    BlockBankNormState tiny = BlockBankNormState::fresh(3);
    CHECK_THROWS_AS(normalize(tape, Tensor({1, 3}), tiny, NormMode::train), ContractError);
    CHECK_THROWS_AS(normalize(tape, Tensor({4, 2}), tiny, NormMode::train), DimensionError);
  }

  TEST_CASE("normalization is invariant to a common scale") {
    std::mt19937_64 rng(6);
    const Tensor raw = oracle::random_tensor({40, 4}, rng);
    // Exact up to the eps in the denominator, so keep the variances well above it.
    for (double s : {10.0, 1000.0}) {
      Tensor scaled = raw;
      for (double& v : scaled.storage()) v *= s;
      BlockBankNormState a = BlockBankNormState::fresh(4), b = BlockBankNormState::fresh(4);
      ad::Tape tape;
      const Tensor x = normalize(tape, raw, a, NormMode::train).value();
      const Tensor y = normalize(tape, scaled, b, NormMode::train).value();
      for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(x[i] - y[i]) < 2e-5);
    }
  }

  TEST_CASE("running statistics follow an exponential moving average") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> d(2.0, 0.5);
    BlockBankNormState s = BlockBankNormState::fresh(2);
    double ema_mean = 0.0, ema_var = 1.0;
    for (int step = 0; step < 200; ++step) {
      Tensor raw({32, 2});
      for (double& v : raw.storage()) v = d(rng);
      double mean = 0.0, var = 0.0;
      for (std::size_t r = 0; r < 32; ++r) mean += raw.at(r, 0);
      mean /= 32;
      for (std::size_t r = 0; r < 32; ++r) var += (raw.at(r, 0) - mean) * (raw.at(r, 0) - mean);
      var /= 32;
      ema_mean = 0.9 * ema_mean + 0.1 * mean;
      ema_var = 0.9 * ema_var + 0.1 * var;
      ad::Tape tape;
      normalize(tape, raw, s, NormMode::train);
    }
    CHECK(s.running_mean[0] == doctest::Approx(ema_mean).epsilon(1e-12));
    CHECK(s.running_var[0] == doctest::Approx(ema_var).epsilon(1e-12));
    CHECK(std::abs(s.running_mean[0] - 2.0) < 0.1);
    CHECK(s.running_var[0] >= 0.0);
  }

  TEST_CASE("eval mode is pure") {
    std::mt19937_64 rng(8);
    BlockBankNormState s = BlockBankNormState::fresh(3);
    s.running_mean = {0.5, -1.0, 2.0};
    s.running_var = {4.0, 0.25, 1.0};
    s.gamma = Tensor::scalar(1.5);
    const BlockBankNormState before = s;
    const Tensor raw = oracle::random_tensor({5, 3}, rng);
    ad::Tape tape;
    const Tensor a = normalize(tape, raw, s, NormMode::eval).value();
    const Tensor b = normalize(tape, raw, s, NormMode::eval).value();
    CHECK(a == b);
    CHECK(s.running_mean == before.running_mean);
    CHECK(s.running_var == before.running_var);
    for (std::size_t r = 0; r < 5; ++r) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double want = (raw.at(r, c) - s.running_mean[c]) / std::sqrt(s.running_var[c] + 1e-5) * 1.5;
        CHECK(a.at(r, c) == doctest::Approx(want).epsilon(1e-14));
      }
    }
  }

  TEST_CASE("activation names round-trip") {
    for (Activation a : {Activation::tanh, Activation::relu, Activation::elu, Activation::sigmoid}) {
      CHECK(parse_activation(activation_name(a)) == a);
    }
    CHECK_THROWS_AS(parse_activation("swish"), ConfigError);
  }
}
