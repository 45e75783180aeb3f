#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "fadingid/errors.hpp"
#include "fadingid/metrics.hpp"
#include "oracles.hpp"

using namespace fadingid;

namespace {

FadingModel mini_model(std::size_t p, std::size_t n_blocks, std::uint64_t seed) {
  BlockConfig c;
  c.hidden = {6, 4};
  FadingModel m = FadingModel::init(p, n_blocks, c, seed);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (std::size_t i = 0; i < m.bank_size(); ++i) {
    m.theta[i] = u(rng);
    m.norm.running_mean[i] = 0.1 * u(rng);
  }
  m.norm.beta = Tensor::scalar(0.05);
  return m;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("eta_hat examples") {
    const std::vector<double> y{0.3, -1.2, 2.5};
    CHECK(eta_hat(y, y) == 0.0);
    CHECK(eta_hat(std::vector<double>{1.0, -1.0}, std::vector<double>{0.0, 0.0}) == 1.0);
    CHECK_THROWS_AS(eta_hat(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), ContractError);
    CHECK_THROWS_AS(eta_hat(std::vector<double>{}, std::vector<double>{}), ContractError);
  }

  TEST_CASE("eta_hat is invariant to joint permutation") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g;
    std::vector<double> y(500), yhat(500);
    for (std::size_t i = 0; i < 500; ++i) y[i] = g(rng), yhat[i] = g(rng);
    const double base = eta_hat(y, yhat);
    std::vector<std::size_t> idx(500);
    for (std::size_t i = 0; i < 500; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<double> py, pyhat;
    for (std::size_t i : idx) py.push_back(y[i]), pyhat.push_back(yhat[i]);
    CHECK(eta_hat(py, pyhat) == doctest::Approx(base).epsilon(1e-14));
    CHECK(base >= 0.0);
  }

  TEST_CASE("analytic predictor reaches the noise floor on system 4") {
    const SystemSpec s4 = SystemSpec::get(4);
    const TimeSeriesDataset d = simulate(s4, 20000, 99);
    const std::vector<double> pred = analytic_predictions(s4, d);
    const std::vector<double> y(d.y.begin() + static_cast<std::ptrdiff_t>(s4.max_lag()), d.y.end());
    CHECK(std::abs(eta_hat(y, pred) - 0.14) < 0.02 * 0.14);
  }

  TEST_CASE("relevance examples") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g;
    TimeSeriesDataset d;
    for (int t = 0; t < 80; ++t) d.y.push_back(g(rng)), d.u.push_back(g(rng));
    FadingModel m = mini_model(2, 4, 3);
    const RegressorMatrix r = build_regressors(d, 2, 4);

    FadingModel zero = m;
    zero.theta = Tensor({5}, 0.0);
    const BlockRelevance z = block_relevance(zero, r);
    double rms = 0.0;
    for (double v : r.targets.values()) rms += v * v;
    rms = std::sqrt(rms / static_cast<double>(r.rows()));
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(z.importance[i] == 0.0);
      CHECK(z.truncated_std[i] == doctest::Approx(rms).epsilon(1e-14));
    }

    const BlockRelevance rel = block_relevance(m, r);
    REQUIRE(rel.importance.size() == 5);
    REQUIRE(rel.truncated_std.size() == 5);
    CHECK(rel.truncated_std.back() == eta_hat(r.targets.values(), predict(m, r).values()));
    for (double v : rel.importance) CHECK(v >= 0.0);

    const FadingModel single = mini_model(3, 0, 4);
    const RegressorMatrix r0 = build_regressors(d, 3, 0);
    CHECK(block_relevance(single, r0).truncated_std[0] == eta_hat(r0.targets.values(), predict(single, r0).values()));
  }

  TEST_CASE("relevance matches a straight-line recomputation") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    TimeSeriesDataset d;
    for (int t = 0; t < 60; ++t) d.y.push_back(g(rng)), d.u.push_back(g(rng));
    const FadingModel m = mini_model(2, 3, 6);
    const RegressorMatrix r = build_regressors(d, 2, 3);
    const auto bank = oracle::eval_bank(m, r);
    std::vector<double> imp(4, 0.0), trunc(4, 0.0);
    for (std::size_t t = 0; t < r.rows(); ++t) {
      double partial = 0.0;
      for (std::size_t i = 0; i < 4; ++i) {
        imp[i] += std::abs(m.theta[i] * bank[t][i]);
        partial += m.theta[i] * bank[t][i];
        trunc[i] += (r.targets[t] - partial) * (r.targets[t] - partial);
      }
    }
    const BlockRelevance rel = block_relevance(m, r);
    const double n = static_cast<double>(r.rows());
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(oracle::rel_err(rel.importance[i], imp[i] / n) < 1e-12);
      CHECK(oracle::rel_err(rel.truncated_std[i], std::sqrt(trunc[i] / n)) < 1e-12);
    }
  }
}
