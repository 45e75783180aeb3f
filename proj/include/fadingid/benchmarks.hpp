#pragma once

// The four nonlinear benchmark systems and their trajectory generator.
//
//   1: y = exp(-0.1 y1^2) (2 y1 - y2) + e
//   2: y = -2 y1 1(y1 < 0) + 0.4 y1 1(y1 >= 0) + e
//   3: y = 0.5 y1 - 0.05 y2^2 + u1^2 + 0.8 u2 + 0.22 e
//   4: y = 0.8 y1 + u1 - 0.3 u1^3 + 0.25 u1 u2 - 0.3 u2 + 0.25 u2^3
//          - 0.2 u2 u3 - 0.4 u3 + 0.14 e
//
// with yk = y_{t-k}, uk = u_{t-k}, u and e i.i.d. N(0, 1).

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fadingid {

struct SystemSpec {
  int id = 4;
  bool has_input = true;
  std::size_t y_lags = 1;
  std::size_t u_lags = 3;
  double eta_true = 0.14;

  /// Throws ConfigError for ids outside 1..4.
  static SystemSpec get(int id);
  std::size_t max_lag() const noexcept { return y_lags > u_lags ? y_lags : u_lags; }
};

/// Innovation standard deviation of a system.
double eta_true(const SystemSpec& spec) noexcept;

/// One step of the system. Histories are most-recent-first:
/// y_past[0] = y_{t-1}, y_past[1] = y_{t-2}, ... Throws ContractError when a
/// history is shorter than the system's lags.
double step(const SystemSpec& spec, std::span<const double> y_past,
            std::span<const double> u_past, double e);

struct TimeSeriesDataset {
  int system_id = 0;
  std::uint64_t seed = 0;
  std::size_t burn_in = 0;
  std::vector<double> u;
  std::vector<double> y;

  std::size_t size() const noexcept { return y.size(); }
};

struct SimulationOptions {
  std::size_t burn_in = 100;
  bool noise = true;   // e_t ~ N(0,1); off means e_t = 0
  bool input = true;   // u_t ~ N(0,1) for systems with an input; off means u_t = 0
  double bound = 1e6;  // |y_t| above this raises InstabilityError
};

/// Name of the pseudo-random scheme, recorded in dataset metadata.
std::string rng_description();

/// Length-`n` trajectory after discarding `burn_in` samples, starting from
/// rest. Deterministic in (spec, n, seed, options).
TimeSeriesDataset simulate(const SystemSpec& spec, std::size_t n, std::uint64_t seed,
                           const SimulationOptions& options = {});

/// The unit-variance innovation draws e_t used by `simulate` for the retained
/// samples, regenerated from the seed.
std::vector<double> innovation_draws(const SystemSpec& spec, std::size_t n, std::uint64_t seed,
                                     std::size_t burn_in);

/// Noise-free one-step prediction for every t >= max_lag (the optimal
/// predictor). Element i corresponds to time t = max_lag + i.
std::vector<double> analytic_predictions(const SystemSpec& spec, const TimeSeriesDataset& data);

}  // namespace fadingid
