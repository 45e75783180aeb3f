#include "fadingid/benchmarks.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "fadingid/errors.hpp"

namespace fadingid {

namespace {

// Independent engines for u and e, keyed by (seed, stream).
std::mt19937_64 stream_engine(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32), stream, 0x66616469u};
  return std::mt19937_64(seq);
}

constexpr std::uint32_t kInputStream = 1;
constexpr std::uint32_t kNoiseStream = 2;

}  // namespace

SystemSpec SystemSpec::get(int id) {
  switch (id) {
    case 1:
      return SystemSpec{1, false, 2, 0, 1.0};
    case 2:
      return SystemSpec{2, false, 1, 0, 1.0};
    case 3:
      return SystemSpec{3, true, 2, 2, 0.22};
    case 4:
      return SystemSpec{4, true, 1, 3, 0.14};
    default:
      throw ConfigError("unknown system id " + std::to_string(id) + " (expected 1..4)");
  }
}

double eta_true(const SystemSpec& spec) noexcept { return spec.eta_true; }

double step(const SystemSpec& spec, std::span<const double> y_past,
            std::span<const double> u_past, double e) {
  if (y_past.size() < spec.y_lags || u_past.size() < spec.u_lags) {
    throw ContractError("system " + std::to_string(spec.id) + " needs " +
                        std::to_string(spec.y_lags) + " output and " +
                        std::to_string(spec.u_lags) + " input lags, got " +
                        std::to_string(y_past.size()) + " and " + std::to_string(u_past.size()));
  }
  switch (spec.id) {
    case 1: {
      const double y1 = y_past[0], y2 = y_past[1];
      return std::exp(-0.1 * y1 * y1) * (2.0 * y1 - y2) + e;
    }
    case 2: {
      const double y1 = y_past[0];
      return (y1 < 0.0 ? -2.0 * y1 : 0.4 * y1) + e;
    }
    case 3: {
      const double y1 = y_past[0], y2 = y_past[1], u1 = u_past[0], u2 = u_past[1];
      return 0.5 * y1 - 0.05 * y2 * y2 + u1 * u1 + 0.8 * u2 + 0.22 * e;
    }
    case 4: {
      const double y1 = y_past[0], u1 = u_past[0], u2 = u_past[1], u3 = u_past[2];
      return 0.8 * y1 + u1 - 0.3 * u1 * u1 * u1 + 0.25 * u1 * u2 - 0.3 * u2 +
             0.25 * u2 * u2 * u2 - 0.2 * u2 * u3 - 0.4 * u3 + 0.14 * e;
    }
    default:
      throw ConfigError("unknown system id " + std::to_string(spec.id));
  }
}

std::string rng_description() {
  return "mt19937_64 per stream (seed_seq{seed_lo, seed_hi, stream, tag}; u=1, e=2), "
         "std::normal_distribution";
}

TimeSeriesDataset simulate(const SystemSpec& spec, std::size_t n, std::uint64_t seed,
                           const SimulationOptions& options) {
  if (n == 0) throw ContractError("simulate: N must be at least 1");
  const std::size_t total = n + options.burn_in;
  const std::size_t lag = 3;
  std::vector<double> y(total + lag, 0.0), u(total + lag, 0.0);

  std::mt19937_64 u_rng = stream_engine(seed, kInputStream);
  std::mt19937_64 e_rng = stream_engine(seed, kNoiseStream);
  std::normal_distribution<double> u_dist(0.0, 1.0);
  std::normal_distribution<double> e_dist(0.0, 1.0);

  for (std::size_t k = 0; k < total; ++k) {
    const std::size_t t = k + lag;
    const double ut = spec.has_input && options.input ? u_dist(u_rng) : 0.0;
    const double et = e_dist(e_rng);
    const double y_past[3] = {y[t - 1], y[t - 2], y[t - 3]};
    const double u_past[3] = {u[t - 1], u[t - 2], u[t - 3]};
    const double yt = step(spec, y_past, u_past, options.noise ? et : 0.0);
    if (!std::isfinite(yt) || std::abs(yt) > options.bound) {
      std::ostringstream msg;
      msg << "simulate: system " << spec.id << " output " << yt << " exceeds bound " << options.bound
          << " at step " << k;
      throw InstabilityError(msg.str(), k);
    }
    y[t] = yt;
    u[t] = ut;
  }

  TimeSeriesDataset data;
  data.system_id = spec.id;
  data.seed = seed;
  data.burn_in = options.burn_in;
  data.y.assign(y.begin() + static_cast<std::ptrdiff_t>(lag + options.burn_in), y.end());
  data.u.assign(u.begin() + static_cast<std::ptrdiff_t>(lag + options.burn_in), u.end());
  return data;
}

std::vector<double> innovation_draws(const SystemSpec& spec, std::size_t n, std::uint64_t seed,
                                     std::size_t burn_in) {
  std::mt19937_64 u_rng = stream_engine(seed, kInputStream);
  std::mt19937_64 e_rng = stream_engine(seed, kNoiseStream);
  std::normal_distribution<double> u_dist(0.0, 1.0);
  std::normal_distribution<double> e_dist(0.0, 1.0);
  std::vector<double> e;
  e.reserve(n);
  for (std::size_t k = 0; k < n + burn_in; ++k) {
    if (spec.has_input) (void)u_dist(u_rng);
    const double et = e_dist(e_rng);
    if (k >= burn_in) e.push_back(et);
  }
  return e;
}

std::vector<double> analytic_predictions(const SystemSpec& spec, const TimeSeriesDataset& data) {
  const std::size_t lag = spec.max_lag();
  std::vector<double> out;
  if (data.size() <= lag) return out;
  out.reserve(data.size() - lag);
  for (std::size_t t = lag; t < data.size(); ++t) {
    const double y_past[3] = {data.y[t - 1], t >= 2 ? data.y[t - 2] : 0.0,
                              t >= 3 ? data.y[t - 3] : 0.0};
    const double u_past[3] = {data.u[t - 1], t >= 2 ? data.u[t - 2] : 0.0,
                              t >= 3 ? data.u[t - 3] : 0.0};
    out.push_back(step(spec, y_past, u_past, 0.0));
  }
  return out;
}

}  // namespace fadingid
