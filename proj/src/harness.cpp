#include "fadingid/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "fadingid/errors.hpp"

namespace fadingid {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---- strict JSON access -----------------------------------------------------

void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) throw ConfigError("unknown config key '" + where + it.key() + "'");
  }
}

std::size_t get_count(const json& j, const char* key, const std::string& where, std::size_t fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
    throw ConfigError("config field '" + where + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

double get_real(const json& j, const char* key, const std::string& where, double fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number() || !std::isfinite(v.get<double>())) {
    throw ConfigError("config field '" + where + key + "' must be a finite number");
  }
  return v.get<double>();
}

std::string get_string(const json& j, const char* key, const std::string& where,
                       const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string()) throw ConfigError("config field '" + where + key + "' must be a string");
  return j.at(key).get<std::string>();
}

void require_positive(std::size_t v, const char* field) {
  if (v == 0) throw ConfigError(std::string("config field '") + field + "' must be positive");
}

std::string kind_name(ModelKind k) { return k == ModelKind::fading ? "fading" : "plain"; }

std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

// ---- tensors in JSON --------------------------------------------------------

json tensor_json(const Tensor& t) {
  json values;
  if (t.rank() == 2) {
    values = json::array();
    for (std::size_t r = 0; r < t.rows(); ++r) {
      json row = json::array();
      for (std::size_t c = 0; c < t.cols(); ++c) row.push_back(t.at(r, c));
      values.push_back(std::move(row));
    }
  } else if (t.rank() == 0) {
    values = t.item();
  } else {
    values = t.storage();
  }
  return json{{"shape", t.shape()}, {"values", values}};
}

Tensor tensor_from_json(const json& j, const std::string& what) {
  try {
    const Shape shape = j.at("shape").get<Shape>();
    const json& v = j.at("values");
    std::vector<double> flat;
    if (shape.empty()) {
      flat.push_back(v.get<double>());
    } else if (shape.size() == 2) {
      for (const json& row : v) {
        for (const json& x : row) flat.push_back(x.get<double>());
      }
    } else {
      flat = v.get<std::vector<double>>();
    }
    return Tensor(shape, std::move(flat));
  } catch (const json::exception& e) {
    throw DataError("checkpoint: malformed tensor '" + what + "': " + e.what());
  } catch (const DimensionError& e) {
    throw DataError("checkpoint: tensor '" + what + "' does not match its shape");
  }
}

json block_json(const MLPBlock& b) {
  json layers = json::array();
  for (const Layer& l : b.layers()) {
    layers.push_back({{"weight", tensor_json(l.weight)}, {"bias", tensor_json(l.bias)}});
  }
  return {{"activation", activation_name(b.activation())}, {"layers", layers}};
}

MLPBlock block_from_json(const json& j) {
  std::vector<Layer> layers;
  for (const json& l : j.at("layers")) {
    layers.push_back({tensor_from_json(l.at("weight"), "weight"), tensor_from_json(l.at("bias"), "bias")});
  }
  return MLPBlock(std::move(layers), parse_activation(j.at("activation").get<std::string>()));
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

void close_checked(std::ofstream& out, const fs::path& path) {
  out.close();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double mean_square(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return v.empty() ? 1.0 : acc / static_cast<double>(v.size());
}

TrainConfig train_config(const ExperimentConfig& c, std::uint64_t sampler_seed) {
  TrainConfig t;
  t.epochs = c.epochs;
  t.batch_size = c.batch_size;
  t.optimizer = c.optimizer;
  t.so_weight = c.so_weight;
  t.seed = sampler_seed;
  t.eval_every = c.eval_every;
  return t;
}

}  // namespace

// ---- config -----------------------------------------------------------------

ExperimentConfig parse_config(const json& j) {
  reject_unknown(j, "", {"system", "n_train", "n_test", "burn_in", "model", "blocks", "loss", "optimizer",
                         "epochs", "batch_size", "eval_every", "runs", "workers", "seed", "output_dir"});
  ExperimentConfig c;
  if (j.contains("system")) {
    if (!j.at("system").is_number_integer()) throw ConfigError("config field 'system' must be an integer");
    c.system_id = j.at("system").get<int>();
  }
  c.n_train = get_count(j, "n_train", "", c.n_train);
  c.n_test = get_count(j, "n_test", "", c.n_test);
  c.burn_in = get_count(j, "burn_in", "", c.burn_in);
  c.epochs = get_count(j, "epochs", "", c.epochs);
  c.batch_size = get_count(j, "batch_size", "", c.batch_size);
  c.eval_every = get_count(j, "eval_every", "", c.eval_every);
  c.runs = get_count(j, "runs", "", c.runs);
  c.workers = get_count(j, "workers", "", c.workers);
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) throw ConfigError("config field 'seed' must be a non-negative integer");
    c.seed = j.at("seed").get<std::uint64_t>();
  }
  c.output_dir = get_string(j, "output_dir", "", c.output_dir);

  if (j.contains("model")) {
    const json& m = j.at("model");
    const std::string kind = get_string(m, "kind", "model.", "fading");
    if (kind == "fading") {
      reject_unknown(m, "model.", {"kind", "n_blocks", "p"});
      c.model = ModelKind::fading;
      c.n_blocks = get_count(m, "n_blocks", "model.", c.n_blocks);
      c.p = get_count(m, "p", "model.", c.p);
    } else if (kind == "plain") {
      reject_unknown(m, "model.", {"kind", "T"});
      c.model = ModelKind::plain;
      c.horizon = get_count(m, "T", "model.", c.horizon);
    } else {
      throw ConfigError("config field 'model.kind' must be 'fading' or 'plain'");
    }
  }
  if (j.contains("blocks")) {
    const json& b = j.at("blocks");
    reject_unknown(b, "blocks.", {"hidden", "activation"});
    if (b.contains("hidden")) {
      if (!b.at("hidden").is_array()) throw ConfigError("config field 'blocks.hidden' must be an array");
      c.blocks.hidden.clear();
      for (const json& h : b.at("hidden")) {
        if (!h.is_number_integer() || h.get<std::int64_t>() <= 0) {
          throw ConfigError("config field 'blocks.hidden' must hold positive integers");
        }
        c.blocks.hidden.push_back(h.get<std::size_t>());
      }
    }
    try {
      c.blocks.activation = parse_activation(get_string(b, "activation", "blocks.", "tanh"));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("config field 'blocks.activation': ") + e.what());
    }
  }
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    reject_unknown(l, "loss.", {"so_weight"});
    c.so_weight = get_real(l, "so_weight", "loss.", c.so_weight);
  }
  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    reject_unknown(o, "optimizer.", {"kind", "lr", "beta1", "beta2", "eps", "momentum"});
    const std::string kind = get_string(o, "kind", "optimizer.", "adam");
    if (kind == "adam") {
      c.optimizer.kind = OptimizerKind::adam;
    } else if (kind == "sgd") {
      c.optimizer.kind = OptimizerKind::sgd;
    } else {
      throw ConfigError("config field 'optimizer.kind' must be 'adam' or 'sgd'");
    }
    c.optimizer.lr = get_real(o, "lr", "optimizer.", c.optimizer.lr);
    c.optimizer.beta1 = get_real(o, "beta1", "optimizer.", c.optimizer.beta1);
    c.optimizer.beta2 = get_real(o, "beta2", "optimizer.", c.optimizer.beta2);
    c.optimizer.eps = get_real(o, "eps", "optimizer.", c.optimizer.eps);
    c.optimizer.momentum = get_real(o, "momentum", "optimizer.", c.optimizer.momentum);
  }
  validate(c);
  return c;
}

void validate(const ExperimentConfig& c) {
  if (c.system_id < 1 || c.system_id > 4) throw ConfigError("config field 'system' must be 1..4");
  require_positive(c.n_train, "n_train");
  require_positive(c.n_test, "n_test");
  require_positive(c.batch_size, "batch_size");
  require_positive(c.runs, "runs");
  require_positive(c.workers, "workers");
  if (c.model == ModelKind::fading) {
    require_positive(c.p, "model.p");
  } else {
    require_positive(c.horizon, "model.T");
  }
  const std::size_t horizon = c.model == ModelKind::fading ? c.n_blocks + c.p : c.horizon;
  if (c.n_train <= horizon + 1) throw ConfigError("config field 'n_train' must exceed the horizon + 1");
  if (c.n_test <= horizon) throw ConfigError("config field 'n_test' must exceed the horizon");
  if (c.so_weight < 0.0) throw ConfigError("config field 'loss.so_weight' must be >= 0");
  if (!(c.optimizer.lr > 0.0)) throw ConfigError("config field 'optimizer.lr' must be positive");
  if (c.optimizer.beta1 < 0.0 || c.optimizer.beta1 >= 1.0) throw ConfigError("config field 'optimizer.beta1' must be in [0, 1)");
  if (c.optimizer.beta2 < 0.0 || c.optimizer.beta2 >= 1.0) throw ConfigError("config field 'optimizer.beta2' must be in [0, 1)");
  if (!(c.optimizer.eps > 0.0)) throw ConfigError("config field 'optimizer.eps' must be positive");
  if (c.optimizer.momentum < 0.0 || c.optimizer.momentum >= 1.0) throw ConfigError("config field 'optimizer.momentum' must be in [0, 1)");
  if (c.output_dir.empty()) throw ConfigError("config field 'output_dir' must not be empty");
}

ExperimentConfig load_config(const fs::path& path) {
  json j;
  try {
    j = read_json(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return parse_config(j);
}

json to_json(const ExperimentConfig& c) {
  json model = c.model == ModelKind::fading
                   ? json{{"kind", "fading"}, {"n_blocks", c.n_blocks}, {"p", c.p}}
                   : json{{"kind", "plain"}, {"T", c.horizon}};
  return json{
      {"system", c.system_id},
      {"n_train", c.n_train},
      {"n_test", c.n_test},
      {"burn_in", c.burn_in},
      {"model", model},
      {"blocks", {{"hidden", c.blocks.hidden}, {"activation", activation_name(c.blocks.activation)}}},
      {"loss", {{"so_weight", c.so_weight}}},
      {"optimizer",
       {{"kind", optimizer_name(c.optimizer.kind)},
        {"lr", c.optimizer.lr},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"eps", c.optimizer.eps},
        {"momentum", c.optimizer.momentum}}},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"eval_every", c.eval_every},
      {"runs", c.runs},
      {"workers", c.workers},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
  };
}

std::string config_hash(const ExperimentConfig& c) {
  // Workers and the output location do not change results.
  json j = to_json(c);
  j.erase("workers");
  j.erase("output_dir");
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

fs::path resolve_output_dir(const ExperimentConfig& c) {
  const char* root = std::getenv(kOutputRootEnv);
  if (root == nullptr || *root == '\0') return fs::path(c.output_dir);
  const fs::path dir(c.output_dir);
  return dir.is_absolute() ? fs::path(root) / dir.relative_path() : fs::path(root) / dir;
}

// ---- runs -------------------------------------------------------------------

RunSeeds derive_seeds(std::uint64_t run_seed) {
  return {run_seed, mix_seed(run_seed, 100), mix_seed(run_seed, 200), mix_seed(run_seed, 300),
          mix_seed(run_seed, 400)};
}

TrainedModel initial_model(const ExperimentConfig& c, const RunSeeds& seeds, const TimeSeriesDataset& train) {
  // eta^2 starts at the second moment of the targets: the error of the zero predictor.
  const double eta2 = mean_square(train.y);
  TrainedModel m;
  m.kind = c.model;
  if (c.model == ModelKind::fading) {
    m.fading = FadingModel::init(c.p, c.n_blocks, c.blocks, seeds.init, eta2);
  } else {
    m.plain = PlainDNN::init(c.horizon, c.blocks, seeds.init, eta2);
  }
  return m;
}

double evaluate_eta_hat(const TrainedModel& m, const TimeSeriesDataset& data) {
  if (m.kind == ModelKind::fading) {
    const RegressorMatrix r = build_regressors(data, m.fading.p, m.fading.n_blocks);
    return eta_hat(r.targets.values(), predict(m.fading, r).values());
  }
  const RegressorMatrix r = build_regressors(data, m.plain.horizon, 0);
  return eta_hat(r.targets.values(), predict(m.plain, r).values());
}

EvalReport evaluate_model(const TrainedModel& m, const TimeSeriesDataset& train, const TimeSeriesDataset& test) {
  EvalReport rep;
  rep.eta_hat_train = evaluate_eta_hat(m, train);
  rep.eta_hat_test = evaluate_eta_hat(m, test);
  rep.eta_true = eta_true(SystemSpec::get(test.system_id));
  rep.gap = rep.eta_hat_test - rep.eta_hat_train;
  if (m.kind == ModelKind::fading) {
    rep.relevance = block_relevance(m.fading, build_regressors(test, m.fading.p, m.fading.n_blocks));
  }
  return rep;
}

RunOutput run_experiment(const ExperimentConfig& c, std::uint64_t run_seed) {
  validate(c);
  const auto start = std::chrono::steady_clock::now();
  const RunSeeds seeds = derive_seeds(run_seed);
  const SystemSpec spec = SystemSpec::get(c.system_id);
  SimulationOptions sim;
  sim.burn_in = c.burn_in;
  const TimeSeriesDataset train_data = simulate(spec, c.n_train, seeds.train_data, sim);
  const TimeSeriesDataset test_data = simulate(spec, c.n_test, seeds.test_data, sim);

  RunOutput out;
  out.record.config = c;
  out.record.seed = run_seed;
  out.model = initial_model(c, seeds, train_data);
  const TrainConfig tc = train_config(c, seeds.sampler);
  if (c.model == ModelKind::fading) {
    const RegressorMatrix rt = build_regressors(train_data, c.p, c.n_blocks);
    const RegressorMatrix rv = build_regressors(test_data, c.p, c.n_blocks);
    out.record.log = train(out.model.fading, rt, &rv, tc);
  } else {
    const RegressorMatrix rt = build_regressors(train_data, c.horizon, 0);
    const RegressorMatrix rv = build_regressors(test_data, c.horizon, 0);
    out.record.log = train(out.model.plain, rt, &rv, tc);
  }
  out.record.report = evaluate_model(out.model, train_data, test_data);
  out.record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

// ---- Monte Carlo --------------------------------------------------------------

std::size_t MonteCarloResult::succeeded() const {
  return static_cast<std::size_t>(std::count_if(runs.begin(), runs.end(), [](const auto& r) { return r.has_value(); }));
}

bool MonteCarloResult::failed() const { return failures.size() * 5 > runs.size(); }

MonteCarloResult run_montecarlo(const ExperimentConfig& c) {
  validate(c);
  MonteCarloResult result;
  result.runs.resize(c.runs);
  std::vector<std::optional<RunFailure>> failures(c.runs);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < c.runs; i = next++) {
      const std::uint64_t seed = c.seed + i;
      try {
        result.runs[i] = run_experiment(c, seed).record;
      } catch (const std::exception& e) {
        failures[i] = RunFailure{i, seed, e.what()};
      }
    }
  };
  const std::size_t n_workers = std::min(c.workers, c.runs);
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  for (auto& f : failures) {
    if (f) result.failures.push_back(std::move(*f));
  }
  return result;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Summary summarize(const MonteCarloResult& r, const ExperimentConfig& c) {
  std::vector<double> train, test, gap;
  for (const auto& run : r.runs) {
    if (!run) continue;
    train.push_back(run->report.eta_hat_train);
    test.push_back(run->report.eta_hat_test);
    gap.push_back(run->report.gap);
  }
  Summary s;
  s.runs = r.runs.size();
  s.failed = r.failures.size();
  s.train_eta_hat = median(train);
  s.test_eta_hat = median(test);
  s.gap = median(gap);
  s.eta_true = eta_true(SystemSpec::get(c.system_id));
  return s;
}

// ---- files -------------------------------------------------------------------

void write_dataset_csv(const fs::path& path, const TimeSeriesDataset& d) {
  std::ofstream out = open_out(path);
  out << "t,u,y\n";
  for (std::size_t t = 0; t < d.size(); ++t) {
    out << t << ',' << fmt17(d.u.empty() ? 0.0 : d.u[t]) << ',' << fmt17(d.y[t]) << '\n';
  }
  close_checked(out, path);
}

fs::path sidecar_path(const fs::path& csv_path) {
  fs::path p = csv_path;
  p += ".json";
  return p;
}

void write_dataset_sidecar(const fs::path& csv_path, const TimeSeriesDataset& d) {
  write_json(sidecar_path(csv_path), json{{"system_id", d.system_id},
                                          {"N", d.size()},
                                          {"seed", d.seed},
                                          {"burn_in", d.burn_in},
                                          {"generator", rng_description()}});
}

TimeSeriesDataset read_dataset_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != "t,u,y") {
    throw DataError("'" + path.string() + "': expected header 't,u,y'");
  }
  TimeSeriesDataset d;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string t, u, y;
    if (!std::getline(row, t, ',') || !std::getline(row, u, ',') || !std::getline(row, y)) {
      throw DataError("'" + path.string() + "' line " + std::to_string(lineno) + ": expected 3 fields");
    }
    try {
      std::size_t used = 0;
      d.u.push_back(std::stod(u, &used));
      d.y.push_back(std::stod(y, &used));
    } catch (const std::exception&) {
      throw DataError("'" + path.string() + "' line " + std::to_string(lineno) + ": not a number");
    }
  }
  const fs::path side = sidecar_path(path);
  if (fs::exists(side)) {
    const json j = read_json(side);
    try {
      d.system_id = j.at("system_id").get<int>();
      d.seed = j.at("seed").get<std::uint64_t>();
      d.burn_in = j.at("burn_in").get<std::size_t>();
      if (j.at("N").get<std::size_t>() != d.size()) {
        throw DataError("'" + path.string() + "': sidecar N disagrees with the row count");
      }
    } catch (const json::exception& e) {
      throw DataError("'" + side.string() + "': " + e.what());
    }
  }
  return d;
}

json checkpoint_json(const TrainedModel& m, const ExperimentConfig& c) {
  json j{{"format", "fadingid-checkpoint"}, {"version", 1}, {"kind", kind_name(m.kind)},
         {"config", to_json(c)}, {"config_hash", config_hash(c)}};
  if (m.kind == ModelKind::fading) {
    const FadingModel& f = m.fading;
    json blocks = json::array();
    for (const MLPBlock& b : f.blocks) blocks.push_back(block_json(b));
    j["p"] = f.p;
    j["n_blocks"] = f.n_blocks;
    j["blocks"] = blocks;
    j["theta"] = tensor_json(f.theta);
    j["norm"] = {{"running_mean", f.norm.running_mean}, {"running_var", f.norm.running_var},
                 {"gamma", tensor_json(f.norm.gamma)},  {"beta", tensor_json(f.norm.beta)},
                 {"momentum", f.norm.momentum},         {"eps", f.norm.eps}};
    j["raw"] = {{"lambda", f.raw_lambda.item()}, {"kappa", f.raw_kappa.item()},
                {"log_eta2", f.raw_log_eta2.item()}};
  } else {
    j["T"] = m.plain.horizon;
    j["net"] = block_json(m.plain.net);
    j["raw"] = {{"log_eta2", m.plain.raw_log_eta2.item()}};
  }
  return j;
}

TrainedModel model_from_checkpoint(const json& j) {
  TrainedModel m;
  try {
    if (j.at("format") != "fadingid-checkpoint") throw DataError("not a checkpoint");
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "fading") {
      m.kind = ModelKind::fading;
      FadingModel& f = m.fading;
      f.p = j.at("p").get<std::size_t>();
      f.n_blocks = j.at("n_blocks").get<std::size_t>();
      for (const json& b : j.at("blocks")) f.blocks.push_back(block_from_json(b));
      f.theta = tensor_from_json(j.at("theta"), "theta");
      const json& n = j.at("norm");
      f.norm.running_mean = n.at("running_mean").get<std::vector<double>>();
      f.norm.running_var = n.at("running_var").get<std::vector<double>>();
      f.norm.gamma = tensor_from_json(n.at("gamma"), "gamma");
      f.norm.beta = tensor_from_json(n.at("beta"), "beta");
      f.norm.momentum = n.at("momentum").get<double>();
      f.norm.eps = n.at("eps").get<double>();
      const json& raw = j.at("raw");
      f.raw_lambda = Tensor::scalar(raw.at("lambda").get<double>());
      f.raw_kappa = Tensor::scalar(raw.at("kappa").get<double>());
      f.raw_log_eta2 = Tensor::scalar(raw.at("log_eta2").get<double>());
      const std::size_t k = f.bank_size();
      if (f.blocks.size() != k || f.theta.size() != k || f.norm.columns() != k ||
          f.norm.running_var.size() != k) {
        throw DataError("checkpoint: block count disagrees with n_blocks");
      }
      for (const MLPBlock& b : f.blocks) {
        if (b.input_dim() != 2 * f.p) throw DataError("checkpoint: block input width disagrees with p");
      }
    } else if (kind == "plain") {
      m.kind = ModelKind::plain;
      m.plain.horizon = j.at("T").get<std::size_t>();
      m.plain.net = block_from_json(j.at("net"));
      m.plain.raw_log_eta2 = Tensor::scalar(j.at("raw").at("log_eta2").get<double>());
      if (m.plain.net.input_dim() != 2 * m.plain.horizon) {
        throw DataError("checkpoint: network input width disagrees with T");
      }
    } else {
      throw DataError("checkpoint: unknown model kind '" + kind + "'");
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  } catch (const DimensionError& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
  return m;
}

void write_checkpoint(const fs::path& path, const TrainedModel& m, const ExperimentConfig& c) {
  write_json(path, checkpoint_json(m, c));
}

TrainedModel read_checkpoint(const fs::path& path, ExperimentConfig* config) {
  const json j = read_json(path);
  TrainedModel m = model_from_checkpoint(j);
  ExperimentConfig stored;
  try {
    stored = parse_config(j.at("config"));
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
  if (j.value("config_hash", std::string()) != config_hash(stored)) {
    throw DataError("checkpoint: config hash mismatch");
  }
  if (config != nullptr) *config = stored;
  return m;
}

void write_training_log_csv(const fs::path& path, const TrainingLog& log) {
  std::ofstream out = open_out(path);
  out << "epoch,fit,theta_prior,logdet,so,total,lambda,kappa,eta,batch_eta_hat,train_eta_hat,val_eta_hat\n";
  for (const EpochLog& e : log.epochs) {
    out << e.epoch << ',' << fmt17(e.loss.fit) << ',' << fmt17(e.loss.theta_prior) << ','
        << fmt17(e.loss.logdet_term) << ',' << fmt17(e.loss.so_term) << ',' << fmt17(e.loss.total) << ','
        << fmt17(e.lambda) << ',' << fmt17(e.kappa) << ',' << fmt17(e.eta) << ','
        << fmt17(e.batch_eta_hat) << ',' << fmt17(e.train_eta_hat) << ',' << fmt17(e.val_eta_hat) << '\n';
  }
  close_checked(out, path);
}

void write_relevance_csv(const fs::path& path, std::size_t epoch, const BlockRelevance& r, bool append) {
  const bool header = !append || !fs::exists(path);
  std::ofstream out;
  if (append) {
    out.open(path, std::ios::app | std::ios::binary);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
  } else {
    out = open_out(path);
  }
  if (header) out << "epoch,block,importance,truncated_std\n";
  for (std::size_t i = 0; i < r.importance.size(); ++i) {
    out << epoch << ',' << i << ',' << fmt17(r.importance[i]) << ',' << fmt17(r.truncated_std[i]) << '\n';
  }
  close_checked(out, path);
}

void write_relevance_csv(const fs::path& path, const TrainingLog& log) {
  std::ofstream out = open_out(path);
  out << "epoch,block,importance,truncated_std\n";
  for (const EpochLog& e : log.epochs) {
    for (std::size_t i = 0; i < e.relevance.importance.size(); ++i) {
      out << e.epoch << ',' << i << ',' << fmt17(e.relevance.importance[i]) << ','
          << fmt17(e.relevance.truncated_std[i]) << '\n';
    }
  }
  close_checked(out, path);
}

json eval_report_json(const EvalReport& r) {
  return json{{"eta_hat_train", r.eta_hat_train},
              {"eta_hat_test", r.eta_hat_test},
              {"eta_true", r.eta_true},
              {"gap", r.gap},
              {"relevance", {{"importance", r.relevance.importance}, {"truncated_std", r.relevance.truncated_std}}}};
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out = open_out(path);
  out << j.dump(2) << '\n';
  close_checked(out, path);
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError("'" + path.string() + "': " + e.what());
  }
}

void write_results_csv(const fs::path& path, const MonteCarloResult& r) {
  std::ofstream out = open_out(path);
  out << "run,split,metric,value\n";
  for (std::size_t i = 0; i < r.runs.size(); ++i) {
    if (!r.runs[i]) continue;
    const EvalReport& rep = r.runs[i]->report;
    out << i << ",train,eta_hat," << fmt17(rep.eta_hat_train) << '\n';
    out << i << ",test,eta_hat," << fmt17(rep.eta_hat_test) << '\n';
    out << i << ",test,gap," << fmt17(rep.gap) << '\n';
  }
  close_checked(out, path);
}

void write_summary_csv(const fs::path& path, const Summary& s, const ExperimentConfig& c) {
  std::ofstream out = open_out(path);
  out << "system,model,n_train,so_weight,runs,failed,train_eta_hat,test_eta_hat,gap,eta_true\n";
  out << c.system_id << ',' << kind_name(c.model) << ',' << c.n_train << ',' << fmt17(c.so_weight) << ','
      << s.runs << ',' << s.failed << ',' << fmt17(s.train_eta_hat) << ',' << fmt17(s.test_eta_hat) << ','
      << fmt17(s.gap) << ',' << fmt17(s.eta_true) << '\n';
  close_checked(out, path);
}

void write_failures_csv(const fs::path& path, const MonteCarloResult& r) {
  std::ofstream out = open_out(path);
  out << "run,seed,error\n";
  for (const RunFailure& f : r.failures) {
    std::string msg = f.error;
    std::replace(msg.begin(), msg.end(), '"', '\'');
    out << f.run << ',' << f.seed << ",\"" << msg << "\"\n";
  }
  close_checked(out, path);
}

void write_run_outputs(const fs::path& dir, const RunOutput& out) {
  const RunRecord& rec = out.record;
  write_checkpoint(dir / "checkpoint.json", out.model, rec.config);
  write_training_log_csv(dir / "training_log.csv", rec.log);
  if (out.model.kind == ModelKind::fading) write_relevance_csv(dir / "relevance.csv", rec.log);
  write_json(dir / "eval_report.json", eval_report_json(rec.report));
  write_json(dir / "run_record.json", json{{"config", to_json(rec.config)},
                                          {"config_hash", config_hash(rec.config)},
                                          {"seed", rec.seed},
                                          {"epochs_logged", rec.log.epochs.size()},
                                          {"report", eval_report_json(rec.report)},
                                          {"wall_seconds", rec.wall_seconds}});
}

}  // namespace fadingid
