#pragma once

// Experiment orchestration: configs, single runs, Monte Carlo studies and the
// file formats they read and write.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fadingid/benchmarks.hpp"
#include "fadingid/metrics.hpp"
#include "fadingid/model.hpp"
#include "fadingid/optim.hpp"

namespace fadingid {

enum class ModelKind { fading, plain };

struct ExperimentConfig {
  int system_id = 4;
  std::size_t n_train = 2000;
  std::size_t n_test = 2000;
  std::size_t burn_in = 100;
  ModelKind model = ModelKind::fading;
  std::size_t n_blocks = 9;  // fading
  std::size_t p = 3;         // fading
  std::size_t horizon = 12;  // plain T
  BlockConfig blocks;
  double so_weight = 1e-3;
  OptimizerConfig optimizer;
  std::size_t epochs = 300;
  std::size_t batch_size = 64;
  std::size_t eval_every = 10;
  std::size_t runs = 5;
  std::size_t workers = 1;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
};

/// Strict parse: unknown keys, wrong types and out-of-range values raise
/// ConfigError naming the field.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& c);
/// FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const ExperimentConfig& c);
void validate(const ExperimentConfig& c);

/// Output directory after the FADINGID_OUTPUT_ROOT override.
std::filesystem::path resolve_output_dir(const ExperimentConfig& c);
inline constexpr const char* kOutputRootEnv = "FADINGID_OUTPUT_ROOT";

/// Seeds derived from one run seed.
struct RunSeeds {
  std::uint64_t run, train_data, test_data, init, sampler;
};
RunSeeds derive_seeds(std::uint64_t run_seed);

struct RunRecord {
  ExperimentConfig config;
  std::uint64_t seed = 0;
  TrainingLog log;
  EvalReport report;
  double wall_seconds = 0.0;
};

struct TrainedModel {
  ModelKind kind = ModelKind::fading;
  FadingModel fading;
  PlainDNN plain;
};

struct RunOutput {
  RunRecord record;
  TrainedModel model;
};

/// One training run with seed `run_seed`: fresh train and test trajectories,
/// model initialization, training and final evaluation.
RunOutput run_experiment(const ExperimentConfig& c, std::uint64_t run_seed);

/// Builds the model for `c`, untrained, with the given seeds and data.
TrainedModel initial_model(const ExperimentConfig& c, const RunSeeds& seeds,
                           const TimeSeriesDataset& train);

EvalReport evaluate_model(const TrainedModel& m, const TimeSeriesDataset& train,
                          const TimeSeriesDataset& test);
/// Eval-mode eta_hat of a model on one dataset.
double evaluate_eta_hat(const TrainedModel& m, const TimeSeriesDataset& data);

// ---- Monte Carlo -----------------------------------------------------------

struct RunFailure {
  std::size_t run = 0;
  std::uint64_t seed = 0;
  std::string error;
};

struct MonteCarloResult {
  std::vector<std::optional<RunRecord>> runs;  // index = run
  std::vector<RunFailure> failures;

  std::size_t succeeded() const;
  /// True when more than 20% of the runs failed.
  bool failed() const;
};

/// Runs c.runs experiments with seeds c.seed + index over c.workers threads.
/// Failing runs are recorded and skipped.
MonteCarloResult run_montecarlo(const ExperimentConfig& c);

struct Summary {
  std::size_t runs = 0;
  std::size_t failed = 0;
  double train_eta_hat = 0.0;  // medians
  double test_eta_hat = 0.0;
  double gap = 0.0;
  double eta_true = 0.0;
};

double median(std::vector<double> v);
Summary summarize(const MonteCarloResult& r, const ExperimentConfig& c);

// ---- files -----------------------------------------------------------------

/// `t,u,y` at 17 significant digits.
void write_dataset_csv(const std::filesystem::path& path, const TimeSeriesDataset& d);
/// Sidecar next to a dataset CSV: system-id, N, seed, burn-in, generator.
void write_dataset_sidecar(const std::filesystem::path& csv_path, const TimeSeriesDataset& d);
std::filesystem::path sidecar_path(const std::filesystem::path& csv_path);
/// Reads a dataset CSV and its sidecar when present.
TimeSeriesDataset read_dataset_csv(const std::filesystem::path& path);

nlohmann::json checkpoint_json(const TrainedModel& m, const ExperimentConfig& c);
TrainedModel model_from_checkpoint(const nlohmann::json& j);
void write_checkpoint(const std::filesystem::path& path, const TrainedModel& m,
                      const ExperimentConfig& c);
TrainedModel read_checkpoint(const std::filesystem::path& path,
                             ExperimentConfig* config = nullptr);

void write_training_log_csv(const std::filesystem::path& path, const TrainingLog& log);
/// epoch,block,importance,truncated_std for every evaluated epoch.
void write_relevance_csv(const std::filesystem::path& path, const TrainingLog& log);
void write_relevance_csv(const std::filesystem::path& path, std::size_t epoch,
                         const BlockRelevance& r, bool append = false);
nlohmann::json eval_report_json(const EvalReport& r);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

/// run,split,metric,value.
void write_results_csv(const std::filesystem::path& path, const MonteCarloResult& r);
void write_summary_csv(const std::filesystem::path& path, const Summary& s,
                       const ExperimentConfig& c);
void write_failures_csv(const std::filesystem::path& path, const MonteCarloResult& r);

/// Writes checkpoint, training log, relevance, eval report and run record of
/// one run into `dir`.
void write_run_outputs(const std::filesystem::path& dir, const RunOutput& out);

}  // namespace fadingid
