// fadingid: simulate, train, evaluate, montecarlo, relevance.
//
// Exit status: 0 success, 2 usage or configuration error, 1 runtime failure.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fadingid/errors.hpp"
#include "fadingid/harness.hpp"
#include "fadingid/kernels.hpp"

namespace fs = std::filesystem;
using namespace fadingid;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, runs, workers;
  std::string out;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--seed", o.seed, "master seed (overrides the config)");
  cmd->add_option("--epochs", o.epochs, "epochs (overrides the config)");
  cmd->add_option("--out", o.out, "output directory (overrides config and FADINGID_OUTPUT_ROOT)");
}

ExperimentConfig configure(const std::string& path, const Overrides& o) {
  ExperimentConfig c = load_config(path);
  if (o.seed) c.seed = *o.seed;
  if (o.epochs) c.epochs = *o.epochs;
  if (o.runs) c.runs = *o.runs;
  if (o.workers) c.workers = *o.workers;
  validate(c);
  return c;
}

fs::path output_dir(const ExperimentConfig& c, const Overrides& o) {
  return o.out.empty() ? resolve_output_dir(c) : fs::path(o.out);
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

int cmd_simulate(int system, std::size_t n, std::uint64_t seed, std::size_t burn_in, const std::string& out) {
  SimulationOptions opt;
  opt.burn_in = burn_in;
  const TimeSeriesDataset d = simulate(SystemSpec::get(system), n, seed, opt);
  write_dataset_csv(out, d);
  write_dataset_sidecar(out, d);
  std::cout << "wrote " << n << " rows to " << out << '\n';
  return 0;
}

int cmd_train(const std::string& config_path, const Overrides& o) {
  const ExperimentConfig c = configure(config_path, o);
  const fs::path dir = output_dir(c, o);
  const RunOutput out = run_experiment(c, c.seed);
  write_run_outputs(dir, out);
  std::cout << "train eta_hat " << num(out.record.report.eta_hat_train) << "  test eta_hat "
            << num(out.record.report.eta_hat_test) << "  (" << num(out.record.wall_seconds) << " s)\n"
            << "outputs in " << dir.string() << '\n';
  return 0;
}

int cmd_evaluate(const std::string& ckpt, const std::string& data, const std::string& train_data,
                 const std::string& out) {
  ExperimentConfig c;
  const TrainedModel m = read_checkpoint(ckpt, &c);
  const TimeSeriesDataset test = read_dataset_csv(data);
  EvalReport rep;
  rep.eta_hat_test = evaluate_eta_hat(m, test);
  rep.eta_true = eta_true(SystemSpec::get(test.system_id != 0 ? test.system_id : c.system_id));
  rep.eta_hat_train = std::nan("");
  if (!train_data.empty()) rep.eta_hat_train = evaluate_eta_hat(m, read_dataset_csv(train_data));
  rep.gap = rep.eta_hat_test - rep.eta_hat_train;
  if (m.kind == ModelKind::fading) {
    rep.relevance = block_relevance(m.fading, build_regressors(test, m.fading.p, m.fading.n_blocks));
  }
  const nlohmann::json j = eval_report_json(rep);
  if (out.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    write_json(out, j);
  }
  return 0;
}

int cmd_relevance(const std::string& ckpt, const std::string& data, const std::string& history,
                  const std::string& out) {
  ExperimentConfig c;
  const TrainedModel m = read_checkpoint(ckpt, &c);
  if (m.kind != ModelKind::fading) throw ContractError("relevance needs a fading-architecture checkpoint");
  const TimeSeriesDataset d = read_dataset_csv(data);
  if (d.system_id != 0 && d.system_id != c.system_id) {
    throw ContractError("dataset is from system " + std::to_string(d.system_id) + ", checkpoint from system " +
                        std::to_string(c.system_id));
  }
  const BlockRelevance rel = block_relevance(m.fading, build_regressors(d, m.fading.p, m.fading.n_blocks));
  const fs::path target(out);
  bool append = false;
  if (!history.empty()) {
    // Earlier epochs from a training run, copied ahead of the final vectors.
    std::ifstream in(history);
    if (!in) throw IoError("cannot read '" + history + "'");
    std::string line;
    std::getline(in, line);
    if (line != "epoch,block,importance,truncated_std") {
      throw DataError("'" + history + "': not a relevance CSV");
    }
    std::ofstream o(target, std::ios::binary);
    if (!o) throw IoError("cannot write '" + out + "'");
    o << line << '\n';
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const std::size_t a = line.find(',');
      const std::size_t block = std::stoul(line.substr(a + 1));
      if (block >= m.fading.bank_size()) {
        throw ContractError("history has block " + std::to_string(block) + " but the checkpoint has n_B+1 = " +
                            std::to_string(m.fading.bank_size()) + " blocks");
      }
      o << line << '\n';
    }
    append = true;
  }
  write_relevance_csv(target, c.epochs, rel, append);
  std::cout << "truncated_std[" << m.fading.n_blocks << "] = " << num(rel.truncated_std.back()) << '\n';
  return 0;
}

int cmd_montecarlo(const std::string& config_path, const Overrides& o) {
  const ExperimentConfig c = configure(config_path, o);
  const fs::path dir = output_dir(c, o);
  const MonteCarloResult r = run_montecarlo(c);
  write_results_csv(dir / "results.csv", r);
  const Summary s = summarize(r, c);
  write_summary_csv(dir / "summary.csv", s, c);
  write_failures_csv(dir / "failures.csv", r);
  for (std::size_t i = 0; i < r.runs.size(); ++i) {
    if (!r.runs[i]) continue;
    char name[32];
    std::snprintf(name, sizeof name, "run_%03zu", i);
    write_training_log_csv(dir / "runs" / name / "training_log.csv", r.runs[i]->log);
    write_json(dir / "runs" / name / "eval_report.json", eval_report_json(r.runs[i]->report));
  }
  std::cout << "runs " << s.runs << "  failed " << s.failed << "  median train " << num(s.train_eta_hat)
            << "  median test " << num(s.test_eta_hat) << "  median gap " << num(s.gap) << '\n';
  for (const RunFailure& f : r.failures) std::cerr << "run " << f.run << " failed: " << f.error << '\n';
  if (r.failed()) {
    std::cerr << "more than 20% of the runs failed\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fading-memory block networks for nonlinear system identification"};
  app.require_subcommand(1);
  std::string isa;
  app.add_option("--isa", isa, "kernel variant: scalar or avx2")->check(CLI::IsMember({"scalar", "avx2"}));

  int system = 4;
  std::size_t n = 0, burn_in = 100;
  std::uint64_t sim_seed = 0;
  std::string sim_out;
  CLI::App* sim = app.add_subcommand("simulate", "generate a benchmark trajectory");
  sim->add_option("--system", system, "system id")->required()->check(CLI::Range(1, 4));
  sim->add_option("--n", n, "samples")->required()->check(CLI::PositiveNumber);
  sim->add_option("--seed", sim_seed, "seed");
  sim->add_option("--burn-in", burn_in, "discarded initial samples");
  sim->add_option("--out", sim_out, "dataset CSV")->required();

  std::string train_cfg;
  Overrides train_o;
  CLI::App* tr = app.add_subcommand("train", "train one model from a config");
  tr->add_option("config", train_cfg, "config JSON")->required();
  add_overrides(tr, train_o);

  std::string ev_ckpt, ev_data, ev_train, ev_out;
  CLI::App* ev = app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset");
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint JSON")->required();
  ev->add_option("--data", ev_data, "test dataset CSV")->required();
  ev->add_option("--train-data", ev_train, "training dataset CSV");
  ev->add_option("--out", ev_out, "EvalReport JSON (stdout when omitted)");

  std::string mc_cfg;
  Overrides mc_o;
  CLI::App* mc = app.add_subcommand("montecarlo", "repeated runs with seeds seed + index");
  mc->add_option("config", mc_cfg, "config JSON")->required();
  add_overrides(mc, mc_o);
  mc->add_option("--runs", mc_o.runs, "run count (overrides the config)");
  mc->add_option("--workers", mc_o.workers, "parallel workers (overrides the config)");

  std::string rel_ckpt, rel_data, rel_history, rel_out;
  CLI::App* rel = app.add_subcommand("relevance", "block importance and truncated std");
  rel->add_option("--checkpoint", rel_ckpt, "checkpoint JSON")->required();
  rel->add_option("--data", rel_data, "dataset CSV")->required();
  rel->add_option("--history", rel_history, "relevance CSV from training, prepended");
  rel->add_option("--out", rel_out, "relevance CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (!isa.empty()) kernels::set_isa(isa == "avx2" ? kernels::Isa::avx2 : kernels::Isa::scalar);
    if (*sim) return cmd_simulate(system, n, sim_seed, burn_in, sim_out);
    if (*tr) return cmd_train(train_cfg, train_o);
    if (*ev) return cmd_evaluate(ev_ckpt, ev_data, ev_train, ev_out);
    if (*mc) return cmd_montecarlo(mc_cfg, mc_o);
    if (*rel) return cmd_relevance(rel_ckpt, rel_data, rel_history, rel_out);
  } catch (const ConfigError& e) {
    std::cerr << "fadingid: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "fadingid: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "fadingid: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
