#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <sys/wait.h>

#include "fadingid/errors.hpp"
#include "fadingid/harness.hpp"

using namespace fadingid;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fadingid_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.n_train = 160;
  c.n_test = 120;
  c.burn_in = 20;
  c.n_blocks = 2;
  c.p = 2;
  c.blocks.hidden = {6, 6};
  c.epochs = 3;
  c.batch_size = 32;
  c.eval_every = 1;
  c.runs = 2;
  c.seed = 11;
  return c;
}

std::string config_error(const json& j) {
  try {
    parse_config(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(FADINGID_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("config parsing is strict") {
    const ExperimentConfig c = parse_config(json::parse(R"({
      "system": 3, "n_train": 500, "model": {"kind": "fading", "n_blocks": 4, "p": 2},
      "blocks": {"hidden": [16, 8], "activation": "relu"}, "loss": {"so_weight": 0.5},
      "optimizer": {"kind": "sgd", "lr": 0.01, "momentum": 0.5}, "seed": 42})"));
    CHECK(c.system_id == 3);
    CHECK(c.n_train == 500);
    CHECK(c.n_blocks == 4);
    CHECK(c.p == 2);
    CHECK(c.blocks.hidden == std::vector<std::size_t>{16, 8});
    CHECK(c.blocks.activation == Activation::relu);
    CHECK(c.so_weight == 0.5);
    CHECK(c.optimizer.kind == OptimizerKind::sgd);
    CHECK(c.seed == 42);

    CHECK(config_error(json{{"epoch", 3}}).find("epoch") != std::string::npos);
    CHECK(config_error(json{{"model", {{"kind", "fading"}, {"T", 4}}}}).find("model.T") != std::string::npos);
    CHECK(config_error(json{{"model", {{"kind", "plain"}, {"p", 4}}}}).find("model.p") != std::string::npos);
    CHECK(config_error(json{{"n_train", -5}}).find("n_train") != std::string::npos);
    CHECK(config_error(json{{"n_train", "many"}}).find("n_train") != std::string::npos);
    CHECK(config_error(json{{"system", 7}}).find("system") != std::string::npos);
    CHECK(config_error(json{{"optimizer", {{"kind", "rmsprop"}}}}).find("optimizer.kind") != std::string::npos);
    CHECK(config_error(json{{"blocks", {{"activation", "swish"}}}}).find("swish") != std::string::npos);
    CHECK(config_error(json{{"batch_size", 0}}).find("batch_size") != std::string::npos);

    const ExperimentConfig back = parse_config(to_json(c));
    CHECK(to_json(back) == to_json(c));
  }

  TEST_CASE("config hash ignores scheduling fields") {
    ExperimentConfig a = tiny_config(), b = tiny_config();
    b.workers = 4;
    b.output_dir = "elsewhere";
    CHECK(config_hash(a) == config_hash(b));
    CHECK(config_hash(a).size() == 16);
    b.so_weight = 2.0;
    CHECK(config_hash(a) != config_hash(b));
  }

  TEST_CASE("output root override") {
    ExperimentConfig c;
    c.output_dir = "results";
    ::unsetenv(kOutputRootEnv);
    CHECK(resolve_output_dir(c) == fs::path("results"));
    ::setenv(kOutputRootEnv, "/tmp/root", 1);
    CHECK(resolve_output_dir(c) == fs::path("/tmp/root/results"));
    ::unsetenv(kOutputRootEnv);
  }

  TEST_CASE("derived seeds are distinct and stable") {
    const RunSeeds a = derive_seeds(5), b = derive_seeds(5), c = derive_seeds(6);
    CHECK(a.train_data == b.train_data);
    CHECK(a.train_data != a.test_data);
    CHECK(a.init != a.sampler);
    CHECK(a.train_data != c.train_data);
  }

  TEST_CASE("dataset csv round trip") {
    const fs::path dir = scratch("dataset");
    const TimeSeriesDataset d = simulate(SystemSpec::get(4), 200, 9);
    write_dataset_csv(dir / "a.csv", d);
    write_dataset_sidecar(dir / "a.csv", d);
    write_dataset_csv(dir / "b.csv", simulate(SystemSpec::get(4), 200, 9));
    CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
    CHECK(slurp(dir / "a.csv").rfind("t,u,y\n", 0) == 0);
    const TimeSeriesDataset back = read_dataset_csv(dir / "a.csv");
    CHECK(back.y == d.y);
    CHECK(back.u == d.u);
    CHECK(back.system_id == 4);
    CHECK(back.seed == 9);
    const json side = read_json(sidecar_path(dir / "a.csv"));
    CHECK(side.at("system_id") == 4);
    CHECK(side.at("N") == 200);

    std::ofstream(dir / "bad.csv") << "t,u,y\n0,1\n";
    CHECK_THROWS(read_dataset_csv(dir / "bad.csv"));
  }

  TEST_CASE("zero-epoch checkpoint matches initialization") {
    ExperimentConfig c = tiny_config();
    c.epochs = 0;
    const RunOutput out = run_experiment(c, 3);
    const RunSeeds s = derive_seeds(3);
    const TimeSeriesDataset train = simulate(SystemSpec::get(c.system_id), c.n_train, s.train_data,
                                             SimulationOptions{.burn_in = c.burn_in});
    const TrainedModel init = initial_model(c, s, train);
    CHECK(out.model.fading.theta == init.fading.theta);
    CHECK(out.model.fading.raw_log_eta2 == init.fading.raw_log_eta2);
    CHECK(out.model.fading.blocks[1].layers()[0].weight == init.fading.blocks[1].layers()[0].weight);
  }

  TEST_CASE("checkpoint round trip preserves predictions") {
    const fs::path dir = scratch("checkpoint");
    const ExperimentConfig c = tiny_config();
    const RunOutput out = run_experiment(c, 4);
    write_run_outputs(dir, out);
    for (const char* f : {"checkpoint.json", "training_log.csv", "relevance.csv", "eval_report.json", "run_record.json"}) {
      CHECK(fs::exists(dir / f));
    }
    ExperimentConfig loaded;
    const TrainedModel back = read_checkpoint(dir / "checkpoint.json", &loaded);
    CHECK(config_hash(loaded) == config_hash(c));
    const TimeSeriesDataset test = simulate(SystemSpec::get(4), 150, 77);
    CHECK(evaluate_eta_hat(back, test) == evaluate_eta_hat(out.model, test));

    json j = read_json(dir / "checkpoint.json");
    j["config"]["loss"]["so_weight"] = 9.0;
    write_json(dir / "tampered.json", j);
    CHECK_THROWS(read_checkpoint(dir / "tampered.json"));

    PlainDNN net = PlainDNN::init(4, c.blocks, 1);
    ExperimentConfig pc = c;
    pc.model = ModelKind::plain;
    pc.horizon = 4;
    pc.so_weight = 0.0;
    TrainedModel pm;
    pm.kind = ModelKind::plain;
    pm.plain = net;
    write_checkpoint(dir / "plain.json", pm, pc);
    const TrainedModel pback = read_checkpoint(dir / "plain.json");
    CHECK(pback.kind == ModelKind::plain);
    CHECK(evaluate_eta_hat(pback, test) == evaluate_eta_hat(pm, test));
  }

  TEST_CASE("montecarlo with one run reproduces a single training run") {
    ExperimentConfig c = tiny_config();
    c.runs = 1;
    const MonteCarloResult mc = run_montecarlo(c);
    const RunOutput single = run_experiment(c, c.seed);
    REQUIRE(mc.succeeded() == 1);
    CHECK(mc.runs[0]->report.eta_hat_test == single.record.report.eta_hat_test);
    CHECK(mc.runs[0]->report.eta_hat_train == single.record.report.eta_hat_train);
    CHECK_FALSE(mc.failed());
  }

  TEST_CASE("montecarlo output is independent of the worker count") {
    const fs::path dir = scratch("mc");
    ExperimentConfig c = tiny_config();
    c.runs = 3;
    c.workers = 1;
    write_results_csv(dir / "one.csv", run_montecarlo(c));
    c.workers = 3;
    write_results_csv(dir / "three.csv", run_montecarlo(c));
    CHECK(slurp(dir / "one.csv") == slurp(dir / "three.csv"));
    CHECK(slurp(dir / "one.csv").rfind("run,split,metric,value\n", 0) == 0);
  }

  TEST_CASE("median and summary") {
    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
    CHECK(std::isnan(median({})));
    std::vector<double> v{0.3, 0.1, 0.9, 0.4, 0.2};
    const double m = median(v);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 5; ++i) {
      std::shuffle(v.begin(), v.end(), rng);
      CHECK(median(v) == m);
    }

    MonteCarloResult r;
    r.runs.resize(5);
    for (std::size_t i = 0; i < 4; ++i) {
      RunRecord rec;
      rec.report.eta_hat_train = 0.1 * static_cast<double>(i + 1);
      rec.report.eta_hat_test = 0.2 * static_cast<double>(i + 1);
      r.runs[i] = rec;
    }
    r.failures.push_back({4, 15, "diverged"});
    CHECK(r.succeeded() == 4);
    CHECK_FALSE(r.failed());
    const Summary s = summarize(r, ExperimentConfig{});
    CHECK(s.runs == 5);
    CHECK(s.failed == 1);
    CHECK(s.train_eta_hat == doctest::Approx(0.25));
    CHECK(s.test_eta_hat == doctest::Approx(0.5));
    CHECK(s.eta_true == 0.14);
    r.runs[3].reset();
    r.failures.push_back({3, 14, "diverged"});
    CHECK(r.failed());
  }

  TEST_CASE("cli exit codes") {
    const fs::path dir = scratch("cli");
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("") == 2);
    CHECK(run_cli("simulate --system 9 --out " + (dir / "x.csv").string()) == 2);
    CHECK(run_cli("simulate --system 4 --n 100 --seed 2 --out " + (dir / "d.csv").string()) == 0);
    CHECK(fs::exists(dir / "d.csv"));
    CHECK(fs::exists(sidecar_path(dir / "d.csv")));
    CHECK(run_cli("train " + (dir / "missing.json").string()) != 0);

    std::ofstream(dir / "bad.json") << R"({"epochz": 3})";
    CHECK(run_cli("train " + (dir / "bad.json").string()) == 2);

    write_json(dir / "good.json", to_json(tiny_config()));
    CHECK(run_cli("train " + (dir / "good.json").string() + " --epochs 1 --out " + (dir / "run").string()) == 0);
    CHECK(fs::exists(dir / "run" / "checkpoint.json"));
    CHECK(run_cli("evaluate --checkpoint " + (dir / "run" / "checkpoint.json").string() + " --data " +
                  (dir / "d.csv").string()) == 0);
    CHECK(run_cli("relevance --checkpoint " + (dir / "run" / "checkpoint.json").string() + " --data " +
                  (dir / "d.csv").string() + " --out " + (dir / "rel.csv").string()) == 0);
    CHECK(slurp(dir / "rel.csv").rfind("epoch,block,importance,truncated_std\n", 0) == 0);
    CHECK(run_cli("evaluate --checkpoint " + (dir / "nothing.json").string() + " --data " +
                  (dir / "d.csv").string()) == 1);
  }
}
