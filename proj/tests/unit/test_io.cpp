#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "tnp/cnp.hpp"
#include "tnp/errors.hpp"
#include "tnp/experiment.hpp"
#include "tnp/io.hpp"
#include "tnp/tnp_model.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;
using namespace tnp;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("tnp_io_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct CliResult {
  int code = -1;
  std::string output;
};

// Runs the command-line tool with stdout and stderr captured.
CliResult run_cli(const std::string& args, const fs::path& dir) {
  const fs::path log = dir / "cli_output.txt";
  const std::string cmd = std::string("\"") + TNP_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.output = read_text_file(log);
  return r;
}

ModelConfig small(Variant v) {
  ModelConfig cfg = ModelConfig::desk_scale(v);
  cfg.d_model = 8;
  cfg.n_layers = 2;
  cfg.ff_width = 16;
  cfg.n_embed_layers = 2;
  cfg.nd_extra_attention_layers = 1;
  cfg.nd_projection_dim = 4;
  cfg.nd_projection_layers = 2;
  return cfg;
}

TaskBatch probe_batch() {
  Rng rng(5);
  return sample_gp_batch(rng, GpTaskConfig::one_d(), 3);
}

constexpr const char* kTinyConfig =
    "model.kind = tnp\n"
    "model.variant = D\n"
    "model.d_model = 8\n"
    "model.n_heads = 1\n"
    "model.n_layers = 1\n"
    "model.ff_width = 8\n"
    "model.n_embed_layers = 1\n"
    "task.kind = gp\n"
    "train.steps = 6\n"
    "train.batch_size = 2\n"
    "train.log_interval = 2\n"
    "train.checkpoint_interval = 3\n";

}  // namespace

// ------------------------------------------------------------------- config

TEST_CASE("config: parsing, overrides and errors") {
  const KeyValues kv = KeyValues::parse("# comment\n a = 1 \nb=x y\n\na = 2\n");
  CHECK(kv.get_int("a", 0) == 2);
  CHECK(kv.get_string("b", "") == "x y");
  CHECK(kv.get_double("missing", 1.5) == 1.5);
  CHECK_THROWS_AS(KeyValues::parse("novalue\n"), ConfigError);
  KeyValues k2;
  CHECK_THROWS_AS(k2.set_assignment("noequals"), ConfigError);
  k2.set_assignment("c=3");
  CHECK(k2.get_int("c", 0) == 3);
  k2.set("n", "abc");
  CHECK_THROWS_AS(k2.get_int("n", 0), ConfigError);
  CHECK_THROWS_WITH_AS(KeyValues::load("/nonexistent/dir/run.cfg"), doctest::Contains("/nonexistent/dir/run.cfg"),
                       ConfigError);
}

TEST_CASE("config: model profiles") {
  CHECK(ModelConfig::from_values(KeyValues::parse("model.profile = full\n")).d_model == 64);
  CHECK(ModelConfig::from_values(KeyValues::parse("model.profile = full\nmodel.d_model = 16\n")).d_model == 16);
  CHECK(ModelConfig::from_values(KeyValues{}).d_model == 32);
  CHECK_THROWS_AS(ModelConfig::from_values(KeyValues::parse("model.profile = huge\n")), ConfigError);
}

TEST_CASE("config: hash is stable under key reordering") {
  const KeyValues a = KeyValues::parse("x = 1\ny = 2\nz = three\n");
  const KeyValues b = KeyValues::parse("z = three\nx = 1\ny = 2\n");
  CHECK(a.content_hash() == b.content_hash());
  CHECK(a.serialize() == b.serialize());
  CHECK(a.content_hash().size() == 16);
  const KeyValues c = KeyValues::parse("x = 1\ny = 3\nz = three\n");
  CHECK(a.content_hash() != c.content_hash());
  CHECK(KeyValues::parse(a.serialize()).serialize() == a.serialize());
}

// -------------------------------------------------------------- checkpoints

TEST_CASE("checkpoint: save, load, save is byte-identical and predictions match") {
  const TaskBatch batch = probe_batch();
  std::vector<std::unique_ptr<NeuralProcess>> models;
  for (const Variant v : {Variant::autoregressive, Variant::diagonal, Variant::non_diagonal})
    models.push_back(std::make_unique<TnpModel>(small(v), 11));
  ModelConfig lowrank = small(Variant::non_diagonal);
  lowrank.nd_covariance = CovarianceMode::lowrank;
  lowrank.lowrank_rank = 3;
  models.push_back(std::make_unique<TnpModel>(lowrank, 12));
  models.push_back(std::make_unique<CnpModel>(CnpConfig{}, 13));

  for (const auto& model : models) {
    const std::string bytes = serialize_model(*model);
    CHECK(bytes.substr(0, 4) == "TNPC");
    const LoadedModel loaded = deserialize_model(bytes);
    CHECK(serialize_model(*loaded.model) == bytes);
    CHECK(!loaded.optimizer.has_value());
    const DiagonalPrediction a = model->predict_marginals(batch);
    const DiagonalPrediction b = loaded.model->predict_marginals(batch);
    CHECK(a.mean == b.mean);
    CHECK(a.sigma == b.sigma);
  }
}

TEST_CASE("checkpoint: optimizer state round trip through a file") {
  TnpModel model(small(Variant::diagonal), 14);
  TrainConfig tc;
  tc.steps = 4;
  tc.batch_size = 2;
  const TrainResult r =
      train_run(model, tc, [](Rng& rng, int b) { return sample_gp_batch(rng, GpTaskConfig::one_d(), b); });
  const fs::path dir = scratch("optimizer");
  save_model(model, dir / "ckpt.tnpc", &r.state);
  const LoadedModel loaded = load_model(dir / "ckpt.tnpc");
  REQUIRE(loaded.optimizer.has_value());
  CHECK(loaded.optimizer->step == 4);
  REQUIRE(loaded.optimizer->m.size() == r.state.m.size());
  for (std::size_t i = 0; i < r.state.m.size(); ++i) {
    CHECK(loaded.optimizer->m[i] == r.state.m[i]);
    CHECK(loaded.optimizer->v[i] == r.state.v[i]);
  }
  CHECK(serialize_model(*loaded.model, &*loaded.optimizer) == read_text_file(dir / "ckpt.tnpc"));
}

TEST_CASE("checkpoint: corrupt input is rejected") {
  const std::string bytes = serialize_model(TnpModel(small(Variant::diagonal), 15));
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_model(bad_magic), NumericError);
  std::string bad_version = bytes;
  bad_version[4] = 9;
  CHECK_THROWS_AS(deserialize_model(bad_version), NumericError);
  CHECK_THROWS_AS(deserialize_model(bytes.substr(0, bytes.size() - 3)), NumericError);
  CHECK_THROWS_AS(deserialize_model(bytes.substr(0, 10)), NumericError);
  CHECK_THROWS_AS(deserialize_model(bytes + "junk"), NumericError);
  CHECK_THROWS_AS(deserialize_model(""), NumericError);
  CHECK_THROWS(load_model("/nonexistent/model.tnpc"));
}

// ------------------------------------------------------------------ metrics

TEST_CASE("metrics: empty input is valid") {
  std::istringstream empty("");
  CHECK(read_metrics_jsonl(empty).empty());
  CHECK(metrics_to_csv({}, "loss") == "x,mean,std\n");
}

TEST_CASE("metrics: interleaved records round trip") {
  std::ostringstream out;
  write_metrics_record(out, {1, "loss", 0.5, 3, ""});
  write_metrics_record(out, {1, "lr", 1e-4, 3, "rbf"});
  const std::string text = out.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);
  std::istringstream in(text);
  const auto records = read_metrics_jsonl(in);
  REQUIRE(records.size() == 2);
  CHECK(records[0].metric == "loss");
  CHECK(records[0].value == 0.5);
  CHECK(records[1].metric == "lr");
  CHECK(records[1].task == "rbf");
  CHECK(records[1].seed == 3);
}

TEST_CASE("metrics: random records round trip exactly") {
  Rng rng(21);
  std::vector<MetricRecord> records;
  std::ostringstream out;
  for (int i = 0; i < 200; ++i) {
    MetricRecord r;
    r.step = static_cast<long long>(rng.uniform_int(0, 1000000));
    r.metric = i % 3 == 0 ? "ll" : (i % 3 == 1 ? "rmse" : "calibration_error");
    r.value = rng.normal(0.0, std::pow(10.0, rng.uniform(-20, 20)));
    r.seed = rng.next_u64();
    r.task = i % 2 ? "" : "task_" + std::to_string(i);
    records.push_back(r);
    write_metrics_record(out, r);
  }
  std::istringstream in(out.str());
  const auto back = read_metrics_jsonl(in);
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].step == records[i].step);
    CHECK(back[i].metric == records[i].metric);
    CHECK(back[i].value == records[i].value);
    CHECK(back[i].seed == records[i].seed);
    CHECK(back[i].task == records[i].task);
  }
}

TEST_CASE("metrics: malformed lines and failed streams") {
  std::istringstream in("{\"step\":1,\"metric\":\"a\",\"value\":1,\"seed\":0}\nnot json\n");
  CHECK_THROWS_WITH_AS(read_metrics_jsonl(in), doctest::Contains("2"), ConfigError);
  std::ofstream bad("/nonexistent/dir/metrics.jsonl");
  CHECK_THROWS_AS(write_metrics_record(bad, {0, "x", 1.0, 0, ""}), NumericError);
}

TEST_CASE("metrics: CSV of a 100-iteration trace has 100 rows") {
  std::vector<MetricRecord> records;
  for (int seed = 0; seed < 3; ++seed)
    for (int t = 1; t <= 100; ++t) records.push_back({t, "simple_regret", 1.0 / t + seed, static_cast<std::uint64_t>(seed), ""});
  records.push_back({1, "other", 5.0, 0, ""});
  const std::string csv = metrics_to_csv(records, "simple_regret");
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "x,mean,std");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    if (rows == 1) CHECK(line.rfind("1,2,1", 0) == 0);
  }
  CHECK(rows == 100);
}

TEST_CASE("manifest: JSON round trip") {
  RunManifest m;
  m.command = "train";
  m.config = KeyValues::parse("b = 2\na = 1\n");
  m.seed = 42;
  m.started = utc_timestamp();
  m.artifacts = {"x/model.tnpc", "x/train_metrics.jsonl"};
  const RunManifest back = RunManifest::from_json(m.to_json());
  CHECK(back.command == "train");
  CHECK(back.config.serialize() == m.config.serialize());
  CHECK(back.config_hash() == m.config_hash());
  CHECK(back.seed == 42);
  CHECK(back.started == m.started);
  CHECK(back.artifacts == m.artifacts);
}

// ---------------------------------------------------------------------- CLI

TEST_CASE("cli: usage and configuration errors exit 1") {
  const fs::path dir = scratch("cli_usage");
  CHECK(run_cli("", dir).code == 1);
  CHECK(run_cli("launch", dir).code == 1);
  CHECK(run_cli("train --bogus-flag", dir).code == 1);
  const CliResult missing = run_cli("train --config /nonexistent/rbf1d.cfg --out-dir " + (dir / "o").string(), dir);
  CHECK(missing.code == 1);
  CHECK(missing.output.find("/nonexistent/rbf1d.cfg") != std::string::npos);
  CHECK(run_cli("eval --out-dir " + (dir / "e").string(), dir).code == 1);
}

TEST_CASE("cli: corrupted checkpoint exits 2") {
  const fs::path dir = scratch("cli_corrupt");
  std::string bytes = serialize_model(TnpModel(small(Variant::diagonal), 16));
  bytes[1] = '?';
  write_text_file(dir / "bad.tnpc", bytes);
  const CliResult r = run_cli("eval --checkpoint " + (dir / "bad.tnpc").string() + " --out-dir " + (dir / "out").string(), dir);
  CHECK(r.code == 2);
}

TEST_CASE("cli: gradcheck prints errors and passes") {
  const fs::path dir = scratch("cli_gradcheck");
  const CliResult r = run_cli("gradcheck --seed 3", dir);
  CHECK(r.code == 0);
  CHECK(r.output.find("PASS") != std::string::npos);
  CHECK(r.output.find("FAIL") == std::string::npos);
}

TEST_CASE("cli: train and eval are reproducible") {
  const fs::path dir = scratch("cli_train");
  write_text_file(dir / "tiny.cfg", kTinyConfig);
  const std::string cfg = (dir / "tiny.cfg").string();
  const CliResult a = run_cli("train --config " + cfg + " --seed 7 --out-dir " + (dir / "a").string(), dir);
  const CliResult b = run_cli("train --config " + cfg + " --seed 7 --out-dir " + (dir / "b").string(), dir);
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  for (const char* f : {"model.tnpc", "checkpoint.tnpc", "train_metrics.jsonl", "manifest.json"}) {
    CHECK(fs::exists(dir / "a" / f));
  }
  CHECK(read_text_file(dir / "a" / "model.tnpc") == read_text_file(dir / "b" / "model.tnpc"));
  CHECK(read_text_file(dir / "a" / "train_metrics.jsonl") == read_text_file(dir / "b" / "train_metrics.jsonl"));
  const RunManifest m = RunManifest::from_json(read_text_file(dir / "a" / "manifest.json"));
  CHECK(m.seed == 7);
  CHECK(m.command == "train");
  CHECK(!m.finished.empty());

  const CliResult c = run_cli("train --config " + cfg + " --seed 8 --out-dir " + (dir / "c").string(), dir);
  REQUIRE(c.code == 0);
  CHECK(read_text_file(dir / "a" / "model.tnpc") != read_text_file(dir / "c" / "model.tnpc"));

  const std::string ckpt = (dir / "a" / "model.tnpc").string();
  const std::string eval_args = "eval --checkpoint " + ckpt + " --set eval.tasks=20 --set eval.batch=5 --seed 4 --out-dir ";
  REQUIRE(run_cli(eval_args + (dir / "ea").string(), dir).code == 0);
  REQUIRE(run_cli(eval_args + (dir / "eb").string() + " --set eval.threads=2", dir).code == 0);
  CHECK(read_text_file(dir / "ea" / "eval_metrics.jsonl") == read_text_file(dir / "eb" / "eval_metrics.jsonl"));
  std::ifstream in(dir / "ea" / "eval_metrics.jsonl");
  CHECK(read_metrics_jsonl(in).size() == 60);
}

TEST_CASE("cli: bandit and bo with baseline policies") {
  const fs::path dir = scratch("cli_decision");
  const CliResult bandit =
      run_cli("bandit --set bandit.policy=oracle --set bandit.steps=50 --set bandit.seeds=2 --out-dir " +
                  (dir / "bandit").string(),
              dir);
  CHECK(bandit.code == 0);
  CHECK(fs::exists(dir / "bandit" / "regret.jsonl"));
  CHECK(fs::exists(dir / "bandit" / "regret.csv"));
  const CliResult bo = run_cli("bo --set bo.surrogate=random --set bo.objective=dropwave2 --set bo.runs=2 --set bo.iterations=5 --out-dir " +
                                   (dir / "bo").string(),
                               dir);
  CHECK(bo.code == 0);
  CHECK(fs::exists(dir / "bo" / "bo.csv"));
}
