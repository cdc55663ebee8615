// Command-line entry point: train, eval, bandit, bo, gradcheck, props.
//
// Exit codes: 0 success, 1 configuration or usage error, 2 numeric failure
// (including unreadable or corrupt checkpoints).

#include "tnp/decision.hpp"
#include "tnp/errors.hpp"
#include "tnp/experiment.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace tnp;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string checkpoint;
};

KeyValues resolve_config(const CommonArgs& args) {
  KeyValues kv;
  if (!args.config_path.empty()) kv = KeyValues::load(args.config_path);
  for (const auto& s : args.sets) kv.set_assignment(s);
  if (args.seed) kv.set("seed", std::to_string(*args.seed));
  if (!args.checkpoint.empty()) kv.set("checkpoint", args.checkpoint);
  return kv;
}

fs::path out_dir(const CommonArgs& args, const char* command) {
  return args.out_dir.empty() ? fs::path("runs") / command : fs::path(args.out_dir);
}

RunManifest begin_manifest(const std::string& command, const KeyValues& kv, const fs::path& dir) {
  RunManifest m;
  m.command = command;
  m.config = kv;
  m.seed = kv.get_u64("seed", 0);
  m.started = utc_timestamp();
  write_text_file(dir / "manifest.json", m.to_json());
  return m;
}

void finish_manifest(RunManifest& m, const fs::path& dir, std::vector<std::string> artifacts) {
  m.finished = utc_timestamp();
  m.artifacts = std::move(artifacts);
  write_text_file(dir / "manifest.json", m.to_json());
}

LoadedModel require_checkpoint(const KeyValues& kv) {
  const std::string path = kv.get_string("checkpoint", "");
  if (path.empty()) throw ConfigError("this command needs --checkpoint <path>");
  return load_model(path);
}

int cmd_train(const CommonArgs& args) {
  const KeyValues kv = resolve_config(args);
  const fs::path dir = out_dir(args, "train");
  const LoadedModel loaded = train_or_load(kv, dir, &std::cout);
  std::cout << "model: " << (dir / "model.tnpc").string() << " (" << loaded.model->parameters().scalar_count()
            << " parameters)\n";
  return 0;
}

int cmd_eval(const CommonArgs& args) {
  const KeyValues kv = resolve_config(args);
  const fs::path dir = out_dir(args, "eval");
  RunManifest manifest = begin_manifest("eval", kv, dir);
  const LoadedModel loaded = require_checkpoint(kv);
  KeyValues task = kv;
  task.set("task.kernel", kv.get_string("eval.kernel", kv.get_string("task.kernel", "rbf")));
  task.set("task.dim_x", std::to_string(loaded.model->dim_x()));
  const GpTaskConfig gp = gp_task_config(task);
  const std::uint64_t seed = kv.get_u64("eval.seed", kv.get_u64("seed", 0));
  const auto tasks = make_gp_eval_set(gp, static_cast<int>(kv.get_int("eval.tasks", 3000)),
                                      static_cast<int>(kv.get_int("eval.batch", 16)), seed);
  EvalOptions opt;
  opt.mode = kv.contains("eval.mode") ? parse_ll_mode(kv.require_string("eval.mode")) : default_ll_mode(*loaded.model);
  opt.n_perms = static_cast<int>(kv.get_int("eval.n_perms", opt.n_perms));
  opt.seed = seed;
  opt.threads = static_cast<int>(kv.get_int("eval.threads", 1));

  const auto path = dir / "eval_metrics.jsonl";
  std::ofstream out(path, std::ios::trunc);
  for (const MetricReport& r : {eval_log_likelihood(*loaded.model, tasks, opt), eval_rmse(*loaded.model, tasks, opt),
                                eval_calibration_error(*loaded.model, tasks, opt)}) {
    for (std::size_t i = 0; i < r.per_task.size(); ++i)
      write_metrics_record(out, {static_cast<long long>(i), r.metric, r.per_task[i], seed, ""});
    std::cout << r.metric << " " << format_double(r.mean) << " +- " << format_double(r.stddev) << " (" << r.count
              << " tasks, mode " << ll_mode_name(opt.mode) << ")\n";
  }
  finish_manifest(manifest, dir, {path.string()});
  return 0;
}

int cmd_bandit(const CommonArgs& args) {
  const KeyValues kv = resolve_config(args);
  const fs::path dir = out_dir(args, "bandit");
  RunManifest manifest = begin_manifest("bandit", kv, dir);
  BanditConfig bc;
  bc.delta = kv.get_double("bandit.delta", bc.delta);
  bc.steps = static_cast<int>(kv.get_int("bandit.steps", 500));
  bc.kappa = kv.get_double("bandit.kappa", bc.kappa);
  bc.window = static_cast<int>(kv.get_int("bandit.window", bc.window));
  const std::string policy = kv.get_string("bandit.policy", "ucb");
  const int seeds = static_cast<int>(kv.get_int("bandit.seeds", 10));
  const std::uint64_t seed = kv.get_u64("seed", 0);

  std::optional<LoadedModel> loaded;
  std::unique_ptr<BanditModel> model;
  if (policy == "ucb") {
    loaded = require_checkpoint(kv);
    model = std::make_unique<NpBanditModel>(*loaded->model);
  } else if (policy == "oracle") {
    model = std::make_unique<OracleBanditModel>(WheelProblem{bc.delta});
  } else if (policy != "uniform") {
    throw ConfigError("bandit.policy must be ucb, oracle or uniform");
  }
  std::vector<BanditState> runs, uniform;
  const auto path = dir / "regret.jsonl";
  std::ofstream out(path, std::ios::trunc);
  for (int s = 0; s < seeds; ++s) {
    const std::uint64_t episode_seed = seed + static_cast<std::uint64_t>(s);
    BanditConfig c = bc;
    c.policy = policy == "uniform" ? BanditPolicy::uniform : BanditPolicy::ucb;
    runs.push_back(run_bandit_episode(model.get(), c, episode_seed));
    c.policy = BanditPolicy::uniform;
    uniform.push_back(run_bandit_episode(nullptr, c, episode_seed));
    double cumulative = 0.0;
    for (std::size_t t = 0; t < runs.back().regrets.size(); ++t) {
      cumulative += runs.back().regrets[t];
      write_metrics_record(out, {static_cast<long long>(t + 1), "cumulative_regret", cumulative, episode_seed, ""});
    }
  }
  const RegretSummary summary = regret_metrics(runs, uniform);
  out.close();
  std::ifstream in(path);
  write_text_file(dir / "regret.csv", metrics_to_csv(read_metrics_jsonl(in), "cumulative_regret"));
  std::cout << "cumulative regret " << format_double(summary.cumulative) << " (normalized "
            << format_double(summary.cumulative_normalized) << ")\nsimple regret " << format_double(summary.simple)
            << " (normalized " << format_double(summary.simple_normalized) << ")\n";
  finish_manifest(manifest, dir, {path.string(), (dir / "regret.csv").string()});
  return 0;
}

int cmd_bo(const CommonArgs& args) {
  const KeyValues kv = resolve_config(args);
  const fs::path dir = out_dir(args, "bo");
  RunManifest manifest = begin_manifest("bo", kv, dir);
  BoConfig bc;
  bc.iterations = static_cast<int>(kv.get_int("bo.iterations", bc.iterations));
  bc.init_count = static_cast<int>(kv.get_int("bo.init_count", bc.init_count));
  bc.kappa = kv.get_double("bo.kappa", bc.kappa);
  bc.validate();
  const std::string objective_name = kv.get_string("bo.objective", "gp");
  const int runs = static_cast<int>(kv.get_int("bo.runs", 20));
  const std::uint64_t seed = kv.get_u64("seed", 0);
  const bool random_only = kv.get_string("bo.surrogate", "model") == "random";

  std::optional<LoadedModel> loaded;
  if (!random_only) loaded = require_checkpoint(kv);
  const auto path = dir / "bo.jsonl";
  std::ofstream out(path, std::ios::trunc);
  double model_final = 0.0, random_final = 0.0;
  for (int r = 0; r < runs; ++r) {
    const std::uint64_t run_seed = seed + static_cast<std::uint64_t>(r);
    BoObjective objective;
    if (objective_name == "gp") {
      Rng rng(run_seed, 0x6f626a);
      KernelSpec k;
      k.family = parse_kernel(kv.get_string("bo.kernel", "rbf"));
      k.lengthscale = rng.uniform(0.6, 1.0);
      k.output_scale = rng.uniform(0.1, 1.0);
      objective = gp_objective(rng, k, -2.0, 2.0);
    } else {
      objective = benchmark_objective(objective_name);
    }
    const BoState baseline = run_random_search(objective, bc, run_seed);
    for (std::size_t i = 0; i < baseline.regret_trace.size(); ++i)
      write_metrics_record(out, {static_cast<long long>(i), "random_simple_regret", baseline.regret_trace[i], run_seed, objective.name});
    random_final += baseline.regret_trace.back() / runs;
    if (loaded) {
      const double lo = kv.get_double("bo.train_lo", objective.dim == 1 ? -2.0 : 0.0);
      const double hi = kv.get_double("bo.train_hi", objective.dim == 1 ? 2.0 : 1.0);
      const NpSurrogate surrogate(*loaded->model, objective.lower, objective.upper, lo, hi);
      const BoState s = run_bo(surrogate, objective, bc, run_seed);
      for (std::size_t i = 0; i < s.regret_trace.size(); ++i)
        write_metrics_record(out, {static_cast<long long>(i), "simple_regret", s.regret_trace[i], run_seed, objective.name});
      model_final += s.regret_trace.back() / runs;
    }
  }
  out.close();
  std::ifstream in(path);
  const auto records = read_metrics_jsonl(in);
  write_text_file(dir / "bo.csv", metrics_to_csv(records, loaded ? "simple_regret" : "random_simple_regret"));
  if (loaded) std::cout << "final simple regret " << format_double(model_final) << "\n";
  std::cout << "random search final simple regret " << format_double(random_final) << "\n";
  finish_manifest(manifest, dir, {path.string(), (dir / "bo.csv").string()});
  return 0;
}

int print_checks(const std::vector<CheckLine>& lines) {
  bool ok = true;
  for (const auto& l : lines) {
    std::cout << (l.pass ? "PASS " : "FAIL ") << l.name << ": " << l.value << " (threshold " << l.threshold << ")\n";
    ok = ok && l.pass;
  }
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformer neural processes: training, evaluation and decision harnesses"};
  app.require_subcommand(1);
  CommonArgs args;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", args.config_path, "key=value config file");
    sub->add_option("--set", args.sets, "override, key=value (repeatable)");
    sub->add_option("--seed", args.seed, "seed");
    sub->add_option("--out-dir", args.out_dir, "output directory");
    sub->add_option("--checkpoint", args.checkpoint, "model checkpoint");
  };
  auto* train = app.add_subcommand("train", "train a model");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on held-out GP tasks");
  auto* bandit = app.add_subcommand("bandit", "wheel bandit episodes");
  auto* bo = app.add_subcommand("bo", "Bayesian optimization runs");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  auto* props = app.add_subcommand("props", "context/target symmetry and mask probes");
  for (auto* sub : {train, eval, bandit, bo, gradcheck, props}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*train) return cmd_train(args);
    if (*eval) return cmd_eval(args);
    if (*bandit) return cmd_bandit(args);
    if (*bo) return cmd_bo(args);
    const std::uint64_t seed = resolve_config(args).get_u64("seed", 0);
    if (*gradcheck) return print_checks(run_gradcheck_suite(seed));
    if (*props) return print_checks(run_property_suite(seed));
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DimensionError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
