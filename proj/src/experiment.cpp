#include "tnp/experiment.hpp"

#include "tnp/cnp.hpp"
#include "tnp/errors.hpp"
#include "tnp/gradcheck.hpp"
#include "tnp/tnp_model.hpp"

#include <fstream>
#include <ostream>

namespace tnp {

GpTaskConfig gp_task_config(const KeyValues& kv) {
  const KernelFamily family = parse_kernel(kv.get_string("task.kernel", "rbf"));
  const long long dim = kv.get_int("task.dim_x", 1);
  GpTaskConfig c;
  if (dim == 1) {
    c = GpTaskConfig::one_d(family);
  } else if (dim == 2) {
    c = GpTaskConfig::two_d();
  } else if (dim == 3) {
    c = GpTaskConfig::three_d();
  } else {
    throw ConfigError("task.dim_x must be 1, 2 or 3");
  }
  c.family = family;
  c.jitter = kv.get_double("task.jitter", c.jitter);
  c.validate();
  return c;
}

WheelTaskConfig wheel_task_config(const KeyValues& kv) {
  WheelTaskConfig c;
  c.num_points = static_cast<int>(kv.get_int("task.num_points", c.num_points));
  c.context.lo = static_cast<int>(kv.get_int("task.context_lo", c.context.lo));
  c.context.hi_exclusive = static_cast<int>(kv.get_int("task.context_hi", c.context.hi_exclusive));
  c.context.margin = static_cast<int>(kv.get_int("task.context_margin", c.context.margin));
  if (c.num_points < c.context.lo + c.context.margin || c.context.lo < 0)
    throw ConfigError("wheel tasks: num_points leaves no valid context count");
  return c;
}

TaskSource make_task_source(const KeyValues& kv) {
  const std::string kind = kv.get_string("task.kind", "gp");
  if (kind == "gp") {
    const GpTaskConfig c = gp_task_config(kv);
    return [c](Rng& rng, int batch) { return sample_gp_batch(rng, c, batch); };
  }
  if (kind == "wheel") {
    const WheelTaskConfig c = wheel_task_config(kv);
    return [c](Rng& rng, int batch) { return sample_wheel_batch(rng, c, batch); };
  }
  throw ConfigError("task.kind must be gp or wheel");
}

TrainConfig train_config(const KeyValues& kv) {
  KeyValues merged = kv;
  if (!kv.contains("train.seed")) merged.set("train.seed", kv.get_string("seed", "0"));
  return TrainConfig::from_values(merged);
}

namespace {

void write_atomic(const std::filesystem::path& path, const std::string& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  write_text_file(tmp, bytes);
  std::filesystem::rename(tmp, path);
}

std::string manifest_hash(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return "";
  try {
    return RunManifest::from_json(read_text_file(path)).config_hash();
  } catch (const ConfigError&) {
    return "";
  }
}

}  // namespace

LoadedModel train_or_load(const KeyValues& kv, const std::filesystem::path& dir, std::ostream* log) {
  const auto model_path = dir / "model.tnpc";
  const auto checkpoint_path = dir / "checkpoint.tnpc";
  const auto metrics_path = dir / "train_metrics.jsonl";
  const auto manifest_path = dir / "manifest.json";
  const bool same_run = manifest_hash(manifest_path) == kv.content_hash();
  if (same_run && std::filesystem::exists(model_path)) {
    if (log != nullptr) *log << "loading finished run from " << dir.string() << "\n";
    return load_model(model_path);
  }

  const TrainConfig tc = train_config(kv);
  const TaskSource source = make_task_source(kv);
  const std::uint64_t seed = kv.get_u64("seed", 0);

  RunManifest manifest;
  manifest.command = "train";
  manifest.config = kv;
  manifest.seed = seed;
  manifest.started = utc_timestamp();
  std::filesystem::create_directories(dir);
  write_atomic(manifest_path, manifest.to_json());

  std::unique_ptr<NeuralProcess> model;
  std::optional<AdamState> resume;
  if (same_run && std::filesystem::exists(checkpoint_path)) {
    LoadedModel loaded = load_model(checkpoint_path);
    model = std::move(loaded.model);
    resume = std::move(loaded.optimizer);
    if (log != nullptr) *log << "resuming at step " << (resume ? resume->step : 0) << "\n";
  } else {
    model = make_model(kv, seed);
    std::filesystem::remove(metrics_path);
  }

  std::ofstream metrics(metrics_path, std::ios::app);
  const auto on_log = [&](const TrainRecord& r) {
    write_metrics_record(metrics, {r.step, "train_loss", r.loss, tc.seed, ""});
    write_metrics_record(metrics, {r.step, "lr", r.lr, tc.seed, ""});
    if (log != nullptr) *log << "step " << r.step << " loss " << r.loss << " lr " << r.lr << "\n" << std::flush;
  };
  const auto on_checkpoint = [&](const NeuralProcess& m, const AdamState& state) {
    write_atomic(checkpoint_path, serialize_model(m, &state));
  };
  train_run(*model, tc, source, std::move(resume), on_checkpoint, on_log);

  write_atomic(model_path, serialize_model(*model));
  manifest.finished = utc_timestamp();
  manifest.artifacts = {model_path.string(), metrics_path.string(), checkpoint_path.string()};
  write_atomic(manifest_path, manifest.to_json());
  LoadedModel out = load_model(model_path);
  return out;
}

// ------------------------------------------------------------------ suites

namespace {

KeyValues mini_model(const std::string& variant) {
  KeyValues kv;
  kv.set("model.variant", variant);
  kv.set("model.d_model", "8");
  kv.set("model.n_layers", "2");
  kv.set("model.n_heads", "2");
  kv.set("model.ff_width", "16");
  kv.set("model.n_embed_layers", "2");
  kv.set("model.nd_extra_attention_layers", "1");
  kv.set("model.nd_projection_dim", "4");
  kv.set("model.nd_projection_layers", "2");
  kv.set("model.lowrank_rank", "3");
  return kv;
}

CheckLine gradcheck_line(const std::string& name, const NeuralProcess& model, const TapeObjective& objective) {
  const GradCheckResult r = finite_difference_check(objective, model.parameters());
  return {name, r.max_relative_error < 1e-4, r.max_relative_error, 1e-4};
}

}  // namespace

std::vector<CheckLine> run_gradcheck_suite(std::uint64_t seed) {
  std::vector<CheckLine> out;
  Rng rng(seed, 0x67726164);
  GpTaskConfig gp = GpTaskConfig::one_d();
  gp.min_points = 8;
  gp.max_points_exclusive = 9;
  gp.context = {3, 5, 3};
  const TaskBatch batch = sample_gp_batch(rng, gp, 2);

  for (const std::string variant : {"D", "ND", "A"}) {
    TnpModel model(ModelConfig::from_values(mini_model(variant)), seed);
    out.push_back(gradcheck_line("gradcheck TNP-" + variant, model, [&](const BoundParameters& p) {
      return model.loss(p, batch, {});
    }));
  }
  {
    KeyValues kv = mini_model("ND");
    kv.set("model.nd_covariance", "lowrank");
    TnpModel model(ModelConfig::from_values(kv), seed);
    out.push_back(gradcheck_line("gradcheck TNP-ND low-rank", model, [&](const BoundParameters& p) {
      return model.loss(p, batch, {});
    }));
  }
  {
    TnpModel model(ModelConfig::from_values(mini_model("A")), seed);
    out.push_back(gradcheck_line("gradcheck TNP-A pretraining", model, [&](const BoundParameters& p) {
      return pretraining_loss(model, p, batch);
    }));
  }
  {
    KeyValues kv = mini_model("D");
    kv.set("model.dim_x", "2");
    kv.set("model.dim_y", "5");
    TnpModel model(ModelConfig::from_values(kv), seed);
    Rng wrng(seed, 0x776865);
    const TaskBatch wheel = reward_dropout_mask(wrng, sample_wheel_batch(wrng, {12, {6, 8, 1}, 0.0, 1.0}, 2), 0.5);
    out.push_back(gradcheck_line("gradcheck TNP-D wheel reward drop", model, [&](const BoundParameters& p) {
      return model.loss(p, wheel, {});
    }));
  }
  {
    CnpConfig c;
    c.width = 8;
    c.encoder_layers = 2;
    c.decoder_layers = 2;
    CnpModel model(c, seed);
    out.push_back(gradcheck_line("gradcheck CNP", model, [&](const BoundParameters& p) {
      return model.loss(p, batch, {});
    }));
  }
  return out;
}

std::vector<CheckLine> run_property_suite(std::uint64_t seed, int n_probes) {
  std::vector<CheckLine> out;
  Rng rng(seed, 0x70726f70);
  GpTaskConfig gp = GpTaskConfig::one_d();
  const TaskBatch task = sample_gp_batch(rng, gp, 1);
  GpTaskConfig small = gp;
  small.min_points = 9;
  small.max_points_exclusive = 10;
  small.context = {5, 6, 3};
  const TaskBatch four_targets = sample_gp_batch(rng, small, 1);

  std::vector<std::pair<std::string, std::unique_ptr<NeuralProcess>>> models;
  for (const std::string v : {"D", "ND", "A"}) {
    KeyValues kv;
    kv.set("model.variant", v);
    models.emplace_back("TNP-" + v, make_model(kv, seed));
  }
  {
    KeyValues kv;
    kv.set("model.kind", "cnp");
    models.emplace_back("CNP", make_model(kv, seed));
  }

  auto add = [&](const std::string& name, const PropertyResult& r, double tol) {
    out.push_back({name, r.pass, r.max_deviation, tol});
  };
  for (const auto& [name, model] : models) {
    add("context invariance " + name, check_context_invariance(*model, task, 10, 1e-9, seed), 1e-9);
    const auto* t = dynamic_cast<const TnpModel*>(model.get());
    const bool nd = t != nullptr && t->config().variant == Variant::non_diagonal;
    const bool ar = t != nullptr && t->config().variant == Variant::autoregressive;
    const double tol = nd ? 1e-8 : 1e-9;
    add("target equivariance " + name + (ar ? " (symmetrized, 4 targets)" : ""),
        check_target_equivariance(*model, ar ? four_targets : task, tol, seed), tol);
    if (t != nullptr) {
      const PropertyResult r = check_mask_dependency(*t, task, n_probes, 0.0, seed);
      out.push_back({"mask probes " + name + " (" + std::to_string(r.checks) + " probes)", r.pass && r.checks == n_probes,
                     r.max_deviation, 0.0});
    }
  }
  return out;
}

}  // namespace tnp
