#include "tnp/training.hpp"

#include "tnp/errors.hpp"
#include "tnp/tnp_model.hpp"

#include <cmath>
#include <numbers>

namespace tnp {

Objective parse_objective(std::string_view name) {
  if (name == "meta") return Objective::meta;
  if (name == "pretrain") return Objective::pretrain;
  throw ConfigError("train.objective must be meta or pretrain");
}

void TrainConfig::validate() const {
  if (steps < 0) throw ConfigError("train.steps must be non-negative");
  if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
  if (!(lr_max >= 0.0) || !(lr_min >= 0.0) || lr_min > lr_max) throw ConfigError("need 0 <= train.lr_min <= train.lr_max");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
  if (!(clip_norm > 0.0)) throw ConfigError("train.clip_norm must be positive");
  if (!(reward_drop >= 0.0 && reward_drop <= 1.0)) throw ConfigError("train.reward_drop must lie in [0, 1]");
  if (log_interval < 1) throw ConfigError("train.log_interval must be positive");
  if (checkpoint_interval < 0) throw ConfigError("train.checkpoint_interval must be non-negative");
}

TrainConfig TrainConfig::from_values(const KeyValues& kv) {
  TrainConfig c;
  c.steps = kv.get_int("train.steps", c.steps);
  c.batch_size = static_cast<int>(kv.get_int("train.batch_size", c.batch_size));
  c.lr_max = kv.get_double("train.lr_max", c.lr_max);
  c.lr_min = kv.get_double("train.lr_min", c.lr_min);
  c.beta1 = kv.get_double("train.beta1", c.beta1);
  c.beta2 = kv.get_double("train.beta2", c.beta2);
  c.adam_eps = kv.get_double("train.adam_eps", c.adam_eps);
  c.clip_norm = kv.get_double("train.clip_norm", c.clip_norm);
  c.seed = kv.get_u64("train.seed", c.seed);
  c.objective = parse_objective(kv.get_string("train.objective", "meta"));
  c.reward_drop = kv.get_double("train.reward_drop", c.reward_drop);
  c.log_interval = kv.get_int("train.log_interval", c.log_interval);
  c.checkpoint_interval = kv.get_int("train.checkpoint_interval", c.checkpoint_interval);
  c.validate();
  return c;
}

KeyValues TrainConfig::to_values() const {
  KeyValues kv;
  kv.set("train.steps", std::to_string(steps));
  kv.set("train.batch_size", std::to_string(batch_size));
  kv.set("train.lr_max", format_double(lr_max));
  kv.set("train.lr_min", format_double(lr_min));
  kv.set("train.beta1", format_double(beta1));
  kv.set("train.beta2", format_double(beta2));
  kv.set("train.adam_eps", format_double(adam_eps));
  kv.set("train.clip_norm", format_double(clip_norm));
  kv.set("train.seed", std::to_string(seed));
  kv.set("train.objective", objective == Objective::meta ? "meta" : "pretrain");
  kv.set("train.reward_drop", format_double(reward_drop));
  kv.set("train.log_interval", std::to_string(log_interval));
  kv.set("train.checkpoint_interval", std::to_string(checkpoint_interval));
  return kv;
}

double cosine_lr(long long step, long long total, double lr_max, double lr_min) {
  if (total <= 0) return lr_max;
  if (step == total) return lr_min;
  const double t = static_cast<double>(step) / static_cast<double>(total);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

TaskBatch reward_dropout_mask(Rng& rng, const TaskBatch& batch, double rate) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("reward drop rate must lie in [0, 1]");
  TaskBatch out = batch;
  if (out.observed.size() == 0) out.observed = Matrix::Ones(out.y.rows(), out.y.cols());
  for (int b = 0; b < out.batch; ++b)
    for (int i = 0; i < out.num_context; ++i)
      for (int j = 0; j < out.dim_y; ++j)
        if (rng.bernoulli(rate)) out.observed(out.row(b, i), j) = 0.0;
  return out;
}

Var training_loss(const NeuralProcess& model, const BoundParameters& params, const TrainConfig& config,
                  const TaskBatch& batch, const Dropout& dropout, long long batch_index) {
  Var loss;
  if (config.objective == Objective::pretrain) {
    const auto* tnp_model = dynamic_cast<const TnpModel*>(&model);
    if (tnp_model == nullptr) throw ConfigError("pretraining needs a TNP model");
    loss = pretraining_loss(*tnp_model, params, batch, dropout);
  } else {
    loss = model.loss(params, batch, dropout);
  }
  if (!std::isfinite(loss.item()))
    throw NumericError("non-finite loss at batch " + std::to_string(batch_index));
  return loss;
}

double adam_step(ParameterSet& params, AdamState& state, const std::vector<Matrix>& grads, const TrainConfig& config,
                 double lr) {
  const auto count = static_cast<std::size_t>(params.size());
  if (grads.size() != count) throw DimensionError("adam_step: gradient count mismatch");
  if (state.m.size() != count) {
    state.m.clear();
    state.v.clear();
    for (std::size_t i = 0; i < count; ++i) {
      state.m.push_back(Matrix::Zero(params[static_cast<int>(i)].rows(), params[static_cast<int>(i)].cols()));
      state.v.push_back(state.m.back());
    }
  }
  double sq = 0.0;
  for (const auto& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  const double clip = norm > config.clip_norm ? config.clip_norm / norm : 1.0;

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < count; ++i) {
    const auto g = (grads[i] * clip).array();
    state.m[i].array() = config.beta1 * state.m[i].array() + (1.0 - config.beta1) * g;
    state.v[i].array() = config.beta2 * state.v[i].array() + (1.0 - config.beta2) * g.square();
    params[static_cast<int>(i)].array() -=
        lr * (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + config.adam_eps);
  }
  return norm;
}

TrainResult train_run(NeuralProcess& model, const TrainConfig& config, const TaskSource& source,
                      std::optional<AdamState> resume, const CheckpointHook& checkpoint, const LogHook& log) {
  config.validate();
  TrainResult result;
  if (resume) result.state = std::move(*resume);
  if (result.state.step > config.steps) throw ConfigError("resume step is past train.steps");
  const Rng root(config.seed, 0x747261696e);

  double interval_loss = 0.0;
  long long interval_count = 0;
  while (result.state.step < config.steps) {
    const long long t = result.state.step;
    Rng batch_rng = root.split(static_cast<std::uint64_t>(t) * 3);
    Rng drop_rng = root.split(static_cast<std::uint64_t>(t) * 3 + 1);
    Rng dropout_rng = root.split(static_cast<std::uint64_t>(t) * 3 + 2);
    TaskBatch batch = source(batch_rng, config.batch_size);
    if (config.reward_drop > 0.0) batch = reward_dropout_mask(drop_rng, batch, config.reward_drop);

    Tape tape;
    BoundParameters bound(tape, model.parameters());
    double rate = 0.0;
    if (const auto* tnp_model = dynamic_cast<const TnpModel*>(&model)) rate = tnp_model->config().dropout;
    const Dropout dropout{rate, rate > 0.0 ? &dropout_rng : nullptr};
    const Var loss = training_loss(model, bound, config, batch, dropout, t);
    tape.backward(loss);
    std::vector<Matrix> grads;
    grads.reserve(static_cast<std::size_t>(bound.size()));
    for (int i = 0; i < bound.size(); ++i) grads.push_back(tape.grad(bound[i]));

    const double lr = cosine_lr(t, config.steps, config.lr_max, config.lr_min);
    const double norm = adam_step(model.parameters(), result.state, grads, config, lr);
    result.final_loss = loss.item();
    interval_loss += loss.item();
    ++interval_count;

    const long long done = result.state.step;
    if (done % config.log_interval == 0 || done == config.steps) {
      const TrainRecord record{done, interval_loss / static_cast<double>(interval_count), lr, norm};
      result.history.push_back(record);
      if (log) log(record);
      interval_loss = 0.0;
      interval_count = 0;
    }
    if (checkpoint && ((config.checkpoint_interval > 0 && done % config.checkpoint_interval == 0) ||
                       done == config.steps))
      checkpoint(model, result.state);
  }
  return result;
}

}  // namespace tnp
