#pragma once

// Meta-training loop: Adam with global gradient-norm clipping and a cosine
// learning-rate schedule. The batch and dropout streams for step t are
// derived from (seed, t) only, so a run resumed from a checkpoint follows
// the uninterrupted trajectory exactly.

#include "tnp/model.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace tnp {

enum class Objective { meta, pretrain };
Objective parse_objective(std::string_view name);

struct TrainConfig {
  long long steps = 20000;
  int batch_size = 16;
  double lr_max = 5e-4;
  double lr_min = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 10.0;
  std::uint64_t seed = 0;
  Objective objective = Objective::meta;
  double reward_drop = 0.0;
  long long log_interval = 100;
  long long checkpoint_interval = 0;  // 0 disables checkpoints

  // steps may be 0 (returns the initial parameters). Throws ConfigError.
  void validate() const;
  static TrainConfig from_values(const KeyValues& kv);
  KeyValues to_values() const;
};

double cosine_lr(long long step, long long total, double lr_max, double lr_min);

// Hides each context label entry with probability `rate` by clearing its
// observed flag; the token then carries 0 there while the label stays in the
// batch as a regression target. Target rows are untouched.
TaskBatch reward_dropout_mask(Rng& rng, const TaskBatch& batch, double rate);

// Loss the optimizer minimizes. Throws NumericError("non-finite loss ...")
// naming the batch index when the value is not finite.
Var training_loss(const NeuralProcess& model, const BoundParameters& params, const TrainConfig& config,
                  const TaskBatch& batch, const Dropout& dropout = {}, long long batch_index = 0);

struct AdamState {
  long long step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

struct TrainRecord {
  long long step = 0;  // 1-based step that produced the loss
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

// Produces the training batch for one step from a dedicated stream.
using TaskSource = std::function<TaskBatch(Rng& rng, int batch_size)>;
// Called every checkpoint_interval steps and after the last step.
using CheckpointHook = std::function<void(const NeuralProcess& model, const AdamState& state)>;
using LogHook = std::function<void(const TrainRecord& record)>;

struct TrainResult {
  AdamState state;
  std::vector<TrainRecord> history;  // one record per log interval
  double final_loss = 0.0;           // loss of the last step
};

// Trains in place. `resume` continues from a saved optimizer state whose
// parameters are already loaded into the model.
TrainResult train_run(NeuralProcess& model, const TrainConfig& config, const TaskSource& source,
                      std::optional<AdamState> resume = std::nullopt, const CheckpointHook& checkpoint = {},
                      const LogHook& log = {});

// One Adam update on the model's parameters; returns the pre-clip gradient norm.
double adam_step(ParameterSet& params, AdamState& state, const std::vector<Matrix>& grads, const TrainConfig& config,
                 double lr);

}  // namespace tnp
