#pragma once

// Config-driven building blocks shared by the command-line tool and the
// acceptance runner.
//
// Keys read here:
//   seed                      model init and training seed (default 0)
//   task.kind                 gp | wheel
//   task.kernel, task.dim_x   gp tasks
//   task.num_points, task.context_lo, task.context_hi, task.context_margin
//                             wheel tasks

#include "tnp/eval.hpp"
#include "tnp/io.hpp"
#include "tnp/training.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace tnp {

GpTaskConfig gp_task_config(const KeyValues& kv);
WheelTaskConfig wheel_task_config(const KeyValues& kv);
TaskSource make_task_source(const KeyValues& kv);
// train.* keys with train.seed defaulting to the top-level seed.
TrainConfig train_config(const KeyValues& kv);

// Trains the model described by kv into dir (model.tnpc, checkpoint.tnpc,
// train_metrics.jsonl, manifest.json). If dir already holds a finished run
// with the same config hash it is loaded instead; an unfinished run with the
// same hash resumes from its last checkpoint. Progress lines go to log when
// it is non-null.
LoadedModel train_or_load(const KeyValues& kv, const std::filesystem::path& dir, std::ostream* log = nullptr);

struct CheckLine {
  std::string name;
  bool pass = false;
  double value = 0.0;
  double threshold = 0.0;
};

// Central-difference gradient checks of every loss on miniature models
// (d_model 8, 2 layers). Passes when the error is below 1e-4.
std::vector<CheckLine> run_gradcheck_suite(std::uint64_t seed);

// Context invariance, target equivariance and mask-dependency probes for
// every variant and the CNP.
std::vector<CheckLine> run_property_suite(std::uint64_t seed, int n_probes = 200);

}  // namespace tnp
