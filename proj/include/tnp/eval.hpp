#pragma once

// Meta-regression metrics and the property harnesses (context invariance,
// target equivariance, mask soundness).

#include "tnp/model.hpp"
#include "tnp/tnp_model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace tnp {

struct MetricReport {
  std::string metric;
  std::vector<double> per_task;
  double mean = 0.0;
  double stddev = 0.0;  // sample std (n - 1); 0 for a single task
  std::size_t count = 0;
  std::uint64_t seed = 0;

  static MetricReport from_values(std::string metric, std::vector<double> values, std::uint64_t seed);
};

enum class LlMode { diag, joint, autoregressive, symmetrized };
LlMode parse_ll_mode(std::string_view name);
std::string_view ll_mode_name(LlMode mode);

struct EvalOptions {
  LlMode mode = LlMode::diag;
  int n_perms = 8;  // symmetrized mode
  std::uint64_t seed = 0;
  int threads = 1;
};

// Held-out tasks grouped in batches; per-task values follow batch order.
std::vector<TaskBatch> make_gp_eval_set(const GpTaskConfig& config, int num_tasks, int batch, std::uint64_t seed);

// Mode a model evaluates in by default: D/CNP diag, ND joint, A autoregressive.
LlMode default_ll_mode(const NeuralProcess& model);

// Mean per-target log-density per task. Throws ConfigError on a mode the
// model cannot produce.
MetricReport eval_log_likelihood(const NeuralProcess& model, const std::vector<TaskBatch>& tasks,
                                 const EvalOptions& options);
MetricReport eval_rmse(const NeuralProcess& model, const std::vector<TaskBatch>& tasks, const EvalOptions& options = {});
MetricReport eval_calibration_error(const NeuralProcess& model, const std::vector<TaskBatch>& tasks,
                                    const EvalOptions& options = {});

// The 19 levels 0.05, 0.10, ..., 0.95.
std::vector<double> calibration_levels();
// Mean over levels of |fraction of y below the predicted q-quantile - q|.
double calibration_error(const Vector& mean, const Vector& sigma, const Vector& y);
double rmse(const Vector& mean, const Vector& y);

struct PropertyResult {
  bool pass = false;
  double max_deviation = 0.0;
  int checks = 0;
};

// Predictions compared under random context permutations of a single task.
PropertyResult check_context_invariance(const NeuralProcess& model, const TaskBatch& task, int n_perms, double tol,
                                        std::uint64_t seed);
// D and CNP: permuted (mean, sigma); ND: mean and P Sigma P^T; A: exact
// symmetrized log-likelihood (throws ConfigError("intractable group") past
// 4 targets).
PropertyResult check_target_equivariance(const NeuralProcess& model, const TaskBatch& task, double tol,
                                         std::uint64_t seed);
// Randomizes a token the mask denies to some row and checks that row of the
// backbone output is unchanged. Each probe picks a random denied pair; a
// row's own token is never probed since it reaches the row through the
// residual path.
PropertyResult check_mask_dependency(const TnpModel& model, const TaskBatch& task, int n_probes, double tol,
                                     std::uint64_t seed);

}  // namespace tnp
