#include "tnp/eval.hpp"

#include "tnp/errors.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <thread>

namespace tnp {

MetricReport MetricReport::from_values(std::string metric, std::vector<double> values, std::uint64_t seed) {
  MetricReport r;
  r.metric = std::move(metric);
  r.per_task = std::move(values);
  r.count = r.per_task.size();
  r.seed = seed;
  if (r.count == 0) return r;
  r.mean = std::accumulate(r.per_task.begin(), r.per_task.end(), 0.0) / static_cast<double>(r.count);
  if (r.count > 1) {
    double ss = 0.0;
    for (const double v : r.per_task) ss += (v - r.mean) * (v - r.mean);
    r.stddev = std::sqrt(ss / static_cast<double>(r.count - 1));
  }
  return r;
}

LlMode parse_ll_mode(std::string_view name) {
  if (name == "diag") return LlMode::diag;
  if (name == "joint") return LlMode::joint;
  if (name == "autoregressive") return LlMode::autoregressive;
  if (name == "symmetrized") return LlMode::symmetrized;
  throw ConfigError("eval mode must be diag, joint, autoregressive or symmetrized");
}

std::string_view ll_mode_name(LlMode mode) {
  switch (mode) {
    case LlMode::diag: return "diag";
    case LlMode::joint: return "joint";
    case LlMode::autoregressive: return "autoregressive";
    case LlMode::symmetrized: return "symmetrized";
  }
  return "diag";
}

std::vector<TaskBatch> make_gp_eval_set(const GpTaskConfig& config, int num_tasks, int batch, std::uint64_t seed) {
  if (num_tasks < 1 || batch < 1) throw ConfigError("eval set needs at least one task");
  const Rng root(seed, 0x6576616c);
  std::vector<TaskBatch> out;
  for (int done = 0, i = 0; done < num_tasks; ++i) {
    const int size = std::min(batch, num_tasks - done);
    Rng rng = root.split(static_cast<std::uint64_t>(i));
    out.push_back(sample_gp_batch(rng, config, size));
    done += size;
  }
  return out;
}

LlMode default_ll_mode(const NeuralProcess& model) {
  if (const auto* t = dynamic_cast<const TnpModel*>(&model)) {
    switch (t->config().variant) {
      case Variant::autoregressive: return LlMode::autoregressive;
      case Variant::non_diagonal: return LlMode::joint;
      case Variant::diagonal: return LlMode::diag;
    }
  }
  return LlMode::diag;
}

namespace {

// Runs fn(batch index) -> per-task values over all batches, optionally on
// several threads, and concatenates in batch order.
std::vector<double> per_task_values(const std::vector<TaskBatch>& tasks, int threads,
                                    const std::function<std::vector<double>(std::size_t)>& fn) {
  std::vector<std::vector<double>> parts(tasks.size());
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || tasks.size() < 2) {
    for (std::size_t i = 0; i < tasks.size(); ++i) parts[i] = fn(i);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < tasks.size(); i += workers) parts[i] = fn(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  std::vector<double> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

const TnpModel& require_variant(const NeuralProcess& model, Variant v, LlMode mode) {
  const auto* t = dynamic_cast<const TnpModel*>(&model);
  if (t == nullptr || t->config().variant != v)
    throw ConfigError("eval mode " + std::string(ll_mode_name(mode)) + " does not match the model");
  return *t;
}

}  // namespace

MetricReport eval_log_likelihood(const NeuralProcess& model, const std::vector<TaskBatch>& tasks,
                                 const EvalOptions& options) {
  const LlMode mode = options.mode;
  if (mode == LlMode::diag) {
    const auto* t = dynamic_cast<const TnpModel*>(&model);
    if (t != nullptr && t->config().variant != Variant::diagonal)
      throw ConfigError("eval mode diag needs TNP-D or CNP");
  } else if (mode == LlMode::joint) {
    require_variant(model, Variant::non_diagonal, mode);
  } else {
    require_variant(model, Variant::autoregressive, mode);
  }

  auto values = per_task_values(tasks, options.threads, [&](std::size_t i) {
    const TaskBatch& batch = tasks[i];
    const int n = batch.num_targets();
    std::vector<double> out(static_cast<std::size_t>(batch.batch));
    switch (mode) {
      case LlMode::diag: {
        const DiagonalPrediction pred = model.predict_marginals(batch);
        for (int b = 0; b < batch.batch; ++b) {
          double s = 0.0;
          for (int d = 0; d < batch.dim_y; ++d)
            s += log_likelihood_diag(pred.task_mean(b, d), pred.task_sigma(b, d), batch.target_y(b, d));
          out[static_cast<std::size_t>(b)] = s / batch.dim_y;
        }
        break;
      }
      case LlMode::joint: {
        const auto pred = predict_joint(dynamic_cast<const TnpModel&>(model), batch);
        for (int b = 0; b < batch.batch; ++b) {
          const auto bi = static_cast<std::size_t>(b);
          out[bi] = pred.log_likelihood(bi, batch.target_y(b));
        }
        break;
      }
      case LlMode::autoregressive: {
        const Vector ll = autoregressive_log_likelihood(dynamic_cast<const TnpModel&>(model), batch);
        for (int b = 0; b < batch.batch; ++b) out[static_cast<std::size_t>(b)] = ll(b) / n;
        break;
      }
      case LlMode::symmetrized: {
        const Vector ll = symmetrized_log_likelihood(dynamic_cast<const TnpModel&>(model), batch, options.n_perms,
                                                     mix64(options.seed ^ (0x9e37ull * (i + 1))));
        for (int b = 0; b < batch.batch; ++b) out[static_cast<std::size_t>(b)] = ll(b) / n;
        break;
      }
    }
    return out;
  });
  return MetricReport::from_values("log_likelihood", std::move(values), options.seed);
}

double rmse(const Vector& mean, const Vector& y) {
  if (mean.size() != y.size() || mean.size() == 0) throw DimensionError("rmse: length mismatch");
  return std::sqrt((mean - y).squaredNorm() / static_cast<double>(y.size()));
}

std::vector<double> calibration_levels() {
  std::vector<double> q;
  for (int i = 1; i <= 19; ++i) q.push_back(0.05 * i);
  return q;
}

double calibration_error(const Vector& mean, const Vector& sigma, const Vector& y) {
  if (mean.size() != y.size() || sigma.size() != y.size() || y.size() == 0)
    throw DimensionError("calibration_error: length mismatch");
  const boost::math::normal_distribution<double> unit(0.0, 1.0);
  double total = 0.0;
  const auto levels = calibration_levels();
  for (const double q : levels) {
    const double zq = boost::math::quantile(unit, q);
    double below = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i)
      if (y(i) < mean(i) + sigma(i) * zq) below += 1.0;
    total += std::abs(below / static_cast<double>(y.size()) - q);
  }
  return total / static_cast<double>(levels.size());
}

namespace {

MetricReport marginal_metric(const NeuralProcess& model, const std::vector<TaskBatch>& tasks,
                             const EvalOptions& options, const std::string& name,
                             const std::function<double(const Vector&, const Vector&, const Vector&)>& fn) {
  auto values = per_task_values(tasks, options.threads, [&](std::size_t i) {
    const TaskBatch& batch = tasks[i];
    const DiagonalPrediction pred = model.predict_marginals(batch);
    std::vector<double> out;
    for (int b = 0; b < batch.batch; ++b) {
      double s = 0.0;
      for (int d = 0; d < batch.dim_y; ++d) s += fn(pred.task_mean(b, d), pred.task_sigma(b, d), batch.target_y(b, d));
      out.push_back(s / batch.dim_y);
    }
    return out;
  });
  return MetricReport::from_values(name, std::move(values), options.seed);
}

}  // namespace

MetricReport eval_rmse(const NeuralProcess& model, const std::vector<TaskBatch>& tasks, const EvalOptions& options) {
  return marginal_metric(model, tasks, options, "rmse",
                         [](const Vector& mu, const Vector&, const Vector& y) { return rmse(mu, y); });
}

MetricReport eval_calibration_error(const NeuralProcess& model, const std::vector<TaskBatch>& tasks,
                                    const EvalOptions& options) {
  return marginal_metric(model, tasks, options, "calibration_error", calibration_error);
}

// ---------------------------------------------------------------- properties

namespace {

struct Outputs {
  Matrix mean;
  Matrix sigma;
  std::vector<Matrix> covariance;  // ND only
};

Outputs predictive_outputs(const NeuralProcess& model, const TaskBatch& task) {
  Outputs out;
  const auto* t = dynamic_cast<const TnpModel*>(&model);
  if (t != nullptr && t->config().variant == Variant::non_diagonal) {
    const auto joint = predict_joint(*t, task);
    out.mean = joint.mean[0];
    out.covariance.push_back(joint.covariance(0));
    out.sigma = out.covariance[0].diagonal().cwiseSqrt();
    return out;
  }
  const DiagonalPrediction pred = model.predict_marginals(task);
  out.mean = pred.mean;
  out.sigma = pred.sigma;
  return out;
}

void require_single(const TaskBatch& task) {
  if (task.batch != 1) throw DimensionError("property checks take a single task");
}

}  // namespace

PropertyResult check_context_invariance(const NeuralProcess& model, const TaskBatch& task, int n_perms, double tol,
                                        std::uint64_t seed) {
  require_single(task);
  if (n_perms < 1) throw ConfigError("n_perms must be >= 1");
  const Outputs base = predictive_outputs(model, task);
  Rng rng(seed, 0x63747869);
  PropertyResult r;
  for (int p = 0; p < n_perms; ++p) {
    std::vector<int> order = rng.permutation(task.num_context);
    for (int k = task.num_context; k < task.num_points; ++k) order.push_back(k);
    const Outputs other = predictive_outputs(model, task.reordered(order));
    double dev = std::max((other.mean - base.mean).cwiseAbs().maxCoeff(), (other.sigma - base.sigma).cwiseAbs().maxCoeff());
    if (!base.covariance.empty()) dev = std::max(dev, (other.covariance[0] - base.covariance[0]).cwiseAbs().maxCoeff());
    r.max_deviation = std::max(r.max_deviation, dev);
    ++r.checks;
  }
  r.pass = r.max_deviation <= tol;
  return r;
}

PropertyResult check_target_equivariance(const NeuralProcess& model, const TaskBatch& task, double tol,
                                         std::uint64_t seed) {
  require_single(task);
  const int m = task.num_context, n = task.num_targets();
  PropertyResult r;
  const auto* t = dynamic_cast<const TnpModel*>(&model);
  if (t != nullptr && t->config().variant == Variant::autoregressive) {
    if (n > 4) throw ConfigError("intractable group");
    const double base = symmetrized_log_likelihood_exact(*t, task)(0);
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    while (std::next_permutation(perm.begin(), perm.end())) {
      std::vector<int> order(static_cast<std::size_t>(m));
      std::iota(order.begin(), order.end(), 0);
      for (const int k : perm) order.push_back(m + k);
      const double other = symmetrized_log_likelihood_exact(*t, task.reordered(order))(0);
      r.max_deviation = std::max(r.max_deviation, std::abs(other - base));
      ++r.checks;
    }
    r.pass = r.max_deviation <= tol;
    return r;
  }

  Rng rng(seed, 0x74677420);
  const std::vector<int> perm = rng.permutation(n);
  std::vector<int> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  for (const int k : perm) order.push_back(m + k);
  const Outputs base = predictive_outputs(model, task);
  const Outputs other = predictive_outputs(model, task.reordered(order));
  // New target i is old target perm[i].
  for (int i = 0; i < n; ++i) {
    const int j = perm[static_cast<std::size_t>(i)];
    r.max_deviation = std::max(r.max_deviation, (other.mean.row(i) - base.mean.row(j)).cwiseAbs().maxCoeff());
    r.max_deviation = std::max(r.max_deviation, (other.sigma.row(i) - base.sigma.row(j)).cwiseAbs().maxCoeff());
    if (!base.covariance.empty())
      for (int k = 0; k < n; ++k)
        r.max_deviation = std::max(r.max_deviation, std::abs(other.covariance[0](i, k) -
                                                             base.covariance[0](j, perm[static_cast<std::size_t>(k)])));
  }
  r.checks = 1;
  r.pass = r.max_deviation <= tol;
  return r;
}

PropertyResult check_mask_dependency(const TnpModel& model, const TaskBatch& task, int n_probes, double tol,
                                     std::uint64_t seed) {
  require_single(task);
  const Variant v = model.config().variant;
  const TokenSequence seq = embed_sequence(task, v, v == Variant::autoregressive);
  const MaskSpec mask = build_mask(task.num_points, task.num_context, v);
  std::vector<std::pair<int, int>> denied;
  for (Eigen::Index i = 0; i < mask.rows(); ++i)
    for (Eigen::Index j = 0; j < mask.cols(); ++j)
      if (i != j && !mask.allow(i, j)) denied.emplace_back(static_cast<int>(i), static_cast<int>(j));
  PropertyResult r;
  r.pass = true;
  if (denied.empty()) return r;

  auto backbone = [&](const TokenSequence& s) {
    Tape tape(false);
    BoundParameters p(tape, model.parameters());
    return Matrix(model.encode(p, s, mask).value());
  };
  const Matrix base = backbone(seq);
  Rng rng(seed, 0x6d61736b);
  for (int probe = 0; probe < n_probes; ++probe) {
    const auto [row, col] = denied[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(denied.size()) - 1))];
    TokenSequence changed = seq;
    for (Eigen::Index c = 0; c < changed.tokens.cols(); ++c) changed.tokens(col, c) = rng.normal(0.0, 3.0);
    const Matrix out = backbone(changed);
    const double dev = (out.row(row) - base.row(row)).cwiseAbs().maxCoeff();
    r.max_deviation = std::max(r.max_deviation, dev);
    ++r.checks;
  }
  r.pass = r.max_deviation <= tol;
  return r;
}

}  // namespace tnp
