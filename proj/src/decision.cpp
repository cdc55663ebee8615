#include "tnp/decision.hpp"

#include "tnp/errors.hpp"
#include "tnp/tnp_model.hpp"

#include <boost/random/sobol.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace tnp {

int ucb_select_arm(const ArmValues& mean, const ArmValues& sigma, double kappa) {
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < kWheelArms; ++k) {
    const auto i = static_cast<std::size_t>(k);
    const double score = mean[i] + kappa * sigma[i];
    if (score > best_score) {
      best_score = score;
      best = k;
    }
  }
  return best;
}

NpBanditModel::NpBanditModel(const NeuralProcess& model) : model_(&model) {
  if (model.dim_x() != 2 || model.dim_y() != kWheelArms)
    throw ConfigError("a bandit model needs dim_x 2 and dim_y " + std::to_string(kWheelArms));
}

ArmPrediction NpBanditModel::predict(const Matrix& ctx_x, const Matrix& ctx_y, const Matrix& ctx_observed,
                                     const Eigen::Vector2d& X) const {
  TaskBatch batch;
  const auto m = ctx_x.rows();
  batch.batch = 1;
  batch.num_points = static_cast<int>(m) + 1;
  batch.num_context = static_cast<int>(m);
  batch.dim_x = 2;
  batch.dim_y = kWheelArms;
  batch.x.resize(m + 1, 2);
  batch.y = Matrix::Zero(m + 1, kWheelArms);
  batch.observed = Matrix::Ones(m + 1, kWheelArms);
  if (m > 0) {
    batch.x.topRows(m) = ctx_x;
    batch.y.topRows(m) = ctx_y;
    batch.observed.topRows(m) = ctx_observed;
  }
  batch.x.row(m) = X.transpose();
  const DiagonalPrediction pred = model_->predict_marginals(batch);
  ArmPrediction out;
  for (int k = 0; k < kWheelArms; ++k) {
    out.mean[static_cast<std::size_t>(k)] = pred.mean(0, k);
    out.sigma[static_cast<std::size_t>(k)] = pred.sigma(0, k);
  }
  return out;
}

ArmPrediction OracleBanditModel::predict(const Matrix&, const Matrix&, const Matrix&, const Eigen::Vector2d& X) const {
  ArmPrediction out;
  out.mean = wheel_means(problem_, X);
  return out;
}

void BanditConfig::validate() const {
  WheelProblem{delta}.validate();
  if (steps < 1) throw ConfigError("bandit.steps must be positive");
  if (!(kappa >= 0.0)) throw ConfigError("bandit.kappa must be non-negative");
  if (window < 1) throw ConfigError("bandit.window must be positive");
}

BanditState run_bandit_episode(const BanditModel* model, const BanditConfig& config, std::uint64_t seed) {
  config.validate();
  if (config.policy == BanditPolicy::ucb && model == nullptr) throw ConfigError("the UCB policy needs a model");
  const WheelProblem problem{config.delta};
  const Rng root(seed, 0x62616e64);
  Rng context_rng = root.split(0);
  Rng reward_rng = root.split(1);
  Rng policy_rng = root.split(2);

  BanditState s;
  s.delta = config.delta;
  Matrix ctx_x(0, 2), ctx_y(0, kWheelArms), ctx_obs(0, kWheelArms);
  for (int t = 0; t < config.steps; ++t) {
    const Eigen::Vector2d X = sample_unit_disk(context_rng);
    const WheelOutcome outcome = wheel_rewards(problem, X, reward_rng);
    int arm = 0;
    if (config.policy == BanditPolicy::uniform) {
      arm = static_cast<int>(policy_rng.uniform_int(0, kWheelArms - 1));
    } else {
      const auto first = std::max<Eigen::Index>(0, ctx_x.rows() - config.window);
      const auto count = ctx_x.rows() - first;
      const ArmPrediction pred =
          model->predict(ctx_x.middleRows(first, count), ctx_y.middleRows(first, count), ctx_obs.middleRows(first, count), X);
      arm = ucb_select_arm(pred.mean, pred.sigma, config.kappa);
    }
    const auto a = static_cast<std::size_t>(arm);
    const double best = *std::max_element(outcome.means.begin(), outcome.means.end());
    s.contexts.push_back(X);
    s.arms.push_back(arm);
    s.rewards.push_back(outcome.rewards[a]);
    s.optimal_means.push_back(best);
    s.chosen_means.push_back(outcome.means[a]);
    s.regrets.push_back(best - outcome.means[a]);
    s.cumulative_regret += s.regrets.back();
    s.step = t + 1;

    const auto r = ctx_x.rows();
    ctx_x.conservativeResize(r + 1, Eigen::NoChange);
    ctx_y.conservativeResize(r + 1, Eigen::NoChange);
    ctx_obs.conservativeResize(r + 1, Eigen::NoChange);
    ctx_x.row(r) = X.transpose();
    ctx_y.row(r).setZero();
    ctx_obs.row(r).setZero();
    ctx_y(r, arm) = outcome.rewards[a];
    ctx_obs(r, arm) = 1.0;
  }
  return s;
}

RegretSummary regret_metrics(const std::vector<BanditState>& states, const std::vector<BanditState>& uniform) {
  if (states.empty() || uniform.empty()) throw ConfigError("regret_metrics needs episodes");
  auto summarize = [](const std::vector<BanditState>& runs, double delta, int steps, double& cumulative,
                      double& simple) {
    cumulative = simple = 0.0;
    for (const auto& s : runs) {
      if (s.delta != delta || s.step != steps) throw ConfigError("episodes differ in delta or step count");
      cumulative += std::accumulate(s.regrets.begin(), s.regrets.end(), 0.0);
      const int window = std::min(500, s.step);
      simple += std::accumulate(s.regrets.end() - window, s.regrets.end(), 0.0) / window;
    }
    cumulative /= static_cast<double>(runs.size());
    simple /= static_cast<double>(runs.size());
  };
  RegretSummary out;
  double uc = 0.0, us = 0.0;
  summarize(states, states.front().delta, states.front().step, out.cumulative, out.simple);
  summarize(uniform, states.front().delta, states.front().step, uc, us);
  out.cumulative_normalized = uc > 0.0 ? 100.0 * (out.cumulative / uc) : 0.0;
  out.simple_normalized = us > 0.0 ? 100.0 * (out.simple / us) : 0.0;
  return out;
}

// ----------------------------------------------------------------------- BO

BoObjective benchmark_objective(const std::string& name) {
  const BenchmarkFunction fn = BenchmarkFunction::get(name);
  BoObjective o;
  o.name = fn.name;
  o.dim = fn.dim;
  o.lower = fn.lower;
  o.upper = fn.upper;
  o.optimum = fn.optimum;
  o.value = [fn](const Vector& x) { return benchmark_value(fn, x); };
  return o;
}

BoObjective gp_objective(Rng& rng, const KernelSpec& kernel, double lo, double hi, int grid) {
  if (grid < 2 || !(hi > lo)) throw ConfigError("gp objective needs grid >= 2 and hi > lo");
  Matrix xs(grid, 1);
  for (int i = 0; i < grid; ++i) xs(i, 0) = lo + (hi - lo) * i / (grid - 1);
  const Vector ys = sample_gp_function_exact(rng, kernel, xs);
  BoObjective o;
  o.name = "gp";
  o.dim = 1;
  o.lower = Vector::Constant(1, lo);
  o.upper = Vector::Constant(1, hi);
  o.optimum = ys.minCoeff();
  o.value = [ys, lo, hi, grid](const Vector& x) {
    if (x.size() != 1 || !(x(0) >= lo && x(0) <= hi)) throw ConfigError("gp objective: point outside the domain");
    const double u = (x(0) - lo) / (hi - lo) * (grid - 1);
    // Grid points recomputed elsewhere may differ in the last ulp; they get
    // the stored value exactly.
    const double nearest = std::round(u);
    if (std::abs(u - nearest) < 1e-9) return ys(static_cast<Eigen::Index>(nearest));
    const int i = std::min(static_cast<int>(std::floor(u)), grid - 2);
    const double f = u - i;
    return f == 0.0 ? ys(i) : (1.0 - f) * ys(i) + f * ys(i + 1);
  };
  return o;
}

NpSurrogate::NpSurrogate(const NeuralProcess& model, Vector lower, Vector upper, double train_lo, double train_hi)
    : model_(&model), lower_(std::move(lower)), upper_(std::move(upper)), train_lo_(train_lo), train_hi_(train_hi) {
  if (model.dim_y() != 1 || model.dim_x() != lower_.size()) throw ConfigError("surrogate dimensions do not match");
}

void NpSurrogate::predict(const Matrix& archive_x, const Vector& archive_y, const Matrix& candidates, Vector& mean,
                          Vector& sigma) const {
  const auto m = archive_x.rows(), n = candidates.rows(), d = archive_x.cols();
  const double mu = archive_y.mean();
  double sd = m > 1 ? std::sqrt((archive_y.array() - mu).square().sum() / static_cast<double>(m - 1)) : 1.0;
  if (!(sd > 1e-12)) sd = 1.0;
  auto to_model = [&](const Matrix& x) {
    Matrix out(x.rows(), d);
    for (Eigen::Index j = 0; j < d; ++j)
      out.col(j) = (train_lo_ + (x.col(j).array() - lower_(j)) / (upper_(j) - lower_(j)) * (train_hi_ - train_lo_)).matrix();
    return out;
  };
  const Matrix cx = to_model(archive_x), tx = to_model(candidates);
  const Matrix cy = ((archive_y.array() - mu) / sd).matrix();

  DiagonalPrediction pred;
  const auto* t = dynamic_cast<const TnpModel*>(model_);
  if (t != nullptr && t->config().variant == Variant::autoregressive) {
    // One task per candidate so each prediction conditions on the archive only.
    std::vector<TaskBatch> parts;
    for (Eigen::Index i = 0; i < n; ++i) parts.push_back(make_task(cx, cy, tx.row(i), Matrix::Zero(1, 1)));
    pred = model_->predict_marginals(concat_batches(parts));
  } else {
    pred = model_->predict_marginals(make_task(cx, cy, tx, Matrix::Zero(n, 1)));
  }
  mean = (pred.mean.col(0).array() * sd + mu).matrix();
  sigma = (pred.sigma.col(0).array() * sd).matrix();
}

void OracleSurrogate::predict(const Matrix&, const Vector&, const Matrix& candidates, Vector& mean,
                              Vector& sigma) const {
  mean.resize(candidates.rows());
  for (Eigen::Index i = 0; i < candidates.rows(); ++i) mean(i) = f_(candidates.row(i).transpose());
  sigma = Vector::Zero(candidates.rows());
}

void ConstantSurrogate::predict(const Matrix&, const Vector&, const Matrix& candidates, Vector& mean,
                                Vector& sigma) const {
  mean = Vector::Zero(candidates.rows());
  sigma = Vector::Ones(candidates.rows());
}

int ucb_acquisition_select(const Surrogate& surrogate, const Matrix& archive_x, const Vector& archive_y,
                           const Matrix& candidates, double kappa) {
  if (candidates.rows() == 0) throw ConfigError("no acquisition candidates");
  Vector mean, sigma;
  surrogate.predict(archive_x, archive_y, candidates, mean, sigma);
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < candidates.rows(); ++i) {
    const double score = -mean(i) + kappa * sigma(i);
    if (score > best_score) {
      best_score = score;
      best = static_cast<int>(i);
    }
  }
  return best;
}

void BoConfig::validate() const {
  if (iterations < 1) throw ConfigError("bo.iterations must be positive");
  if (init_count < 1) throw ConfigError("bo.init_count must be positive");
  if (!(kappa >= 0.0)) throw ConfigError("bo.kappa must be non-negative");
  if (grid_points < 2 || sobol_points < 1) throw ConfigError("bo candidate counts are too small");
}

Matrix bo_candidates(const BoObjective& objective, const BoConfig& config, Rng& rng) {
  const int d = objective.dim;
  const bool grid = config.candidates == CandidateRule::grid ||
                    (config.candidates == CandidateRule::automatic && d == 1);
  if (grid) {
    if (d != 1) throw ConfigError("grid candidates are one-dimensional");
    Matrix out(config.grid_points, 1);
    for (int i = 0; i < config.grid_points; ++i)
      out(i, 0) = objective.lower(0) + (objective.upper(0) - objective.lower(0)) * i / (config.grid_points - 1);
    return out;
  }
  boost::random::sobol qrng(static_cast<std::size_t>(d));
  Vector shift(d);
  for (int j = 0; j < d; ++j) shift(j) = rng.uniform();
  Matrix out(config.sobol_points, d);
  const double scale = 1.0 / (static_cast<double>(qrng.max()) + 1.0);
  for (int i = 0; i < config.sobol_points; ++i)
    for (int j = 0; j < d; ++j) {
      double u = static_cast<double>(qrng()) * scale + shift(j);
      u -= std::floor(u);
      out(i, j) = objective.lower(j) + (objective.upper(j) - objective.lower(j)) * u;
    }
  return out;
}

namespace {

double evaluate(const BoObjective& objective, const Vector& x) {
  const double v = objective.value(x);
  if (!std::isfinite(v)) throw NumericError("objective " + objective.name + " returned a non-finite value");
  return v;
}

BoState initial_state(const BoObjective& objective, const BoConfig& config, const Rng& root) {
  config.validate();
  Rng init_rng = root.split(0);
  BoState s;
  s.objective = objective.name;
  s.x.resize(config.init_count, objective.dim);
  s.y.resize(config.init_count);
  for (int i = 0; i < config.init_count; ++i) {
    for (int j = 0; j < objective.dim; ++j) s.x(i, j) = init_rng.uniform(objective.lower(j), objective.upper(j));
    s.y(i) = evaluate(objective, s.x.row(i).transpose());
  }
  s.best = s.y.minCoeff();
  s.regret_trace.push_back(s.best - objective.optimum);
  return s;
}

void append(BoState& s, const BoObjective& objective, const Vector& x) {
  const double v = evaluate(objective, x);
  const auto r = s.x.rows();
  s.x.conservativeResize(r + 1, Eigen::NoChange);
  s.y.conservativeResize(r + 1);
  s.x.row(r) = x.transpose();
  s.y(r) = v;
  s.best = std::min(s.best, v);
  s.regret_trace.push_back(s.best - objective.optimum);
  ++s.iterations;
}

}  // namespace

BoState run_bo(const Surrogate& surrogate, const BoObjective& objective, const BoConfig& config, std::uint64_t seed) {
  const Rng root(seed, 0x626f);
  BoState s = initial_state(objective, config, root);
  Rng cand_rng = root.split(1);
  for (int it = 0; it < config.iterations; ++it) {
    const Matrix candidates = bo_candidates(objective, config, cand_rng);
    const int pick = ucb_acquisition_select(surrogate, s.x, s.y, candidates, config.kappa);
    append(s, objective, candidates.row(pick).transpose());
  }
  return s;
}

BoState run_random_search(const BoObjective& objective, const BoConfig& config, std::uint64_t seed) {
  const Rng root(seed, 0x626f);
  BoState s = initial_state(objective, config, root);
  Rng search_rng = root.split(2);
  for (int it = 0; it < config.iterations; ++it) {
    Vector x(objective.dim);
    for (int j = 0; j < objective.dim; ++j) x(j) = search_rng.uniform(objective.lower(j), objective.upper(j));
    append(s, objective, x);
  }
  return s;
}

}  // namespace tnp
