#pragma once

// Sequential decision loops driven by a predictive model: the wheel
// contextual bandit and Bayesian optimization, both with UCB selection.

#include "tnp/model.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace tnp {

// ------------------------------------------------------------------- bandit

// argmax_k mu_k + kappa * sigma_k, lowest index on ties.
int ucb_select_arm(const ArmValues& mean, const ArmValues& sigma, double kappa);

struct ArmPrediction {
  ArmValues mean{};
  ArmValues sigma{};
};

// Predicts every arm's reward at X from past (X, reward vector, observed
// flags) tuples; rows of ctx_y/ctx_observed have one observed entry each.
class BanditModel {
 public:
  virtual ~BanditModel() = default;
  virtual ArmPrediction predict(const Matrix& ctx_x, const Matrix& ctx_y, const Matrix& ctx_observed,
                                const Eigen::Vector2d& X) const = 0;
};

// Wraps a NeuralProcess with dim_x 2 and dim_y 5.
class NpBanditModel final : public BanditModel {
 public:
  explicit NpBanditModel(const NeuralProcess& model);
  ArmPrediction predict(const Matrix& ctx_x, const Matrix& ctx_y, const Matrix& ctx_observed,
                        const Eigen::Vector2d& X) const override;

 private:
  const NeuralProcess* model_;
};

// True means with zero uncertainty.
class OracleBanditModel final : public BanditModel {
 public:
  explicit OracleBanditModel(WheelProblem problem) : problem_(problem) {}
  ArmPrediction predict(const Matrix&, const Matrix&, const Matrix&, const Eigen::Vector2d& X) const override;

 private:
  WheelProblem problem_;
};

enum class BanditPolicy { ucb, uniform };

struct BanditConfig {
  double delta = 0.7;
  int steps = 2000;
  double kappa = 1.0;
  int window = 512;  // most recent tuples kept as context
  BanditPolicy policy = BanditPolicy::ucb;

  void validate() const;
};

struct BanditState {
  double delta = 0.0;
  int step = 0;
  std::vector<Eigen::Vector2d> contexts;
  std::vector<int> arms;
  std::vector<double> rewards;
  std::vector<double> optimal_means;
  std::vector<double> chosen_means;
  std::vector<double> regrets;  // optimal mean - chosen mean
  double cumulative_regret = 0.0;
};

// Contexts and reward noise come from streams of `seed` that do not depend
// on the policy, so episodes with the same seed are paired. The model may be
// null for the uniform policy.
BanditState run_bandit_episode(const BanditModel* model, const BanditConfig& config, std::uint64_t seed);

struct RegretSummary {
  double cumulative = 0.0;  // mean over episodes of summed regret
  double simple = 0.0;      // mean over episodes of mean regret in the last 500 steps
  double cumulative_normalized = 0.0;  // x100 / uniform
  double simple_normalized = 0.0;
};

// Throws ConfigError if deltas or step counts differ between episodes.
RegretSummary regret_metrics(const std::vector<BanditState>& states, const std::vector<BanditState>& uniform);

// ----------------------------------------------------------------------- BO

struct BoObjective {
  std::string name;
  int dim = 1;
  Vector lower, upper;
  double optimum = 0.0;
  std::function<double(const Vector&)> value;
};

BoObjective benchmark_objective(const std::string& name);
// GP prior draw on a uniform grid of `grid` points over [lo, hi], linearly
// interpolated. The optimum is the smallest grid value.
BoObjective gp_objective(Rng& rng, const KernelSpec& kernel, double lo, double hi, int grid = 1000);

// (mean, sigma) at candidates given the evaluated archive.
class Surrogate {
 public:
  virtual ~Surrogate() = default;
  virtual void predict(const Matrix& archive_x, const Vector& archive_y, const Matrix& candidates, Vector& mean,
                       Vector& sigma) const = 0;
};

// Maps the objective box affinely onto the model's training box and
// standardizes the archive values before conditioning.
class NpSurrogate final : public Surrogate {
 public:
  NpSurrogate(const NeuralProcess& model, Vector lower, Vector upper, double train_lo, double train_hi);
  void predict(const Matrix& archive_x, const Vector& archive_y, const Matrix& candidates, Vector& mean,
               Vector& sigma) const override;

 private:
  const NeuralProcess* model_;
  Vector lower_, upper_;
  double train_lo_, train_hi_;
};

class OracleSurrogate final : public Surrogate {
 public:
  explicit OracleSurrogate(std::function<double(const Vector&)> f) : f_(std::move(f)) {}
  void predict(const Matrix&, const Vector&, const Matrix& candidates, Vector& mean, Vector& sigma) const override;

 private:
  std::function<double(const Vector&)> f_;
};

// mean 0 and sigma 1 everywhere.
class ConstantSurrogate final : public Surrogate {
 public:
  void predict(const Matrix&, const Vector&, const Matrix& candidates, Vector& mean, Vector& sigma) const override;
};

// Row index maximizing -mean + kappa * sigma, lowest index on ties. Throws
// ConfigError on an empty candidate set.
int ucb_acquisition_select(const Surrogate& surrogate, const Matrix& archive_x, const Vector& archive_y,
                           const Matrix& candidates, double kappa);

enum class CandidateRule { automatic, grid, sobol };

struct BoConfig {
  int iterations = 50;
  int init_count = 5;
  double kappa = 1.0;
  CandidateRule candidates = CandidateRule::automatic;  // grid in 1-D, Sobol otherwise
  int grid_points = 1000;
  int sobol_points = 4096;

  void validate() const;
};

// Grid: uniform including both ends. Sobol: the first points of the
// sequence with a random shift modulo 1 drawn from rng.
Matrix bo_candidates(const BoObjective& objective, const BoConfig& config, Rng& rng);

struct BoState {
  std::string objective;
  Matrix x;   // archive, one row per evaluation
  Vector y;
  double best = 0.0;
  std::vector<double> regret_trace;  // after init, then after each iteration
  int iterations = 0;
};

// Initial points come from a stream shared with run_random_search.
BoState run_bo(const Surrogate& surrogate, const BoObjective& objective, const BoConfig& config, std::uint64_t seed);
BoState run_random_search(const BoObjective& objective, const BoConfig& config, std::uint64_t seed);

}  // namespace tnp
