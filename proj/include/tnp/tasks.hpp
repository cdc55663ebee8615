#pragma once

// Synthetic task generators: Gaussian-process function draws, the wheel
// bandit world and the Bayesian-optimization benchmark objectives.

#include "tnp/autodiff.hpp"
#include "tnp/rng.hpp"

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace tnp {

// A batch of function evaluations sharing N and m. Rows are task-major:
// row b*N + i holds point i of task b; points [0, m) are the context.
struct TaskBatch {
  int batch = 0;
  int num_points = 0;   // N
  int num_context = 0;  // m
  int dim_x = 1;
  int dim_y = 1;
  Matrix x;  // (batch*N x dim_x)
  Matrix y;  // (batch*N x dim_y)
  // 1 where a label entry is observed; empty means everything is observed.
  // Only context rows may carry zeros.
  Matrix observed;

  int num_targets() const { return num_points - num_context; }
  int row(int task, int point) const { return task * num_points + point; }
  // Checks shapes, 1 <= m < N (0 <= m when allow_empty_context) and finiteness.
  void validate(bool allow_empty_context = false) const;

  TaskBatch task(int b) const;
  // Reorders the points of every task: new point i is old point order[i].
  TaskBatch reordered(const std::vector<int>& order) const;
  Vector target_y(int b, int dim = 0) const;
};

// Builds a single-task batch from context and target arrays.
TaskBatch make_task(const Matrix& context_x, const Matrix& context_y, const Matrix& target_x,
                    const Matrix& target_y);
// Concatenates batches that share N, m and dims.
TaskBatch concat_batches(const std::vector<TaskBatch>& parts);

// ------------------------------------------------------------------ kernels

enum class KernelFamily { rbf, matern52, periodic };
KernelFamily parse_kernel(std::string_view name);
std::string_view kernel_name(KernelFamily k);

struct KernelSpec {
  KernelFamily family = KernelFamily::rbf;
  double lengthscale = 1.0;
  double output_scale = 1.0;  // sigma_f
  double period = 1.0;
  double jitter = 1e-6;

  void validate() const;
  double operator()(double distance) const;
};

// Gram matrix of the rows of xs, with jitter on the diagonal. Distances are
// Euclidean, except that the periodic family in more than one dimension is
// the product of per-dimension periodic kernels.
Matrix kernel_matrix(const KernelSpec& spec, const Matrix& xs);
// Cross-covariance between rows of a and rows of b (no jitter).
Matrix kernel_cross(const KernelSpec& spec, const Matrix& a, const Matrix& b);

// y ~ N(0, K + jitter I), escalating the jitter x10 up to 100x its start
// (three attempts) before throwing NumericError.
Vector sample_gp_function(Rng& rng, const KernelSpec& spec, const Matrix& xs);
// Noise-free y ~ N(0, K) through the symmetric square root of K with
// rounding-level negative eigenvalues clamped to zero. Suited to dense grids,
// where any jitter large enough for a Cholesky factor shows up as white noise.
Vector sample_gp_function_exact(Rng& rng, const KernelSpec& spec, const Matrix& xs);

// Context-count rule: m uniform on [lo, min(hi_exclusive - 1, N - margin)].
struct ContextRule {
  int lo = 3;
  int hi_exclusive = 48;
  int margin = 3;
};

// Throws ConfigError if N leaves no valid m.
int split_context_target(Rng& rng, int num_points, const ContextRule& rule);

struct GpTaskConfig {
  KernelFamily family = KernelFamily::rbf;
  int dim_x = 1;
  int min_points = 6;
  int max_points_exclusive = 50;
  ContextRule context{};
  double lengthscale_lo = 0.6, lengthscale_hi = 1.0;
  double scale_lo = 0.1, scale_hi = 1.0;
  double x_lo = -2.0, x_hi = 2.0;
  // Diagonal term of the sampling covariance; acts as observation noise.
  double jitter = 4e-4;

  void validate() const;
  static GpTaskConfig one_d(KernelFamily family = KernelFamily::rbf);
  static GpTaskConfig two_d();
  static GpTaskConfig three_d();
};

TaskBatch sample_gp_batch(Rng& rng, const GpTaskConfig& config, int batch);

// -------------------------------------------------------------------- wheel

inline constexpr int kWheelArms = 5;
using ArmValues = std::array<double, kWheelArms>;

struct WheelProblem {
  double delta = 0.5;
  double base_mean = 1.0;
  double safe_mean = 1.2;   // arm 0 everywhere
  double high_mean = 50.0;  // quadrant arm outside the core
  double stddev = 0.012;

  void validate() const;
};

struct WheelOutcome {
  ArmValues rewards{};
  ArmValues means{};
  int optimal_arm = 0;  // 0-based; arm 0 is the safe arm
};

// Arm means at X; throws ConfigError if |X| > 1.
ArmValues wheel_means(const WheelProblem& problem, const Eigen::Vector2d& X);
WheelOutcome wheel_rewards(const WheelProblem& problem, const Eigen::Vector2d& X, Rng& rng);
// Quadrant arm for X outside the core: 1 (+,+), 2 (-,+), 3 (-,-), 4 (+,-).
int wheel_quadrant_arm(const Eigen::Vector2d& X);
Eigen::Vector2d sample_unit_disk(Rng& rng);

struct WheelTaskConfig {
  int num_points = 562;
  ContextRule context{512, 513, 1};
  double delta_lo = 0.0, delta_hi = 1.0;
};

// x = coordinates (2 columns), y = sampled rewards of all arms (5 columns).
TaskBatch sample_wheel_batch(Rng& rng, const WheelTaskConfig& config, int batch);

// --------------------------------------------------------------- benchmarks

struct BenchmarkFunction {
  std::string name;
  int dim = 0;
  Vector lower, upper;
  double optimum = 0.0;
  Vector optimizer;

  // ackley2, ackley3, dropwave2, michalewicz2, cosine3, rastrigin3.
  static BenchmarkFunction get(std::string_view name);
  static std::vector<std::string> names();
  bool contains(const Vector& x) const;
};

// Minimization convention. Throws ConfigError if x is outside the box.
double benchmark_value(const BenchmarkFunction& fn, const Vector& x);

}  // namespace tnp
