#include "tnp/tasks.hpp"

#include "tnp/errors.hpp"
#include "tnp/linalg.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace tnp {

// ---------------------------------------------------------------- TaskBatch

void TaskBatch::validate(bool allow_empty_context) const {
  if (batch <= 0) throw DimensionError("task batch is empty");
  if (num_context < (allow_empty_context ? 0 : 1)) throw DimensionError("task batch has an empty context set");
  if (num_context >= num_points) throw DimensionError("task batch has an empty target set");
  const auto rows = static_cast<Eigen::Index>(batch) * num_points;
  if (x.rows() != rows || x.cols() != dim_x) throw DimensionError("task batch: x has the wrong shape");
  if (y.rows() != rows || y.cols() != dim_y) throw DimensionError("task batch: y has the wrong shape");
  if (observed.size() != 0 && (observed.rows() != rows || observed.cols() != dim_y))
    throw DimensionError("task batch: observed mask has the wrong shape");
  if (!x.allFinite() || !y.allFinite()) throw NumericError("task batch contains non-finite values");
}

TaskBatch TaskBatch::task(int b) const {
  TaskBatch t = *this;
  t.batch = 1;
  t.x = x.middleRows(static_cast<Eigen::Index>(b) * num_points, num_points);
  t.y = y.middleRows(static_cast<Eigen::Index>(b) * num_points, num_points);
  if (observed.size() != 0) t.observed = observed.middleRows(static_cast<Eigen::Index>(b) * num_points, num_points);
  return t;
}

TaskBatch TaskBatch::reordered(const std::vector<int>& order) const {
  if (static_cast<int>(order.size()) != num_points) throw DimensionError("reordered: order length != N");
  TaskBatch t = *this;
  for (int b = 0; b < batch; ++b)
    for (int i = 0; i < num_points; ++i) {
      t.x.row(row(b, i)) = x.row(row(b, order[static_cast<std::size_t>(i)]));
      t.y.row(row(b, i)) = y.row(row(b, order[static_cast<std::size_t>(i)]));
      if (observed.size() != 0) t.observed.row(row(b, i)) = observed.row(row(b, order[static_cast<std::size_t>(i)]));
    }
  return t;
}

Vector TaskBatch::target_y(int b, int dim) const {
  return y.col(dim).segment(static_cast<Eigen::Index>(row(b, num_context)), num_targets());
}

TaskBatch make_task(const Matrix& context_x, const Matrix& context_y, const Matrix& target_x,
                    const Matrix& target_y) {
  if (context_x.rows() != context_y.rows() || target_x.rows() != target_y.rows() ||
      context_x.cols() != target_x.cols() || context_y.cols() != target_y.cols())
    throw DimensionError("make_task: inconsistent shapes");
  TaskBatch t;
  t.batch = 1;
  t.num_context = static_cast<int>(context_x.rows());
  t.num_points = t.num_context + static_cast<int>(target_x.rows());
  t.dim_x = static_cast<int>(target_x.cols());
  t.dim_y = static_cast<int>(target_y.cols());
  t.x.resize(t.num_points, t.dim_x);
  t.y.resize(t.num_points, t.dim_y);
  t.x << context_x, target_x;
  t.y << context_y, target_y;
  return t;
}

TaskBatch concat_batches(const std::vector<TaskBatch>& parts) {
  if (parts.empty()) throw DimensionError("concat_batches: nothing to concatenate");
  TaskBatch out = parts.front();
  int total = 0;
  bool any_observed = false;
  for (const auto& p : parts) {
    if (p.num_points != out.num_points || p.num_context != out.num_context || p.dim_x != out.dim_x ||
        p.dim_y != out.dim_y)
      throw DimensionError("concat_batches: batches differ in N, m or dims");
    total += p.batch;
    any_observed = any_observed || p.observed.size() != 0;
  }
  out.batch = total;
  out.x.resize(static_cast<Eigen::Index>(total) * out.num_points, out.dim_x);
  out.y.resize(out.x.rows(), out.dim_y);
  if (any_observed) out.observed.resize(out.x.rows(), out.dim_y);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.x.middleRows(r, p.x.rows()) = p.x;
    out.y.middleRows(r, p.y.rows()) = p.y;
    if (any_observed)
      out.observed.middleRows(r, p.y.rows()) =
          p.observed.size() != 0 ? p.observed : Matrix::Ones(p.y.rows(), p.dim_y);
    r += p.x.rows();
  }
  return out;
}

// ------------------------------------------------------------------ kernels

KernelFamily parse_kernel(std::string_view name) {
  if (name == "rbf") return KernelFamily::rbf;
  if (name == "matern52" || name == "matern") return KernelFamily::matern52;
  if (name == "periodic") return KernelFamily::periodic;
  throw ConfigError("unknown kernel family: " + std::string(name));
}

std::string_view kernel_name(KernelFamily k) {
  switch (k) {
    case KernelFamily::rbf: return "rbf";
    case KernelFamily::matern52: return "matern52";
    case KernelFamily::periodic: return "periodic";
  }
  return "rbf";
}

void KernelSpec::validate() const {
  if (!(lengthscale > 0.0)) throw ConfigError("kernel lengthscale must be positive");
  if (!(output_scale > 0.0)) throw ConfigError("kernel output scale must be positive");
  if (!(period > 0.0)) throw ConfigError("kernel period must be positive");
  if (!(jitter >= 0.0)) throw ConfigError("kernel jitter must be non-negative");
}

double KernelSpec::operator()(double r) const {
  const double s2 = output_scale * output_scale;
  switch (family) {
    case KernelFamily::rbf: return s2 * std::exp(-0.5 * r * r / (lengthscale * lengthscale));
    case KernelFamily::matern52: {
      const double a = std::sqrt(5.0) * r / lengthscale;
      return s2 * (1.0 + a + a * a / 3.0) * std::exp(-a);
    }
    case KernelFamily::periodic: {
      const double s = std::sin(std::numbers::pi * r / period);
      return s2 * std::exp(-2.0 * s * s / (lengthscale * lengthscale));
    }
  }
  return 0.0;
}

Matrix kernel_cross(const KernelSpec& spec, const Matrix& a, const Matrix& b) {
  spec.validate();
  if (a.cols() != b.cols()) throw DimensionError("kernel: input dimensions differ");
  if (!a.allFinite() || !b.allFinite()) throw NumericError("kernel: non-finite input");
  Matrix k(a.rows(), b.rows());
  if (spec.family == KernelFamily::periodic && a.cols() > 1) {
    // Product of per-dimension periodic kernels; the Euclidean-distance form
    // is not positive semi-definite beyond one dimension.
    const double s2 = spec.output_scale * spec.output_scale;
    const double l2 = spec.lengthscale * spec.lengthscale;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      for (Eigen::Index j = 0; j < b.rows(); ++j) {
        double e = 0.0;
        for (Eigen::Index d = 0; d < a.cols(); ++d) {
          const double s = std::sin(std::numbers::pi * std::abs(a(i, d) - b(j, d)) / spec.period);
          e += s * s;
        }
        k(i, j) = s2 * std::exp(-2.0 * e / l2);
      }
    }
    return k;
  }
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) k(i, j) = spec((a.row(i) - b.row(j)).norm());
  return k;
}

Matrix kernel_matrix(const KernelSpec& spec, const Matrix& xs) {
  Matrix k = kernel_cross(spec, xs, xs);
  // Exact symmetry regardless of distance rounding.
  k = 0.5 * (k + k.transpose()).eval();
  k.diagonal().array() += spec.jitter;
  return k;
}

Vector sample_gp_function(Rng& rng, const KernelSpec& spec, const Matrix& xs) {
  KernelSpec bare = spec;
  bare.jitter = 0.0;
  const Matrix k = kernel_matrix(bare, xs);
  const double start = spec.jitter > 0.0 ? spec.jitter : 1e-6;
  const CholeskyResult chol = cholesky_with_jitter(k, start, start * 100.0);
  Vector z(xs.rows());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  return chol.lower * z;
}

Vector sample_gp_function_exact(Rng& rng, const KernelSpec& spec, const Matrix& xs) {
  KernelSpec bare = spec;
  bare.jitter = 0.0;
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(kernel_matrix(bare, xs));
  if (eig.info() != Eigen::Success) throw NumericError("gp sample: eigendecomposition failed");
  const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  Vector z(xs.rows());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  return eig.eigenvectors() * root.cwiseProduct(z);
}

int split_context_target(Rng& rng, int num_points, const ContextRule& rule) {
  const int hi = std::min(rule.hi_exclusive - 1, num_points - rule.margin);
  if (num_points < rule.lo + rule.margin || hi < rule.lo)
    throw ConfigError("cannot split " + std::to_string(num_points) + " points: need N >= " +
                      std::to_string(rule.lo + rule.margin));
  return static_cast<int>(rng.uniform_int(rule.lo, hi));
}

void GpTaskConfig::validate() const {
  if (dim_x < 1) throw ConfigError("gp tasks: dim_x must be >= 1");
  if (min_points >= max_points_exclusive) throw ConfigError("gp tasks: empty range of N");
  if (min_points < context.lo + context.margin) throw ConfigError("gp tasks: min N leaves no valid context count");
  if (!(lengthscale_lo > 0.0 && lengthscale_hi >= lengthscale_lo)) throw ConfigError("gp tasks: bad lengthscale range");
  if (!(scale_lo > 0.0 && scale_hi >= scale_lo)) throw ConfigError("gp tasks: bad output-scale range");
  if (!(x_hi > x_lo)) throw ConfigError("gp tasks: empty input box");
}

GpTaskConfig GpTaskConfig::one_d(KernelFamily family) {
  GpTaskConfig c;
  c.family = family;
  return c;
}

GpTaskConfig GpTaskConfig::two_d() {
  GpTaskConfig c;
  c.dim_x = 2;
  c.min_points = 60;
  c.max_points_exclusive = 128;
  c.context = {30, 98, 3};
  c.x_lo = 0.0;
  c.x_hi = 1.0;
  return c;
}

GpTaskConfig GpTaskConfig::three_d() {
  GpTaskConfig c;
  c.dim_x = 3;
  c.min_points = 128;
  c.max_points_exclusive = 256;
  c.context = {64, 192, 3};
  c.x_lo = 0.0;
  c.x_hi = 1.0;
  return c;
}

TaskBatch sample_gp_batch(Rng& rng, const GpTaskConfig& config, int batch) {
  config.validate();
  if (batch <= 0) throw ConfigError("gp tasks: batch size must be positive");
  TaskBatch t;
  t.batch = batch;
  t.dim_x = config.dim_x;
  t.dim_y = 1;
  t.num_points = static_cast<int>(rng.uniform_int(config.min_points, config.max_points_exclusive - 1));
  t.num_context = split_context_target(rng, t.num_points, config.context);
  t.x.resize(static_cast<Eigen::Index>(batch) * t.num_points, t.dim_x);
  t.y.resize(t.x.rows(), 1);
  for (int b = 0; b < batch; ++b) {
    KernelSpec spec;
    spec.family = config.family;
    spec.lengthscale = rng.uniform(config.lengthscale_lo, config.lengthscale_hi);
    spec.output_scale = rng.uniform(config.scale_lo, config.scale_hi);
    spec.jitter = config.jitter;
    Matrix xs(t.num_points, t.dim_x);
    for (Eigen::Index i = 0; i < xs.size(); ++i) xs.data()[i] = rng.uniform(config.x_lo, config.x_hi);
    t.x.middleRows(t.row(b, 0), t.num_points) = xs;
    t.y.middleRows(t.row(b, 0), t.num_points) = sample_gp_function(rng, spec, xs);
  }
  return t;
}

// -------------------------------------------------------------------- wheel

void WheelProblem::validate() const {
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("wheel: delta must lie in (0, 1)");
}

int wheel_quadrant_arm(const Eigen::Vector2d& X) {
  const bool right = X(0) >= 0.0, up = X(1) >= 0.0;
  if (right && up) return 1;
  if (!right && up) return 2;
  if (!right && !up) return 3;
  return 4;
}

ArmValues wheel_means(const WheelProblem& problem, const Eigen::Vector2d& X) {
  if (!(X.norm() <= 1.0 + 1e-12)) throw ConfigError("wheel: context lies outside the unit disk");
  ArmValues means;
  means.fill(problem.base_mean);
  means[0] = problem.safe_mean;
  if (X.norm() > problem.delta) means[static_cast<std::size_t>(wheel_quadrant_arm(X))] = problem.high_mean;
  return means;
}

WheelOutcome wheel_rewards(const WheelProblem& problem, const Eigen::Vector2d& X, Rng& rng) {
  WheelOutcome out;
  out.means = wheel_means(problem, X);
  for (int k = 0; k < kWheelArms; ++k)
    out.rewards[static_cast<std::size_t>(k)] = rng.normal(out.means[static_cast<std::size_t>(k)], problem.stddev);
  out.optimal_arm = static_cast<int>(std::max_element(out.means.begin(), out.means.end()) - out.means.begin());
  return out;
}

Eigen::Vector2d sample_unit_disk(Rng& rng) {
  const double r = std::sqrt(rng.uniform());
  const double theta = 2.0 * std::numbers::pi * rng.uniform();
  return {r * std::cos(theta), r * std::sin(theta)};
}

TaskBatch sample_wheel_batch(Rng& rng, const WheelTaskConfig& config, int batch) {
  TaskBatch t;
  t.batch = batch;
  t.dim_x = 2;
  t.dim_y = kWheelArms;
  t.num_points = config.num_points;
  t.num_context = split_context_target(rng, config.num_points, config.context);
  t.x.resize(static_cast<Eigen::Index>(batch) * t.num_points, 2);
  t.y.resize(t.x.rows(), kWheelArms);
  for (int b = 0; b < batch; ++b) {
    WheelProblem problem;
    problem.delta = rng.uniform(config.delta_lo, config.delta_hi);
    for (int i = 0; i < t.num_points; ++i) {
      const Eigen::Vector2d X = sample_unit_disk(rng);
      const WheelOutcome o = wheel_rewards(problem, X, rng);
      t.x.row(t.row(b, i)) = X.transpose();
      for (int k = 0; k < kWheelArms; ++k) t.y(t.row(b, i), k) = o.rewards[static_cast<std::size_t>(k)];
    }
  }
  return t;
}

// --------------------------------------------------------------- benchmarks

BenchmarkFunction BenchmarkFunction::get(std::string_view name) {
  BenchmarkFunction f;
  f.name = std::string(name);
  auto box = [&f](int dim, double lo, double hi) {
    f.dim = dim;
    f.lower = Vector::Constant(dim, lo);
    f.upper = Vector::Constant(dim, hi);
    f.optimizer = Vector::Zero(dim);
  };
  if (name == "ackley2" || name == "ackley3") {
    box(name == "ackley2" ? 2 : 3, -32.768, 32.768);
    f.optimum = 0.0;
  } else if (name == "dropwave2") {
    box(2, -5.12, 5.12);
    f.optimum = -1.0;
  } else if (name == "michalewicz2") {
    box(2, 0.0, std::numbers::pi);
    f.optimizer = Vector(2);
    f.optimizer << 2.2029055201726, 1.5707963267949;
    f.optimum = -1.8013034100985537;
  } else if (name == "cosine3") {
    box(3, -1.0, 1.0);
    f.optimum = -0.3;
  } else if (name == "rastrigin3") {
    box(3, -5.12, 5.12);
    f.optimum = 0.0;
  } else {
    throw ConfigError("unknown benchmark function: " + std::string(name));
  }
  return f;
}

std::vector<std::string> BenchmarkFunction::names() {
  return {"ackley2", "ackley3", "dropwave2", "michalewicz2", "cosine3", "rastrigin3"};
}

bool BenchmarkFunction::contains(const Vector& x) const {
  if (x.size() != dim) return false;
  for (int i = 0; i < dim; ++i)
    if (!(x(i) >= lower(i) && x(i) <= upper(i))) return false;
  return true;
}

double benchmark_value(const BenchmarkFunction& fn, const Vector& x) {
  if (!fn.contains(x)) throw ConfigError("benchmark " + fn.name + ": point outside the domain");
  const double pi = std::numbers::pi;
  const auto d = static_cast<double>(x.size());
  if (fn.name.starts_with("ackley")) {
    const double sq = x.squaredNorm() / d;
    const double cs = (2.0 * pi * x.array()).cos().sum() / d;
    return -20.0 * std::exp(-0.2 * std::sqrt(sq)) - std::exp(cs) + 20.0 + std::numbers::e;
  }
  if (fn.name == "dropwave2") {
    const double r2 = x.squaredNorm();
    return -(1.0 + std::cos(12.0 * std::sqrt(r2))) / (0.5 * r2 + 2.0);
  }
  if (fn.name == "michalewicz2") {
    double s = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i)
      s += std::sin(x(i)) * std::pow(std::sin(static_cast<double>(i + 1) * x(i) * x(i) / pi), 20.0);
    return -s;
  }
  if (fn.name == "cosine3") return -(0.1 * (5.0 * pi * x.array()).cos() - x.array().square()).sum();
  if (fn.name == "rastrigin3")
    return 10.0 * d + (x.array().square() - 10.0 * (2.0 * pi * x.array()).cos()).sum();
  throw ConfigError("unknown benchmark function: " + fn.name);
}

}  // namespace tnp
