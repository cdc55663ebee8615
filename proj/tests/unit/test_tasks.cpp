#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "tnp/errors.hpp"
#include "tnp/linalg.hpp"
#include "tnp/tasks.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <numbers>

using namespace tnp;

TEST_CASE("kernels: zero distance gives the output variance") {
  for (const KernelFamily f : {KernelFamily::rbf, KernelFamily::matern52, KernelFamily::periodic}) {
    KernelSpec k{f, 0.7, 1.3, 1.0, 0.0};
    CHECK(k(0.0) == doctest::Approx(1.69).epsilon(1e-15));
  }
}

TEST_CASE("kernels: closed-form values") {
  CHECK(KernelSpec{KernelFamily::rbf, 1.0, 1.0}(1.0) == doctest::Approx(0.60653).epsilon(1e-5));
  const KernelSpec per{KernelFamily::periodic, 0.8, 2.0, 1.5, 0.0};
  CHECK(std::abs(per(1.5) - 4.0) < 1e-12);
  CHECK(std::abs(per(3.0) - 4.0) < 1e-12);
  const double r = 0.9, l = 0.6;
  const double s5 = std::sqrt(5.0) * r / l;
  CHECK(KernelSpec{KernelFamily::matern52, l, 1.0}(r) ==
        doctest::Approx((1.0 + s5 + 5.0 * r * r / (3.0 * l * l)) * std::exp(-s5)).epsilon(1e-14));
}

TEST_CASE("kernels: Gram matrices are symmetric and factorizable") {
  Rng rng(1);
  for (const KernelFamily f : {KernelFamily::rbf, KernelFamily::matern52, KernelFamily::periodic}) {
    for (int trial = 0; trial < 10; ++trial) {
      Matrix xs(40, 2);
      for (Eigen::Index i = 0; i < xs.size(); ++i) xs.data()[i] = rng.uniform(-2, 2);
      const KernelSpec k{f, rng.uniform(0.6, 1.0), rng.uniform(0.1, 1.0), 1.0, 1e-6};
      const Matrix g = kernel_matrix(k, xs);
      CHECK((g - g.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
      CHECK(cholesky_with_jitter(g, 1e-6, 1e-4).jitter <= 1e-4);
    }
  }
}

TEST_CASE("kernels: invalid inputs") {
  CHECK_THROWS_AS((KernelSpec{KernelFamily::rbf, 0.0, 1.0}.validate()), ConfigError);
  CHECK_THROWS_AS(parse_kernel("cubic"), ConfigError);
  Matrix xs = Matrix::Zero(2, 1);
  xs(1, 0) = std::nan("");
  CHECK_THROWS(kernel_matrix(KernelSpec{}, xs));
}

TEST_CASE("GP sampling: prior variance at a single input") {
  Rng rng(2);
  const KernelSpec k{KernelFamily::rbf, 0.8, 1.0, 1.0, 1e-6};
  const Matrix x = Matrix::Constant(1, 1, 1.0);
  constexpr int kDraws = 10000;
  double s = 0.0, ss = 0.0;
  for (int i = 0; i < kDraws; ++i) {
    const double y = sample_gp_function(rng, k, x)(0);
    s += y;
    ss += y * y;
  }
  const double mean = s / kDraws;
  const double var = ss / kDraws - mean * mean;
  // Standard error of the variance estimate is sqrt(2 / n) ~ 0.014.
  CHECK(std::abs(var - 1.0) < 0.06);
  CHECK(std::abs(mean) < 3.0 / std::sqrt(static_cast<double>(kDraws)));
}

TEST_CASE("GP sampling: exact draws on a dense grid are smooth with the prior covariance") {
  const KernelSpec k{KernelFamily::rbf, 0.6, 0.5, 1.0, 0.0};
  Matrix grid(400, 1);
  for (int i = 0; i < 400; ++i) grid(i, 0) = -2.0 + 4.0 * i / 399.0;
  // Var(f(x+h) - 2f(x) + f(x-h)) = 6k(0) - 8k(h) + 2k(2h); white noise of
  // variance 1e-6 would add 6e-6, about 100 times the exact value here.
  const double h = 4.0 / 399.0;
  const double exact = 6.0 * k(0.0) - 8.0 * k(h) + 2.0 * k(2.0 * h);
  Rng rng(12);
  double ss = 0.0;
  int n = 0;
  for (int draw = 0; draw < 100; ++draw) {
    const Vector f = sample_gp_function_exact(rng, k, grid);
    for (int i = 1; i + 1 < 400; i += 3, ++n) ss += std::pow(f(i + 1) - 2.0 * f(i) + f(i - 1), 2);
  }
  CHECK(std::abs(ss / n / exact - 1.0) < 0.2);

  // Empirical covariance of two grid points against k(r).
  const Matrix pair = (Matrix(2, 1) << 0.0, 0.5).finished();
  constexpr int kDraws = 40000;
  double s00 = 0.0, s01 = 0.0;
  for (int t = 0; t < kDraws; ++t) {
    const Vector y = sample_gp_function_exact(rng, k, pair);
    s00 += y(0) * y(0);
    s01 += y(0) * y(1);
  }
  CHECK(std::abs(s00 / kDraws - 0.25) < 0.01);
  CHECK(std::abs(s01 / kDraws - k(0.5)) < 0.01);
}

TEST_CASE("GP sampling: batch defaults, determinism and ranges") {
  const GpTaskConfig cfg = GpTaskConfig::one_d();
  Rng a(3), b(3);
  for (int trial = 0; trial < 20; ++trial) {
    const TaskBatch x = sample_gp_batch(a, cfg, 16);
    const TaskBatch y = sample_gp_batch(b, cfg, 16);
    CHECK(x.x == y.x);
    CHECK(x.y == y.y);
    CHECK(x.batch == 16);
    CHECK(x.num_points >= 6);
    CHECK(x.num_points < 50);
    CHECK(x.num_context >= 3);
    CHECK(x.num_context <= x.num_points - 3);
    CHECK(x.x.minCoeff() >= -2.0);
    CHECK(x.x.maxCoeff() <= 2.0);
    CHECK(x.y.allFinite());
  }
}

TEST_CASE("GP sampling: multi-D ranges") {
  Rng rng(4);
  const TaskBatch two = sample_gp_batch(rng, GpTaskConfig::two_d(), 2);
  CHECK(two.dim_x == 2);
  CHECK(two.num_points >= 60);
  CHECK(two.num_points < 128);
  CHECK(two.num_context >= 30);
  CHECK(two.num_context < 98);
  CHECK(two.x.minCoeff() >= 0.0);
  CHECK(two.x.maxCoeff() <= 1.0);
  const TaskBatch three = sample_gp_batch(rng, GpTaskConfig::three_d(), 1);
  CHECK(three.dim_x == 3);
  CHECK(three.num_points >= 128);
  CHECK(three.num_points < 256);
  CHECK(three.num_context >= 64);
  CHECK(three.num_context < 192);
}

TEST_CASE("GP sampling: pooled y-marginals are centered") {
  Rng rng(5);
  double s = 0.0;
  int n = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const TaskBatch t = sample_gp_batch(rng, GpTaskConfig::one_d(), 16);
    for (int b = 0; b < t.batch; ++b) {
      s += t.y(t.row(b, 0), 0);
      ++n;
    }
  }
  // sigma_f <= 1, so 3 / sqrt(n) bounds three standard errors.
  CHECK(std::abs(s / n) < 3.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("context split: boundary, contract and uniformity") {
  const ContextRule rule{};
  Rng rng(6);
  for (int i = 0; i < 100; ++i) CHECK(split_context_target(rng, 6, rule) == 3);
  for (int n = 6; n <= 60; ++n) {
    for (int i = 0; i < 20; ++i) {
      const int m = split_context_target(rng, n, rule);
      CHECK(m >= 3);
      CHECK(m <= n - 3);
    }
  }
  CHECK_THROWS_AS(split_context_target(rng, 5, rule), ConfigError);

  constexpr int kDraws = 100000;
  std::vector<int> counts(48, 0);
  for (int i = 0; i < kDraws; ++i) ++counts[static_cast<std::size_t>(split_context_target(rng, 50, rule))];
  const double expected = kDraws / 45.0;
  double chi2 = 0.0;
  for (int m = 3; m <= 47; ++m) chi2 += std::pow(counts[static_cast<std::size_t>(m)] - expected, 2) / expected;
  const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(44.0), chi2));
  CHECK(p > 0.01);
}

TEST_CASE("wheel: means by region") {
  WheelProblem p;
  p.delta = 0.6;
  const ArmValues center = wheel_means(p, {0.0, 0.0});
  CHECK(center == ArmValues{1.2, 1.0, 1.0, 1.0, 1.0});
  Rng rng(7);
  CHECK(wheel_rewards(p, {0.0, 0.0}, rng).optimal_arm == 0);

  const double r = 0.8 / std::sqrt(2.0);
  const Eigen::Vector2d corners[4] = {{r, r}, {-r, r}, {-r, -r}, {r, -r}};
  for (int q = 0; q < 4; ++q) {
    const ArmValues means = wheel_means(p, corners[q]);
    for (int k = 0; k < kWheelArms; ++k) {
      const double expected = k == 0 ? 1.2 : (k == q + 1 ? 50.0 : 1.0);
      CHECK(means[static_cast<std::size_t>(k)] == expected);
    }
    const WheelOutcome o = wheel_rewards(p, corners[q], rng);
    CHECK(o.optimal_arm == q + 1);
    CHECK(o.means[static_cast<std::size_t>(o.optimal_arm)] == 50.0);
  }
  CHECK_THROWS_AS(wheel_means(p, {0.9, 0.9}), ConfigError);
}

TEST_CASE("wheel: delta near one keeps arm 1 optimal") {
  WheelProblem p;
  p.delta = 0.999999;
  Rng rng(8);
  for (int i = 0; i < 2000; ++i) {
    Eigen::Vector2d X = sample_unit_disk(rng);
    X *= 0.999;
    CHECK(wheel_rewards(p, X, rng).optimal_arm == 0);
  }
}

TEST_CASE("wheel: reward noise has the configured spread") {
  WheelProblem p;
  Rng rng(9);
  constexpr int kDraws = 20000;
  double s = 0.0, ss = 0.0;
  for (int i = 0; i < kDraws; ++i) {
    const double r = wheel_rewards(p, {0.0, 0.0}, rng).rewards[1];
    s += r;
    ss += r * r;
  }
  const double mean = s / kDraws;
  CHECK(std::abs(mean - 1.0) < 1e-3);
  CHECK(std::abs(std::sqrt(ss / kDraws - mean * mean) - 0.012) < 5e-4);
}

TEST_CASE("wheel: batches hold coordinates and all arm rewards") {
  Rng rng(10);
  WheelTaskConfig cfg;
  cfg.num_points = 40;
  cfg.context = {5, 36, 1};
  const TaskBatch t = sample_wheel_batch(rng, cfg, 3);
  CHECK(t.dim_x == 2);
  CHECK(t.dim_y == 5);
  CHECK(t.x.rows() == 120);
  for (Eigen::Index i = 0; i < t.x.rows(); ++i) CHECK(t.x.row(i).norm() <= 1.0);
}

TEST_CASE("benchmarks: known optima") {
  CHECK(std::abs(benchmark_value(BenchmarkFunction::get("ackley2"), Vector::Zero(2))) < 1e-9);
  CHECK(std::abs(benchmark_value(BenchmarkFunction::get("ackley3"), Vector::Zero(3))) < 1e-9);
  CHECK(std::abs(benchmark_value(BenchmarkFunction::get("rastrigin3"), Vector::Zero(3))) < 1e-9);
  CHECK(std::abs(benchmark_value(BenchmarkFunction::get("dropwave2"), Vector::Zero(2)) + 1.0) < 1e-9);
  for (const std::string& name : BenchmarkFunction::names()) {
    const BenchmarkFunction f = BenchmarkFunction::get(name);
    const Vector x = f.optimizer.size() == f.dim ? f.optimizer : Vector::Zero(f.dim);
    CHECK(std::abs(benchmark_value(f, x) - f.optimum) < 1e-9);
  }
}

TEST_CASE("benchmarks: dense-grid oracle for michalewicz2 and cosine3") {
  {
    const BenchmarkFunction f = BenchmarkFunction::get("michalewicz2");
    constexpr int kGrid = 1501;
    double best = 1e300;
    Vector x(2);
    for (int i = 0; i < kGrid; ++i) {
      for (int j = 0; j < kGrid; ++j) {
        x << std::numbers::pi * i / (kGrid - 1), std::numbers::pi * j / (kGrid - 1);
        best = std::min(best, benchmark_value(f, x));
      }
    }
    CHECK(best >= f.optimum - 1e-9);
    CHECK(best <= f.optimum + 1e-3);
  }
  {
    const BenchmarkFunction f = BenchmarkFunction::get("cosine3");
    constexpr int kGrid = 101;
    double best = 1e300;
    Vector x(3);
    for (int i = 0; i < kGrid; ++i)
      for (int j = 0; j < kGrid; ++j)
        for (int k = 0; k < kGrid; ++k) {
          x << -1.0 + 2.0 * i / (kGrid - 1), -1.0 + 2.0 * j / (kGrid - 1), -1.0 + 2.0 * k / (kGrid - 1);
          best = std::min(best, benchmark_value(f, x));
        }
    CHECK(best >= f.optimum - 1e-9);
    CHECK(best <= f.optimum + 1e-3);
  }
}

TEST_CASE("benchmarks: outside the box and unknown names") {
  const BenchmarkFunction f = BenchmarkFunction::get("ackley2");
  CHECK_THROWS_AS(benchmark_value(f, Vector::Constant(2, 40.0)), ConfigError);
  CHECK_THROWS_AS(BenchmarkFunction::get("rosenbrock9"), ConfigError);
}
