#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "tnp/errors.hpp"
#include "tnp/linalg.hpp"
#include "tnp/tnp_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace tnp;

namespace {

Matrix uniform_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double lo, double hi) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

TaskBatch random_task(Rng& rng, int m, int n) {
  return make_task(uniform_matrix(rng, m, 1, -2, 2), uniform_matrix(rng, m, 1, -1, 1), uniform_matrix(rng, n, 1, -2, 2),
                   uniform_matrix(rng, n, 1, -1, 1));
}

ModelConfig small_config(Variant v) {
  ModelConfig cfg = ModelConfig::desk_scale(v);
  cfg.d_model = 16;
  cfg.n_layers = 2;
  cfg.ff_width = 32;
  cfg.n_embed_layers = 2;
  cfg.nd_extra_attention_layers = 1;
  cfg.nd_projection_dim = 6;
  cfg.nd_projection_layers = 2;
  return cfg;
}

// Task with its targets reordered by perm (context untouched).
TaskBatch permute_targets(const TaskBatch& task, const std::vector<int>& perm) {
  std::vector<int> full(static_cast<std::size_t>(task.num_points));
  std::iota(full.begin(), full.end(), 0);
  for (std::size_t k = 0; k < perm.size(); ++k) full[static_cast<std::size_t>(task.num_context) + k] = task.num_context + perm[k];
  return task.reordered(full);
}

TaskBatch permute_context(const TaskBatch& task, const std::vector<int>& perm) {
  std::vector<int> full(static_cast<std::size_t>(task.num_points));
  std::iota(full.begin(), full.end(), 0);
  for (std::size_t k = 0; k < perm.size(); ++k) full[k] = perm[k];
  return task.reordered(full);
}

double dense_mvn_log_density(const Vector& mean, const Matrix& cov, const Vector& y) {
  const Vector r = y - mean;
  const double quad = r.dot(cov.inverse() * r);
  const auto n = static_cast<double>(y.size());
  return -0.5 * (n * std::log(2.0 * M_PI) + std::log(cov.determinant()) + quad);
}

// Two-sided Kolmogorov distribution tail, with the small-sample correction
// to the statistic.
double ks_p_value(double d, std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  const double lambda = (sn + 0.12 + 0.11 / sn) * d;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) p += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(p, 0.0, 1.0);
}

}  // namespace

// ------------------------------------------------------------ tokens, masks

TEST_CASE("embed_sequence: token counts and width") {
  Rng rng(1);
  const TaskBatch task = random_task(rng, 2, 3);
  const TokenSequence a = embed_sequence(task, Variant::autoregressive);
  const TokenSequence d = embed_sequence(task, Variant::diagonal);
  CHECK(a.length == 8);
  CHECK(d.length == 5);
  CHECK(a.tokens.cols() == 3);
  CHECK(d.tokens.cols() == 3);
}

TEST_CASE("embed_sequence: padded tokens carry zero label and flag") {
  Rng rng(2);
  const TaskBatch task = random_task(rng, 2, 3);
  const TokenSequence a = embed_sequence(task, Variant::autoregressive);
  for (int i = 0; i < a.length; ++i) {
    const bool padded = a.roles[static_cast<std::size_t>(i)] == TokenRole::target_padded;
    CHECK(a.tokens(i, 2) == (padded ? 0.0 : 1.0));
    if (padded) CHECK(a.tokens(i, 1) == 0.0);
  }
  CHECK(a.padded_positions == std::vector<int>{5, 6, 7});
  // Padded token for target k holds that target's x.
  for (int k = 0; k < 3; ++k) CHECK(a.tokens(5 + k, 0) == task.x(2 + k, 0));
}

TEST_CASE("embed_sequence: empty context or empty target set") {
  Rng rng(3);
  TaskBatch task = random_task(rng, 2, 3);
  task.num_context = 0;
  CHECK_THROWS_AS(embed_sequence(task, Variant::diagonal), DimensionError);
  task.num_context = 5;
  CHECK_THROWS(embed_sequence(task, Variant::diagonal));
}

TEST_CASE("build_mask: A variant rows for N=5, m=2") {
  const MaskSpec mask = build_mask(5, 2, Variant::autoregressive);
  REQUIRE(mask.rows() == 8);
  auto allowed = [&](int r) {
    std::vector<int> cols;
    for (int c = 0; c < 8; ++c)
      if (mask.allow(r, c)) cols.push_back(c);
    return cols;
  };
  // Sequence: pair1 pair2 | pair3 pair4 pair5 | pad3 pad4 pad5.
  CHECK(allowed(2) == std::vector<int>{0, 1, 2});
  CHECK(allowed(5) == std::vector<int>{0, 1});
  CHECK(allowed(4) == std::vector<int>{0, 1, 2, 3, 4});
  CHECK(allowed(7) == std::vector<int>{0, 1, 2, 3});
  for (int r = 0; r < 2; ++r) CHECK(allowed(r) == std::vector<int>{0, 1});
}

TEST_CASE("build_mask: D variant padded rows see context plus self") {
  const MaskSpec mask = build_mask(5, 2, Variant::diagonal);
  REQUIRE(mask.rows() == 5);
  std::vector<int> cols;
  for (int c = 0; c < 5; ++c)
    if (mask.allow(3, c)) cols.push_back(c);
  CHECK(cols == std::vector<int>{0, 1, 3});
  for (int r = 0; r < 2; ++r) CHECK(mask.allow.row(r).tail(3).count() == 0);
}

TEST_CASE("build_mask: every row allows something; m >= N throws") {
  for (const Variant v : {Variant::autoregressive, Variant::diagonal, Variant::non_diagonal}) {
    for (int n = 2; n <= 7; ++n) {
      for (int m = 1; m < n; ++m) {
        const MaskSpec mask = build_mask(n, m, v);
        for (Eigen::Index r = 0; r < mask.rows(); ++r) CHECK(mask.allow.row(r).count() >= 1);
        for (int r = 0; r < m; ++r) CHECK(mask.allow.row(r).head(m).count() == m);
        for (int r = 0; r < m; ++r) CHECK(mask.allow.row(r).tail(mask.cols() - m).count() == 0);
      }
    }
    CHECK_THROWS_AS(build_mask(5, 5, v), DimensionError);
    CHECK_THROWS_AS(build_mask(5, 6, v), DimensionError);
  }
}

// ------------------------------------------------------------ likelihoods

TEST_CASE("log_likelihood_diag: standard normal values") {
  CHECK(log_likelihood_diag(Vector::Zero(1), Vector::Ones(1), Vector::Zero(1)) == doctest::Approx(-0.91894).epsilon(1e-5));
  Vector mu(3);
  mu << 0.3, -1.0, 2.0;
  CHECK(log_likelihood_diag(mu, Vector::Ones(3), mu) == doctest::Approx(-kHalfLog2Pi).epsilon(1e-15));
}

TEST_CASE("log_likelihood_diag: equals dense oracle with identity covariance") {
  Vector mu(2), y(2);
  mu << 0.5, -0.25;
  y << 1.0, 0.75;
  const double dense = dense_mvn_log_density(mu, Matrix::Identity(2, 2), y) / 2.0;
  CHECK(std::abs(log_likelihood_diag(mu, Vector::Ones(2), y) - dense) < 1e-10);
}

TEST_CASE("log_likelihood_diag: bad sigma or length") {
  CHECK_THROWS_AS(log_likelihood_diag(Vector::Zero(2), Vector::Zero(2), Vector::Zero(2)), NumericError);
  CHECK_THROWS_AS(log_likelihood_diag(Vector::Zero(2), Vector::Ones(3), Vector::Zero(2)), DimensionError);
}

TEST_CASE("log_likelihood_joint: closed-form values") {
  CHECK(log_likelihood_joint(Vector::Zero(1), Matrix::Ones(1, 1), Vector::Zero(1)) ==
        doctest::Approx(-0.91894).epsilon(1e-5));
  const double normalized = log_likelihood_joint(Vector::Zero(2), Matrix::Identity(2, 2), Vector::Zero(2));
  CHECK(normalized == doctest::Approx(-0.91894).epsilon(1e-5));
  CHECK(2.0 * normalized == doctest::Approx(-1.83788).epsilon(1e-5));
}

TEST_CASE("log_likelihood_joint: 4x4 dense determinant/inverse oracle") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix l = Matrix::Zero(4, 4);
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < i; ++j) l(i, j) = rng.normal(0.0, 0.5);
      l(i, i) = rng.uniform(0.3, 1.5);
    }
    Vector mu(4), y(4);
    for (int i = 0; i < 4; ++i) {
      mu(i) = rng.normal();
      y(i) = rng.normal();
    }
    const double oracle = dense_mvn_log_density(mu, l * l.transpose(), y) / 4.0;
    CHECK(std::abs(log_likelihood_joint(mu, l, y) - oracle) < 1e-9);
  }
}

TEST_CASE("log_likelihood_joint: diagonal factor equals diag likelihood") {
  Rng rng(8);
  Vector mu(5), sigma(5), y(5);
  for (int i = 0; i < 5; ++i) {
    mu(i) = rng.normal();
    sigma(i) = rng.uniform(0.1, 2.0);
    y(i) = rng.normal();
  }
  const Matrix l = sigma.asDiagonal();
  CHECK(std::abs(log_likelihood_joint(mu, l, y) - log_likelihood_diag(mu, sigma, y)) < 1e-10);
}

TEST_CASE("log_likelihood_joint: non-positive diagonal throws") {
  Matrix l = Matrix::Identity(2, 2);
  l(1, 1) = 0.0;
  CHECK_THROWS_AS(log_likelihood_joint(Vector::Zero(2), l, Vector::Zero(2)), NumericError);
}

TEST_CASE("ND head: lower(H H^T) for H = [[1],[1]]") {
  Tape tape(false);
  Matrix h(2, 1);
  h << 1, 1;
  const Var g = ad::block_gram(tape.constant(h), 2);
  const Matrix l = ad::block_lower(g, 2, 0.0).value();
  Matrix expected(2, 2);
  expected << 1, 0, 1, 1;
  CHECK(l == expected);
  Matrix sigma(2, 2);
  sigma << 1, 1, 1, 2;
  CHECK(l * l.transpose() == sigma);
}

// ------------------------------------------------------------ predictions

TEST_CASE("TNP-D: context invariance and target equivariance") {
  const TnpModel model(small_config(Variant::diagonal), 21);
  Rng rng(22);
  const TaskBatch task = random_task(rng, 6, 5);
  const DiagonalPrediction base = predict_diagonal(model, task);
  for (int trial = 0; trial < 5; ++trial) {
    const DiagonalPrediction c = predict_diagonal(model, permute_context(task, rng.permutation(6)));
    CHECK((c.mean - base.mean).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((c.sigma - base.sigma).cwiseAbs().maxCoeff() <= 1e-9);
    const std::vector<int> perm = rng.permutation(5);
    const DiagonalPrediction t = predict_diagonal(model, permute_targets(task, perm));
    for (int k = 0; k < 5; ++k) {
      CHECK(std::abs(t.mean(k, 0) - base.mean(perm[static_cast<std::size_t>(k)], 0)) <= 1e-8);
      CHECK(std::abs(t.sigma(k, 0) - base.sigma(perm[static_cast<std::size_t>(k)], 0)) <= 1e-8);
    }
  }
}

TEST_CASE("TNP-D: changing one target's x leaves the others unchanged") {
  const TnpModel model(small_config(Variant::diagonal), 23);
  Rng rng(24);
  const TaskBatch task = random_task(rng, 4, 4);
  const DiagonalPrediction base = predict_diagonal(model, task);
  TaskBatch moved = task;
  moved.x(4 + 2, 0) += 0.7;
  const DiagonalPrediction p = predict_diagonal(model, moved);
  for (int k = 0; k < 4; ++k) {
    if (k == 2) {
      CHECK(std::abs(p.mean(k, 0) - base.mean(k, 0)) > 1e-12);
    } else {
      CHECK(std::abs(p.mean(k, 0) - base.mean(k, 0)) <= 1e-9);
      CHECK(std::abs(p.sigma(k, 0) - base.sigma(k, 0)) <= 1e-9);
    }
  }
}

TEST_CASE("TNP-D: predictions are positive and finite") {
  const TnpModel model(small_config(Variant::diagonal), 25);
  Rng rng(26);
  const DiagonalPrediction p = predict_diagonal(model, random_task(rng, 3, 7));
  CHECK(p.mean.allFinite());
  CHECK((p.sigma.array() > 0.0).all());
}

TEST_CASE("TNP-A: label dependencies of the teacher-forced conditionals") {
  const TnpModel model(small_config(Variant::autoregressive), 31);
  Rng rng(32);
  const int m = 3, n = 4;
  const TaskBatch task = random_task(rng, m, n);
  const DiagonalPrediction base = predict_autoregressive_teacher_forced(model, task);

  TaskBatch last = task;
  last.y(m + n - 1, 0) += 1.3;
  const DiagonalPrediction p_last = predict_autoregressive_teacher_forced(model, last);
  CHECK((p_last.mean - base.mean).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK((p_last.sigma - base.sigma).cwiseAbs().maxCoeff() <= 1e-9);

  TaskBatch first = task;
  first.y(m, 0) += 1.3;
  const DiagonalPrediction p_first = predict_autoregressive_teacher_forced(model, first);
  CHECK(std::abs(p_first.mean(0, 0) - base.mean(0, 0)) <= 1e-9);
  CHECK(std::abs(p_first.sigma(0, 0) - base.sigma(0, 0)) <= 1e-9);
  for (int k = 1; k < n; ++k) CHECK(std::abs(p_first.mean(k, 0) - base.mean(k, 0)) > 1e-12);
}

TEST_CASE("TNP-A: a single target's loss is its conditional's negative log-density") {
  const TnpModel model(small_config(Variant::autoregressive), 33);
  Rng rng(34);
  const TaskBatch task = random_task(rng, 5, 1);
  const DiagonalPrediction p = predict_autoregressive_teacher_forced(model, task);
  Tape tape(false);
  BoundParameters bound(tape, model.parameters());
  const double loss = model.loss(bound, task, {}).item();
  const double r = (task.y(5, 0) - p.mean(0, 0)) / p.sigma(0, 0);
  CHECK(std::abs(loss - (std::log(p.sigma(0, 0)) + kHalfLog2Pi + 0.5 * r * r)) < 1e-10);
}

TEST_CASE("TNP-A: context invariance") {
  const TnpModel model(small_config(Variant::autoregressive), 35);
  Rng rng(36);
  const TaskBatch task = random_task(rng, 5, 3);
  const DiagonalPrediction base = predict_autoregressive_teacher_forced(model, task);
  for (int trial = 0; trial < 4; ++trial) {
    const DiagonalPrediction p = predict_autoregressive_teacher_forced(model, permute_context(task, rng.permutation(5)));
    CHECK((p.mean - base.mean).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((p.sigma - base.sigma).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("TNP-ND: factor shape, positive definiteness and equivariance") {
  const TnpModel model(small_config(Variant::non_diagonal), 41);
  Rng rng(42);
  const TaskBatch task = random_task(rng, 5, 6);
  const JointGaussianPrediction base = predict_joint(model, task);
  REQUIRE(base.scale_tril.size() == 1);
  const Matrix& l = base.scale_tril[0];
  CHECK(l.isLowerTriangular());
  CHECK((l.diagonal().array() > 0.0).all());
  const Matrix sigma = base.covariance(0);
  CHECK((sigma - sigma.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(Eigen::LLT<Matrix>(sigma).info() == Eigen::Success);

  for (int trial = 0; trial < 5; ++trial) {
    const std::vector<int> perm = rng.permutation(6);
    const JointGaussianPrediction p = predict_joint(model, permute_targets(task, perm));
    Matrix pm = Matrix::Zero(6, 6);
    for (int k = 0; k < 6; ++k) pm(k, perm[static_cast<std::size_t>(k)]) = 1.0;
    CHECK((p.mean[0] - pm * base.mean[0]).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK((p.covariance(0) - pm * sigma * pm.transpose()).cwiseAbs().maxCoeff() <= 1e-8);
    const JointGaussianPrediction c = predict_joint(model, permute_context(task, rng.permutation(5)));
    CHECK((c.mean[0] - base.mean[0]).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((c.covariance(0) - sigma).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("TNP-ND: a single target reduces to a univariate Gaussian") {
  const TnpModel model(small_config(Variant::non_diagonal), 43);
  Rng rng(44);
  const TaskBatch task = random_task(rng, 4, 1);
  const JointGaussianPrediction p = predict_joint(model, task);
  const double s = p.scale_tril[0](0, 0);
  Vector y(1);
  y << task.y(4, 0);
  const double r = (y(0) - p.mean[0](0)) / s;
  CHECK(std::abs(p.log_likelihood(0, y) - (-std::log(s) - kHalfLog2Pi - 0.5 * r * r)) < 1e-12);
  const DiagonalPrediction marg = model.predict_marginals(task);
  CHECK(std::abs(marg.sigma(0, 0) - s) < 1e-12);
}

TEST_CASE("TNP-ND: low-rank covariance is symmetric positive definite") {
  ModelConfig cfg = small_config(Variant::non_diagonal);
  cfg.nd_covariance = CovarianceMode::lowrank;
  cfg.lowrank_rank = 3;
  const TnpModel model(cfg, 45);
  Rng rng(46);
  const TaskBatch task = random_task(rng, 4, 6);
  const JointGaussianPrediction p = predict_joint(model, task);
  const Matrix sigma = p.covariance(0);
  CHECK((sigma - sigma.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(Eigen::LLT<Matrix>(sigma).info() == Eigen::Success);
}

// ------------------------------------------------------- sampling, symmetry

TEST_CASE("AR sampling: mean decoding equals the greedy per-step means") {
  const TnpModel model(small_config(Variant::autoregressive), 51);
  Rng rng(52);
  const Matrix cx = uniform_matrix(rng, 4, 1, -2, 2), cy = uniform_matrix(rng, 4, 1, -1, 1);
  const Matrix tx = uniform_matrix(rng, 5, 1, -2, 2);
  const Vector decoded = sample_targets_autoregressive(model, cx, cy, tx, 1, true);
  // With the decoded values as labels, each teacher-forced mean reproduces them.
  Matrix ty(5, 1);
  ty.col(0) = decoded;
  const DiagonalPrediction p = predict_autoregressive_teacher_forced(model, make_task(cx, cy, tx, ty));
  CHECK((p.mean.col(0) - decoded).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("AR sampling: same seed gives identical samples") {
  const TnpModel model(small_config(Variant::autoregressive), 53);
  Rng rng(54);
  const Matrix cx = uniform_matrix(rng, 3, 1, -2, 2), cy = uniform_matrix(rng, 3, 1, -1, 1);
  const Matrix tx = uniform_matrix(rng, 4, 1, -2, 2);
  const Vector a = sample_targets_autoregressive(model, cx, cy, tx, 99);
  const Vector b = sample_targets_autoregressive(model, cx, cy, tx, 99);
  const Vector c = sample_targets_autoregressive(model, cx, cy, tx, 100);
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("AR sampling: one target matches the predicted Gaussian (KS)") {
  ModelConfig cfg = small_config(Variant::autoregressive);
  cfg.d_model = 8;
  cfg.ff_width = 16;
  const TnpModel model(cfg, 55);
  Rng rng(56);
  const Matrix cx = uniform_matrix(rng, 3, 1, -2, 2), cy = uniform_matrix(rng, 3, 1, -1, 1);
  const Matrix tx = uniform_matrix(rng, 1, 1, -2, 2);
  const DiagonalPrediction p = predict_autoregressive_teacher_forced(model, make_task(cx, cy, tx, Matrix::Zero(1, 1)));
  const double mu = p.mean(0, 0), sigma = p.sigma(0, 0);

  constexpr std::size_t kDraws = 10000;
  std::vector<double> u(kDraws);
  for (std::size_t i = 0; i < kDraws; ++i) {
    const double draw = sample_targets_autoregressive(model, cx, cy, tx, 1000 + i)(0);
    u[i] = 0.5 * std::erfc(-(draw - mu) / (sigma * std::sqrt(2.0)));
  }
  std::sort(u.begin(), u.end());
  double d = 0.0;
  for (std::size_t i = 0; i < kDraws; ++i) {
    const double n = static_cast<double>(kDraws);
    d = std::max({d, static_cast<double>(i + 1) / n - u[i], u[i] - static_cast<double>(i) / n});
  }
  CHECK(ks_p_value(d, kDraws) > 0.01);
}

TEST_CASE("symmetrized likelihood: trivial groups") {
  const TnpModel model(small_config(Variant::autoregressive), 61);
  Rng rng(62);
  const TaskBatch one = random_task(rng, 4, 1);
  const double plain = autoregressive_log_likelihood(model, one)(0);
  for (const int perms : {1, 3, 8}) CHECK(std::abs(symmetrized_log_likelihood(model, one, perms, 5)(0) - plain) < 1e-12);

  const TaskBatch three = random_task(rng, 4, 3);
  const double eq5 = autoregressive_log_likelihood(model, three)(0);
  CHECK(std::abs(symmetrized_log_likelihood(model, three, {{0, 1, 2}})(0) - eq5) < 1e-12);
}

TEST_CASE("symmetrized likelihood: full group is invariant to target order") {
  const TnpModel model(small_config(Variant::autoregressive), 63);
  Rng rng(64);
  const TaskBatch task = random_task(rng, 4, 3);
  const double base = symmetrized_log_likelihood_exact(model, task)(0);
  std::vector<int> perm{0, 1, 2};
  while (std::next_permutation(perm.begin(), perm.end()))
    CHECK(std::abs(symmetrized_log_likelihood_exact(model, permute_targets(task, perm))(0) - base) <= 1e-9);
  CHECK_THROWS_AS(symmetrized_log_likelihood_exact(model, random_task(rng, 2, 5)), ConfigError);
}

TEST_CASE("symmetrized likelihood: estimate variance shrinks with more orders") {
  const TnpModel model(small_config(Variant::autoregressive), 65);
  Rng rng(66);
  const TaskBatch task = random_task(rng, 3, 5);
  auto spread = [&](int perms) {
    std::vector<double> v;
    for (std::uint64_t s = 0; s < 40; ++s) v.push_back(symmetrized_log_likelihood(model, task, perms, s)(0));
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (const double x : v) ss += (x - mean) * (x - mean);
    return ss / static_cast<double>(v.size() - 1);
  };
  const double v1 = spread(1), v4 = spread(4), v16 = spread(16);
  CHECK(v1 > v4);
  CHECK(v4 > v16);
}
