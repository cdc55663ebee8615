#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "tnp/cnp.hpp"
#include "tnp/errors.hpp"

#include <cmath>
#include <numeric>

using namespace tnp;

namespace {

Matrix uniform_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double lo, double hi) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

Matrix stack(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() + b.rows(), a.cols());
  out << a, b;
  return out;
}

}  // namespace

TEST_CASE("CNP: context permutation invariance") {
  const CnpModel model(CnpConfig{}, 1);
  Rng rng(2);
  const Matrix cx = uniform_matrix(rng, 7, 1, -2, 2), cy = uniform_matrix(rng, 7, 1, -1, 1);
  const Matrix tx = uniform_matrix(rng, 5, 1, -2, 2), ty = Matrix::Zero(5, 1);
  const DiagonalPrediction base = cnp_predict(model, make_task(cx, cy, tx, ty));
  for (int trial = 0; trial < 5; ++trial) {
    const std::vector<int> perm = rng.permutation(7);
    Matrix px(7, 1), py(7, 1);
    for (int i = 0; i < 7; ++i) {
      px(i, 0) = cx(perm[static_cast<std::size_t>(i)], 0);
      py(i, 0) = cy(perm[static_cast<std::size_t>(i)], 0);
    }
    const DiagonalPrediction p = cnp_predict(model, make_task(px, py, tx, ty));
    CHECK((p.mean - base.mean).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((p.sigma - base.sigma).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("CNP: duplicating the context leaves predictions unchanged") {
  const CnpModel model(CnpConfig{}, 3);
  Rng rng(4);
  const Matrix cx = uniform_matrix(rng, 4, 1, -2, 2), cy = uniform_matrix(rng, 4, 1, -1, 1);
  const Matrix tx = uniform_matrix(rng, 3, 1, -2, 2), ty = Matrix::Zero(3, 1);
  const DiagonalPrediction a = cnp_predict(model, make_task(cx, cy, tx, ty));
  const DiagonalPrediction b = cnp_predict(model, make_task(stack(cx, cx), stack(cy, cy), tx, ty));
  CHECK((a.mean - b.mean).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK((a.sigma - b.sigma).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("CNP: zero decoder weights give the bias for every target") {
  CnpModel model(CnpConfig{}, 5);
  const Linear& last = model.decoder().layers.back();
  model.parameters()[last.weight].setZero();
  model.parameters()[last.bias](0, 0) = 0.3;
  model.parameters()[last.bias](0, 1) = -0.7;
  Rng rng(6);
  const DiagonalPrediction p =
      cnp_predict(model, make_task(Matrix::Constant(1, 1, 0.5), Matrix::Constant(1, 1, -0.2),
                                   uniform_matrix(rng, 4, 1, -2, 2), Matrix::Zero(4, 1)));
  for (int k = 0; k < 4; ++k) {
    CHECK(p.mean(k, 0) == 0.3);
    CHECK(p.sigma(k, 0) == doctest::Approx(std::exp(-0.7)).epsilon(1e-15));
  }
}

TEST_CASE("CNP: targets are predicted independently") {
  const CnpModel model(CnpConfig{}, 7);
  Rng rng(8);
  const Matrix cx = uniform_matrix(rng, 4, 1, -2, 2), cy = uniform_matrix(rng, 4, 1, -1, 1);
  Matrix tx = uniform_matrix(rng, 4, 1, -2, 2);
  const DiagonalPrediction base = cnp_predict(model, make_task(cx, cy, tx, Matrix::Zero(4, 1)));
  tx(1, 0) += 0.5;
  const DiagonalPrediction p = cnp_predict(model, make_task(cx, cy, tx, Matrix::Zero(4, 1)));
  for (int k = 0; k < 4; ++k) {
    if (k == 1) continue;
    CHECK(p.mean(k, 0) == base.mean(k, 0));
    CHECK(p.sigma(k, 0) == base.sigma(k, 0));
  }
}

TEST_CASE("CNP: empty context and hidden labels are rejected") {
  const CnpModel model(CnpConfig{}, 9);
  TaskBatch task = make_task(Matrix::Zero(2, 1), Matrix::Zero(2, 1), Matrix::Zero(2, 1), Matrix::Zero(2, 1));
  TaskBatch empty = task;
  empty.num_context = 0;
  CHECK_THROWS_AS(cnp_predict(model, empty), DimensionError);
  task.observed = Matrix::Ones(4, 1);
  task.observed(0, 0) = 0.0;
  CHECK_THROWS_AS(cnp_predict(model, task), ConfigError);
}

TEST_CASE("CNP: multi-output shapes") {
  CnpConfig cfg;
  cfg.dim_x = 2;
  cfg.dim_y = 5;
  const CnpModel model(cfg, 10);
  Rng rng(11);
  const DiagonalPrediction p = cnp_predict(model, make_task(uniform_matrix(rng, 3, 2, -1, 1), uniform_matrix(rng, 3, 5, 0, 1),
                                                            uniform_matrix(rng, 2, 2, -1, 1), Matrix::Zero(2, 5)));
  CHECK(p.mean.rows() == 2);
  CHECK(p.mean.cols() == 5);
  CHECK((p.sigma.array() > 0.0).all());
}
