#include "tnp/linalg.hpp"

#include "tnp/errors.hpp"

#include <cmath>

namespace tnp {

CholeskyResult cholesky_with_jitter(const Matrix& a, double initial, double max_jitter) {
  if (a.rows() != a.cols()) throw DimensionError("cholesky: matrix is not square");
  if (!a.allFinite()) throw NumericError("covariance factorization failed: non-finite entries");
  double jitter = initial;
  while (true) {
    Eigen::LLT<Matrix> llt;
    if (jitter > 0.0) {
      Matrix shifted = a;
      shifted.diagonal().array() += jitter;
      llt.compute(shifted);
    } else {
      llt.compute(a);
    }
    if (llt.info() == Eigen::Success) {
      Matrix lower = llt.matrixL();
      if (lower.diagonal().minCoeff() > 0.0 && lower.allFinite()) return {std::move(lower), jitter};
    }
    jitter = jitter > 0.0 ? jitter * 10.0 : 1e-6;
    if (jitter > max_jitter * (1.0 + 1e-12)) throw NumericError("covariance factorization failed");
  }
}

double mvn_log_density_tril(const Vector& mean, const Matrix& lower, const Vector& y) {
  const auto n = mean.size();
  if (lower.rows() != n || lower.cols() != n || y.size() != n)
    throw DimensionError("mvn_log_density_tril: dimension mismatch");
  if (!(lower.diagonal().array() > 0.0).all()) throw NumericError("singular scale factor");
  const Vector z = lower.triangularView<Eigen::Lower>().solve(y - mean);
  return -0.5 * z.squaredNorm() - lower.diagonal().array().log().sum() -
         static_cast<double>(n) * kHalfLog2Pi;
}

}  // namespace tnp
