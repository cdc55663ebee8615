#pragma once

#include "tnp/autodiff.hpp"

namespace tnp {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

struct CholeskyResult {
  Matrix lower;
  double jitter = 0.0;  // jitter that was finally added to the diagonal
};

// Cholesky of a + jitter*I, trying `initial` first and multiplying by 10
// after each failure until `max_jitter` is exceeded. initial == 0 tries the
// bare matrix first and then starts escalating from 1e-6. Throws
// NumericError("covariance factorization failed").
CholeskyResult cholesky_with_jitter(const Matrix& a, double initial, double max_jitter);

// log N(y | mean, L L^T) (total, not normalized). Throws NumericError if a
// diagonal entry of L is not positive.
double mvn_log_density_tril(const Vector& mean, const Matrix& lower, const Vector& y);

}  // namespace tnp
