#pragma once

#include "tnp/nn.hpp"

#include <functional>
#include <string>

namespace tnp {

// Builds a scalar on the given tape from bound parameters. Must be
// deterministic for fixed parameters.
using TapeObjective = std::function<Var(const BoundParameters&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  Eigen::Index worst_entry = -1;
  std::size_t entries_checked = 0;
  // Entries whose step straddled a ReLU kink and were re-measured.
  std::size_t kink_retries = 0;
};

// Compares reverse-mode gradients with central differences. The error of an
// entry is |analytic - fd| / max(1, |fd|). max_entries_per_array > 0 checks
// an evenly strided subset of each array. When the two one-sided slopes of an
// entry disagree, the step crossed a kink, so it is shrunk by 100 (at most
// twice) and the entry re-measured. Throws NumericError if the objective is
// not finite.
GradCheckResult finite_difference_check(const TapeObjective& objective, const ParameterSet& params,
                                        double h = 1e-5, std::size_t max_entries_per_array = 0);

}  // namespace tnp
