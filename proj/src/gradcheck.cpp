#include "tnp/gradcheck.hpp"

#include "tnp/errors.hpp"

#include <algorithm>
#include <cmath>

namespace tnp {

namespace {

double evaluate(const TapeObjective& objective, const ParameterSet& params) {
  Tape tape(false);
  BoundParameters bound(tape, params);
  const double v = objective(bound).item();
  if (!std::isfinite(v)) throw NumericError("gradient check: objective is not finite");
  return v;
}

}  // namespace

GradCheckResult finite_difference_check(const TapeObjective& objective, const ParameterSet& params, double h,
                                        std::size_t max_entries_per_array) {
  std::vector<Matrix> analytic;
  {
    Tape tape(true);
    BoundParameters bound(tape, params);
    const Var loss = objective(bound);
    if (!std::isfinite(loss.item())) throw NumericError("gradient check: objective is not finite");
    tape.backward(loss);
    for (int i = 0; i < params.size(); ++i) analytic.push_back(tape.grad(bound[i]));
  }

  GradCheckResult result;
  ParameterSet probe = params;
  const double centre = evaluate(objective, probe);
  for (int i = 0; i < params.size(); ++i) {
    Matrix& arr = probe[i];
    const auto count = static_cast<std::size_t>(arr.size());
    std::size_t stride = 1;
    if (max_entries_per_array > 0 && count > max_entries_per_array)
      stride = (count + max_entries_per_array - 1) / max_entries_per_array;
    for (std::size_t e = 0; e < count; e += stride) {
      double& slot = arr.data()[e];
      const double saved = slot;
      const double an = analytic[static_cast<std::size_t>(i)].data()[e];
      double step = h;
      double err = 0.0;
      for (int attempt = 0; attempt < 3; ++attempt) {
        slot = saved + step;
        const double up = evaluate(objective, probe);
        slot = saved - step;
        const double down = evaluate(objective, probe);
        slot = saved;
        const double fd = (up - down) / (2.0 * step);
        err = std::abs(an - fd) / std::max(1.0, std::abs(fd));
        const double forward = (up - centre) / step;
        const double backward = (centre - down) / step;
        const bool kink = std::abs(forward - backward) > 1e-5 * std::max(1.0, std::abs(fd));
        if (err < 1e-6 || !kink || attempt == 2) break;
        step *= 1e-2;
        ++result.kink_retries;
      }
      ++result.entries_checked;
      if (err > result.max_relative_error || result.worst_entry < 0) {
        result.max_relative_error = err;
        result.worst_parameter = params.name(i);
        result.worst_entry = static_cast<Eigen::Index>(e);
      }
    }
  }
  return result;
}

}  // namespace tnp
