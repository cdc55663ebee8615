#pragma once

// Shared prediction types and the interface the training loop, metrics and
// decision harnesses use to talk to either TNP or CNP models.

#include "tnp/config.hpp"
#include "tnp/nn.hpp"
#include "tnp/tasks.hpp"

#include <memory>
#include <string>
#include <vector>

namespace tnp {

// Per-target Gaussian predictions, rows task-major (batch*targets x dim_y).
struct DiagonalPrediction {
  int batch = 0;
  int targets = 0;
  Matrix mean;
  Matrix sigma;

  Vector task_mean(int b, int dim = 0) const { return mean.col(dim).segment(static_cast<Eigen::Index>(b) * targets, targets); }
  Vector task_sigma(int b, int dim = 0) const { return sigma.col(dim).segment(static_cast<Eigen::Index>(b) * targets, targets); }
};

// Joint Gaussian over the targets of each task. The factor is lower
// triangular in a canonical target order: row k of scale_tril[b] belongs to
// target order[b][k]. mean and covariance() use the caller's target order.
struct JointGaussianPrediction {
  std::vector<Vector> mean;
  std::vector<Matrix> scale_tril;
  std::vector<std::vector<int>> order;

  Matrix covariance(std::size_t b) const;
  // log N(y | mean, Sigma) divided by the number of targets.
  double log_likelihood(std::size_t b, const Vector& y) const;
};

// Mean over targets of log N(y_i | mean_i, sigma_i^2). Throws NumericError
// if some sigma is not positive, DimensionError on length mismatch.
double log_likelihood_diag(const Vector& mean, const Vector& sigma, const Vector& y);
// log N(y | mean, L L^T) divided by the number of targets.
double log_likelihood_joint(const Vector& mean, const Matrix& scale_tril, const Vector& y);

class NeuralProcess {
 public:
  virtual ~NeuralProcess() = default;

  virtual std::string kind() const = 0;
  virtual ParameterSet& parameters() = 0;
  virtual const ParameterSet& parameters() const = 0;
  // Everything needed to rebuild the architecture (model.* keys).
  virtual KeyValues config_values() const = 0;
  virtual int dim_x() const = 0;
  virtual int dim_y() const = 0;

  // Mean negative log-likelihood per regressed entry, averaged over tasks.
  virtual Var loss(const BoundParameters& params, const TaskBatch& batch, const Dropout& dropout) const = 0;
  // Per-target Gaussian marginals used for RMSE, calibration and UCB.
  virtual DiagonalPrediction predict_marginals(const TaskBatch& batch) const = 0;
};

// Rebuilds a model from model.* keys with freshly initialised parameters.
std::unique_ptr<NeuralProcess> make_model(const KeyValues& config, std::uint64_t seed);

}  // namespace tnp
