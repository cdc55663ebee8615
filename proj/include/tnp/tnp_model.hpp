#pragma once

// Transformer neural process: each (x, y) pair is one token, there are no
// positional encodings, and the attention mask alone decides what each
// prediction may condition on.
//
//   A  (autoregressive): tokens = context pairs, real target pairs, padded
//      targets (x_i, 0). The padded token for target i sees the context and
//      the real target pairs before i, so one pass yields every conditional
//      of the chain-rule factorisation under teacher forcing.
//   D  (diagonal): tokens = context pairs, padded targets; targets are
//      conditionally independent given the context.
//   ND (non-diagonal): D's backbone plus a covariance head producing a full
//      Gaussian over the targets.
//
// Every token carries an observed flag per label dimension, so a padded
// label of 0 is distinguishable from a real observation of 0.

#include "tnp/model.hpp"

#include <cstdint>
#include <string_view>

namespace tnp {

enum class Variant { autoregressive, diagonal, non_diagonal };
Variant parse_variant(std::string_view name);  // "A", "D", "ND"
std::string_view variant_name(Variant v);

enum class CovarianceMode { cholesky, lowrank };

inline constexpr double kLogSigmaMin = -6.0;
inline constexpr double kLogSigmaMax = 6.0;
inline constexpr double kCholeskyEpsilon = 1e-6;
inline constexpr double kCholeskyEpsilonMax = 1e-2;

struct ModelConfig {
  int dim_x = 1;
  int dim_y = 1;
  int d_model = 64;
  int n_layers = 6;
  int n_heads = 4;
  int ff_width = 128;
  int n_embed_layers = 4;
  Variant variant = Variant::diagonal;
  int nd_extra_attention_layers = 2;
  int nd_projection_dim = 20;
  int nd_projection_layers = 4;
  CovarianceMode nd_covariance = CovarianceMode::cholesky;
  int lowrank_rank = 20;
  double dropout = 0.0;

  // Throws ConfigError.
  void validate() const;
  int token_width() const { return dim_x + 2 * dim_y; }

  static ModelConfig full_scale(Variant v);  // the member defaults: d_model 64, 6 layers, 4 heads
  static ModelConfig desk_scale(Variant v);  // d_model 32, 4 layers, 2 heads
  static ModelConfig from_values(const KeyValues& kv);
  KeyValues to_values() const;
};

enum class TokenRole : std::uint8_t { context, target_real, target_padded };

struct TokenSequence {
  Matrix tokens;  // (batch*length x token_width)
  int batch = 0;
  int length = 0;  // tokens per task
  std::vector<TokenRole> roles;
  std::vector<int> padded_positions;  // in target order

  std::vector<int> padded_rows() const;  // task-major rows of padded tokens
};

// Variant A: 2N - m tokens per task; D/ND: N tokens. Throws DimensionError
// on an empty context (unless allowed) or an empty target set.
TokenSequence embed_sequence(const TaskBatch& batch, Variant variant, bool allow_empty_context = false);

// Attention permissions for a task with N points of which m are context.
// m == 0 is accepted for variant A (pretraining); the first padded token,
// which would otherwise see nothing, then attends to itself.
MaskSpec build_mask(int num_points, int num_context, Variant variant);

class TnpModel final : public NeuralProcess {
 public:
  TnpModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::string kind() const override { return "tnp"; }
  ParameterSet& parameters() override { return params_; }
  const ParameterSet& parameters() const override { return params_; }
  KeyValues config_values() const override { return config_.to_values(); }
  int dim_x() const override { return config_.dim_x; }
  int dim_y() const override { return config_.dim_y; }

  Var loss(const BoundParameters& params, const TaskBatch& batch, const Dropout& dropout) const override;
  DiagonalPrediction predict_marginals(const TaskBatch& batch) const override;

  // Backbone output after the final norm, (batch*length x d_model).
  Var encode(const BoundParameters& p, const TokenSequence& seq, const MaskSpec& mask,
             const Dropout& dropout = {}) const;

  struct DiagonalHead {
    Var mean;       // rows x dim_y
    Var log_sigma;  // clamped to [kLogSigmaMin, kLogSigmaMax]
  };
  DiagonalHead diagonal_head(const BoundParameters& p, const Var& z) const;

  struct JointHead {
    Var mean;    // (blocks*n x 1)
    Var factor;  // stacked n x n: scale_tril (cholesky) or covariance (lowrank)
    bool is_covariance = false;
  };
  JointHead joint_head(const BoundParameters& p, const Var& z_targets, int blocks, int n,
                       double epsilon = kCholeskyEpsilon, const Dropout& dropout = {}) const;

 private:
  ModelConfig config_;
  ParameterSet params_;
  Mlp embed_;
  std::vector<TransformerLayer> layers_;
  LayerNorm final_norm_;
  Mlp head_;  // A/D: 2*dim_y outputs; ND: mean only
  std::vector<TransformerLayer> cov_layers_;
  Mlp projector_;
  Mlp diag_head_;  // lowrank log-diagonal
};

// Variant D. Per-target (mean, sigma) from the padded-token outputs.
DiagonalPrediction predict_diagonal(const TnpModel& model, const TaskBatch& batch);
// Variant A. Conditional of y_i given context and y_{m+1..i-1} (ground truth).
DiagonalPrediction predict_autoregressive_teacher_forced(const TnpModel& model, const TaskBatch& batch);
// Target indices of task b sorted lexicographically by x (stable). The ND
// covariance factor is built in this order so that permuting the targets
// permutes Sigma accordingly.
std::vector<int> canonical_target_order(const TaskBatch& batch, int b);

// Variant ND. Escalates the Cholesky-head epsilon x10 up to 1e-2 if the
// implied covariance does not factorize; throws NumericError after that.
JointGaussianPrediction predict_joint(const TnpModel& model, const TaskBatch& batch);

// Sum over targets of the teacher-forced conditional log-densities, per task.
Vector autoregressive_log_likelihood(const TnpModel& model, const TaskBatch& batch);

// Draws y for target_x one target at a time, feeding earlier draws back as
// observed pairs. mean_decoding returns the per-step means instead.
Vector sample_targets_autoregressive(const TnpModel& model, const Matrix& context_x, const Matrix& context_y,
                                     const Matrix& target_x, std::uint64_t seed, bool mean_decoding = false);

// log of the average over the given target orders of exp(joint AR
// log-likelihood), per task. Each order is a permutation of 0..n-1.
Vector symmetrized_log_likelihood(const TnpModel& model, const TaskBatch& batch,
                                  const std::vector<std::vector<int>>& orders);
// Same with n_perms uniformly random orders drawn from seed.
Vector symmetrized_log_likelihood(const TnpModel& model, const TaskBatch& batch, int n_perms, std::uint64_t seed);
// Every order of the targets; throws ConfigError("intractable group") if
// there are more than max_targets targets.
Vector symmetrized_log_likelihood_exact(const TnpModel& model, const TaskBatch& batch, int max_targets = 4);

// Objective for the A variant without a context split: each point is
// predicted from the points before it. Mean over points and tasks of -log p.
Var pretraining_loss(const TnpModel& model, const BoundParameters& params, const TaskBatch& batch,
                     const Dropout& dropout = {});

}  // namespace tnp
