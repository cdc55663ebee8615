#pragma once

// Reverse-mode differentiation over dense matrices.
//
// Every value recorded on a Tape is a 2-D row-major matrix; token sequences
// for a batch of tasks are stacked along rows (task-major). A Tape is used by
// one thread; separate tapes are independent.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tnp {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double item() const;
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  // Receives the gradient of the loss w.r.t. the node's value and pushes
  // contributions to its parents via accumulate().
  using Backward = std::function<void(Tape&, const Matrix&)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);
  Var record(Matrix value, std::initializer_list<Var> parents, Backward backward);

  // Throws if loss is not 1x1. Safe to call once per tape.
  void backward(const Var& loss);

  // Zero matrix of the right shape if nothing flowed into v.
  Matrix grad(const Var& v) const;

  bool requires_grad(const Var& v) const { return nodes_[idx(v)].requires_grad; }
  void accumulate(const Var& v, const Matrix& g);
  void accumulate_block(const Var& v, Eigen::Index row, Eigen::Index col, const Matrix& g);

  const Matrix& value(const Var& v) const { return nodes_[idx(v)].value; }
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool has_grad = false;
    bool requires_grad = false;
    Backward backward;
  };
  std::size_t idx(const Var& v) const;
  Matrix& grad_slot(const Var& v);

  std::vector<Node> nodes_;
  bool grad_enabled_;
};

// Boolean attention-permission matrix: allow(i, j) means row (query) i may
// attend column (key) j.
struct MaskSpec {
  BoolMatrix allow;

  Eigen::Index rows() const { return allow.rows(); }
  Eigen::Index cols() const { return allow.cols(); }
  static MaskSpec full(Eigen::Index rows, Eigen::Index cols);
};

// Row-wise softmax over allowed entries. Denied logits are treated as -inf,
// so their weights are exactly zero. Throws NumericError("empty attention
// row") if a row allows nothing.
Matrix masked_softmax(const Matrix& logits, const BoolMatrix& mask);

namespace ad {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
// x * w + b with b (1 x out) broadcast over rows.
Var linear(const Var& x, const Var& w, const Var& b);
Var relu(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var softplus(const Var& a);
Var square(const Var& a);
// Gradient passes only where lo < a < hi.
Var clamp(const Var& a, double lo, double hi);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
Var sum(const Var& a);
Var mean(const Var& a);
// Multiply by a fixed matrix; used for dropout and selection masks.
Var mul_constant(const Var& a, const Matrix& c);

Var gather_rows(const Var& a, std::span<const int> rows);
Var slice_cols(const Var& a, Eigen::Index first, Eigen::Index count);
Var concat_cols(const Var& a, const Var& b);
// Mean over each consecutive group of rows_per_block rows.
Var block_mean_rows(const Var& a, Eigen::Index rows_per_block);

// Scaled dot-product attention for `blocks` independent sequences stacked
// along rows and `heads` heads split along columns. q is (blocks*Tq x d),
// k and v are (blocks*Tk x d), mask is Tq x Tk. Returns (blocks*Tq x d)
// before the output projection.
Var attention(const Var& q, const Var& k, const Var& v, const MaskSpec& mask, int blocks,
              int heads);

// For each block of n rows of h (n x p): h_b h_b^T. Result (blocks*n x n).
Var block_gram(const Var& h, Eigen::Index n);
// Keep the lower triangle of every n x n block and add eps on its diagonal.
Var block_lower(const Var& g, Eigen::Index n, double eps);
// Add exp(d) on the diagonal of every n x n block; d is (blocks*n x 1).
Var block_add_exp_diag(const Var& g, const Var& d);

// Sum over entries of weight * log N(y | mean, exp(log_sigma)^2). All
// arguments share shape; entries with zero weight do not contribute.
Var gaussian_log_density(const Var& mean, const Var& log_sigma, const Matrix& y,
                         const Matrix& weight);
// Sum over blocks of weight[b] * log N(y_b | mean_b, L_b L_b^T), where L is
// the stacked (blocks*n x n) lower-triangular factor.
Var mvn_tril_log_density(const Var& mean, const Var& scale_tril, const Vector& y,
                         const Vector& weight);
// Same with a dense covariance stack; factorized internally with jitter
// escalation (0, then 1e-6 x10 up to 1e-2).
Var mvn_dense_log_density(const Var& mean, const Var& cov, const Vector& y,
                          const Vector& weight);

}  // namespace ad
}  // namespace tnp
