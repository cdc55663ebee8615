#include "tnp/autodiff.hpp"

#include "tnp/errors.hpp"
#include "tnp/linalg.hpp"

#include <cmath>
#include <limits>

namespace tnp {

// ---------------------------------------------------------------- Var / Tape

const Matrix& Var::value() const { return tape_->value(*this); }

double Var::item() const {
  const Matrix& v = value();
  if (v.size() != 1) throw DimensionError("item() on a non-scalar value");
  return v(0, 0);
}

std::size_t Tape::idx(const Var& v) const {
  if (v.tape_ != this || v.id_ < 0 || static_cast<std::size_t>(v.id_) >= nodes_.size())
    throw std::logic_error("Var does not belong to this tape");
  return static_cast<std::size_t>(v.id_);
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, grad_enabled_, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, Backward backward) {
  bool needs = false;
  if (grad_enabled_) {
    for (const Var& p : parents) needs = needs || nodes_[idx(p)].requires_grad;
  }
  Node node{std::move(value), {}, false, needs, {}};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix& Tape::grad_slot(const Var& v) {
  Node& n = nodes_[idx(v)];
  if (!n.has_grad) {
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(const Var& v, const Matrix& g) {
  if (!nodes_[idx(v)].requires_grad) return;
  Matrix& slot = grad_slot(v);
  if (slot.rows() != g.rows() || slot.cols() != g.cols())
    throw DimensionError("gradient shape mismatch");
  slot += g;
}

void Tape::accumulate_block(const Var& v, Eigen::Index row, Eigen::Index col, const Matrix& g) {
  if (!nodes_[idx(v)].requires_grad) return;
  grad_slot(v).block(row, col, g.rows(), g.cols()) += g;
}

void Tape::backward(const Var& loss) {
  const std::size_t root = idx(loss);
  if (nodes_[root].value.size() != 1) throw DimensionError("backward: loss is not a scalar");
  if (!nodes_[root].requires_grad) return;
  grad_slot(loss)(0, 0) += 1.0;
  // Creation order is a topological order; each node is visited once.
  for (std::size_t i = root + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    const Matrix g = n.grad;
    n.backward(*this, g);
  }
}

Matrix Tape::grad(const Var& v) const {
  const Node& n = nodes_[idx(v)];
  if (!n.has_grad) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

// ------------------------------------------------------------------ masking

MaskSpec MaskSpec::full(Eigen::Index rows, Eigen::Index cols) {
  return MaskSpec{BoolMatrix::Constant(rows, cols, true)};
}

namespace {

void softmax_rows_inplace(Matrix& s, const BoolMatrix& mask) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    double row_max = kNegInf;
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      if (!mask(i, j)) {
        s(i, j) = kNegInf;
      } else if (s(i, j) > row_max) {
        row_max = s(i, j);
      }
    }
    if (row_max == kNegInf) throw NumericError("empty attention row");
    double total = 0.0;
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      const double e = std::exp(s(i, j) - row_max);
      s(i, j) = e;
      total += e;
    }
    s.row(i) /= total;
  }
}

}  // namespace

Matrix masked_softmax(const Matrix& logits, const BoolMatrix& mask) {
  if (logits.rows() != mask.rows() || logits.cols() != mask.cols())
    throw DimensionError("masked_softmax: mask shape differs from logits");
  Matrix s = logits;
  softmax_rows_inplace(s, mask);
  return s;
}

// ---------------------------------------------------------------------- ops

namespace ad {

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
}

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw std::logic_error("operation on an unbound Var");
  return *a.tape();
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return tape_of(a).record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return tape_of(a).record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Matrix out = a.value().cwiseProduct(b.value());
  return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var scale(const Var& a, double s) {
  return tape_of(a).record(a.value() * s, {a},
                           [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
}

Var add_scalar(const Var& a, double s) {
  Matrix out = a.value().array() + s;
  return tape_of(a).record(std::move(out), {a},
                           [a](Tape& t, const Matrix& g) { t.accumulate(a, g); });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions differ");
  Matrix out = a.value() * b.value();
  return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.requires_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

Var transpose(const Var& a) {
  Matrix out = a.value().transpose();
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.transpose());
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  if (x.cols() != w.rows()) throw DimensionError("linear: input width does not match weight rows");
  if (b.rows() != 1 || b.cols() != w.cols()) throw DimensionError("linear: bias shape mismatch");
  Matrix out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return tape_of(x).record(std::move(out), {x, w, b}, [x, w, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(x)) t.accumulate(x, g * w.value().transpose());
    if (t.requires_grad(w)) t.accumulate(w, x.value().transpose() * g);
    if (t.requires_grad(b)) t.accumulate(b, g.colwise().sum());
  });
}

Var relu(const Var& a) {
  Matrix out = a.value().cwiseMax(0.0);
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, (a.value().array() > 0.0).select(g, 0.0));
  });
}

Var tanh(const Var& a) {
  Matrix out = a.value().array().tanh();
  auto saved = std::make_shared<Matrix>(out);
  return tape_of(a).record(std::move(out), {a}, [a, saved](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(Matrix(1.0 - saved->array().square())));
  });
}

Var exp(const Var& a) {
  Matrix out = a.value().array().exp();
  auto saved = std::make_shared<Matrix>(out);
  return tape_of(a).record(std::move(out), {a}, [a, saved](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(*saved));
  });
}

Var log(const Var& a) {
  if ((a.value().array() <= 0.0).any()) throw NumericError("log of a non-positive value");
  Matrix out = a.value().array().log();
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseQuotient(a.value()));
  });
}

Var softplus(const Var& a) {
  Matrix out = a.value().unaryExpr([](double v) {
    return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  });
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    Matrix sig = a.value().unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    t.accumulate(a, g.cwiseProduct(sig));
  });
}

Var square(const Var& a) {
  Matrix out = a.value().array().square();
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, 2.0 * g.cwiseProduct(a.value()));
  });
}

Var clamp(const Var& a, double lo, double hi) {
  Matrix out = a.value().cwiseMax(lo).cwiseMin(hi);
  return tape_of(a).record(std::move(out), {a}, [a, lo, hi](Tape& t, const Matrix& g) {
    const auto& v = a.value().array();
    t.accumulate(a, (v > lo && v < hi).select(g, 0.0));
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const Eigen::Index d = x.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d)
    throw DimensionError("layer_norm: gain/bias shape mismatch");
  auto normalized = std::make_shared<Matrix>(x.rows(), d);
  auto inv_std = std::make_shared<Vector>(x.rows());
  Matrix out(x.rows(), d);
  const Matrix& xv = x.value();
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    const double mu = xv.row(i).mean();
    const double var = (xv.row(i).array() - mu).square().mean();
    const double s = 1.0 / std::sqrt(var + eps);
    (*inv_std)(i) = s;
    normalized->row(i) = (xv.row(i).array() - mu) * s;
    out.row(i) = normalized->row(i).cwiseProduct(gain.value().row(0)) + bias.value().row(0);
  }
  return tape_of(x).record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, normalized, inv_std, d](Tape& t, const Matrix& g) {
        if (t.requires_grad(gain)) t.accumulate(gain, g.cwiseProduct(*normalized).colwise().sum());
        if (t.requires_grad(bias)) t.accumulate(bias, g.colwise().sum());
        if (!t.requires_grad(x)) return;
        Matrix dx(g.rows(), d);
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
          const Eigen::RowVectorXd dn = g.row(i).cwiseProduct(gain.value().row(0));
          const double mean_dn = dn.mean();
          const double mean_dn_n = dn.cwiseProduct(normalized->row(i)).mean();
          dx.row(i) = (*inv_std)(i) *
                      (dn.array() - mean_dn - normalized->row(i).array() * mean_dn_n).matrix();
        }
        t.accumulate(x, dx);
      });
}

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const auto r = a.rows(), c = a.cols();
  return tape_of(a).record(std::move(out), {a}, [a, r, c](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(r, c, g(0, 0)));
  });
}

Var mean(const Var& a) {
  const auto n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var mul_constant(const Var& a, const Matrix& c) {
  if (a.rows() != c.rows() || a.cols() != c.cols()) throw DimensionError("mul_constant: shape mismatch");
  auto saved = std::make_shared<Matrix>(c);
  return tape_of(a).record(a.value().cwiseProduct(c), {a}, [a, saved](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(*saved));
  });
}

Var gather_rows(const Var& a, std::span<const int> rows) {
  auto index = std::make_shared<std::vector<int>>(rows.begin(), rows.end());
  Matrix out(static_cast<Eigen::Index>(index->size()), a.cols());
  for (std::size_t i = 0; i < index->size(); ++i) {
    const int r = (*index)[i];
    if (r < 0 || r >= a.rows()) throw DimensionError("gather_rows: row index out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(r);
  }
  return tape_of(a).record(std::move(out), {a}, [a, index](Tape& t, const Matrix& g) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < index->size(); ++i)
      ga.row((*index)[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(a, ga);
  });
}

Var slice_cols(const Var& a, Eigen::Index first, Eigen::Index count) {
  if (first < 0 || count < 0 || first + count > a.cols()) throw DimensionError("slice_cols: out of range");
  Matrix out = a.value().middleCols(first, count);
  return tape_of(a).record(std::move(out), {a}, [a, first](Tape& t, const Matrix& g) {
    t.accumulate_block(a, 0, first, g);
  });
}

Var concat_cols(const Var& a, const Var& b) {
  if (a.rows() != b.rows()) throw DimensionError("concat_cols: row counts differ");
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const auto ca = a.cols(), cb = b.cols();
  return tape_of(a).record(std::move(out), {a, b}, [a, b, ca, cb](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g.leftCols(ca));
    if (t.requires_grad(b)) t.accumulate(b, g.rightCols(cb));
  });
}

Var block_mean_rows(const Var& a, Eigen::Index rows_per_block) {
  if (rows_per_block <= 0 || a.rows() % rows_per_block != 0)
    throw DimensionError("block_mean_rows: rows not divisible by block size");
  const Eigen::Index blocks = a.rows() / rows_per_block;
  Matrix out(blocks, a.cols());
  for (Eigen::Index b = 0; b < blocks; ++b) {
    // Sequential accumulation in row order.
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(a.cols());
    for (Eigen::Index r = 0; r < rows_per_block; ++r) acc += a.value().row(b * rows_per_block + r);
    out.row(b) = acc / static_cast<double>(rows_per_block);
  }
  return tape_of(a).record(std::move(out), {a}, [a, rows_per_block, blocks](Tape& t, const Matrix& g) {
    Matrix ga(a.rows(), a.cols());
    for (Eigen::Index b = 0; b < blocks; ++b)
      for (Eigen::Index r = 0; r < rows_per_block; ++r)
        ga.row(b * rows_per_block + r) = g.row(b) / static_cast<double>(rows_per_block);
    t.accumulate(a, ga);
  });
}

Var attention(const Var& q, const Var& k, const Var& v, const MaskSpec& mask, int blocks, int heads) {
  const Eigen::Index d = q.cols();
  if (blocks <= 0 || heads <= 0 || d % heads != 0)
    throw DimensionError("attention: width not divisible by head count");
  if (k.cols() != d || v.cols() != d || k.rows() != v.rows())
    throw DimensionError("attention: query/key/value shapes differ");
  const Eigen::Index tq = mask.rows(), tk = mask.cols();
  if (q.rows() != blocks * tq || k.rows() != blocks * tk)
    throw DimensionError("attention: sequence length does not match mask");
  const Eigen::Index dh = d / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  auto probs = std::make_shared<std::vector<Matrix>>(static_cast<std::size_t>(blocks * heads));
  Matrix out(q.rows(), d);
  for (int b = 0; b < blocks; ++b) {
    for (int h = 0; h < heads; ++h) {
      const auto qb = q.value().block(b * tq, h * dh, tq, dh);
      const auto kb = k.value().block(b * tk, h * dh, tk, dh);
      const auto vb = v.value().block(b * tk, h * dh, tk, dh);
      Matrix s = (qb * kb.transpose()) * inv_scale;
      softmax_rows_inplace(s, mask.allow);
      out.block(b * tq, h * dh, tq, dh).noalias() = s * vb;
      (*probs)[static_cast<std::size_t>(b * heads + h)] = std::move(s);
    }
  }
  return tape_of(q).record(
      std::move(out), {q, k, v},
      [q, k, v, probs, blocks, heads, tq, tk, dh, inv_scale](Tape& t, const Matrix& g) {
        const bool gq = t.requires_grad(q), gk = t.requires_grad(k), gv = t.requires_grad(v);
        Matrix dq = gq ? Matrix::Zero(q.rows(), q.cols()) : Matrix();
        Matrix dk = gk ? Matrix::Zero(k.rows(), k.cols()) : Matrix();
        Matrix dv = gv ? Matrix::Zero(v.rows(), v.cols()) : Matrix();
        for (int b = 0; b < blocks; ++b) {
          for (int h = 0; h < heads; ++h) {
            const Matrix& p = (*probs)[static_cast<std::size_t>(b * heads + h)];
            const auto go = g.block(b * tq, h * dh, tq, dh);
            const auto qb = q.value().block(b * tq, h * dh, tq, dh);
            const auto kb = k.value().block(b * tk, h * dh, tk, dh);
            const auto vb = v.value().block(b * tk, h * dh, tk, dh);
            if (gv) dv.block(b * tk, h * dh, tk, dh).noalias() += p.transpose() * go;
            if (!gq && !gk) continue;
            const Matrix dp = go * vb.transpose();
            const Eigen::VectorXd row_dot = dp.cwiseProduct(p).rowwise().sum();
            Matrix ds = p.cwiseProduct(dp.colwise() - row_dot);
            ds *= inv_scale;
            if (gq) dq.block(b * tq, h * dh, tq, dh).noalias() += ds * kb;
            if (gk) dk.block(b * tk, h * dh, tk, dh).noalias() += ds.transpose() * qb;
          }
        }
        if (gq) t.accumulate(q, dq);
        if (gk) t.accumulate(k, dk);
        if (gv) t.accumulate(v, dv);
      });
}

Var block_gram(const Var& h, Eigen::Index n) {
  if (n <= 0 || h.rows() % n != 0) throw DimensionError("block_gram: rows not divisible by n");
  const Eigen::Index blocks = h.rows() / n;
  Matrix out(h.rows(), n);
  for (Eigen::Index b = 0; b < blocks; ++b) {
    const auto hb = h.value().middleRows(b * n, n);
    out.middleRows(b * n, n).noalias() = hb * hb.transpose();
  }
  return tape_of(h).record(std::move(out), {h}, [h, n, blocks](Tape& t, const Matrix& g) {
    Matrix dh(h.rows(), h.cols());
    for (Eigen::Index b = 0; b < blocks; ++b) {
      const auto gb = g.middleRows(b * n, n);
      dh.middleRows(b * n, n).noalias() = (gb + gb.transpose()) * h.value().middleRows(b * n, n);
    }
    t.accumulate(h, dh);
  });
}

Var block_lower(const Var& g, Eigen::Index n, double eps) {
  if (g.cols() != n || g.rows() % n != 0) throw DimensionError("block_lower: not a stack of n x n blocks");
  Matrix out = g.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const Eigen::Index i = r % n;
    for (Eigen::Index j = i + 1; j < n; ++j) out(r, j) = 0.0;
    out(r, i) += eps;
  }
  return tape_of(g).record(std::move(out), {g}, [g, n](Tape& t, const Matrix& gr) {
    Matrix d = gr;
    for (Eigen::Index r = 0; r < d.rows(); ++r)
      for (Eigen::Index j = r % n + 1; j < n; ++j) d(r, j) = 0.0;
    t.accumulate(g, d);
  });
}

Var block_add_exp_diag(const Var& g, const Var& d) {
  const Eigen::Index n = g.cols();
  if (d.rows() != g.rows() || d.cols() != 1) throw DimensionError("block_add_exp_diag: shape mismatch");
  Matrix out = g.value();
  auto e = std::make_shared<Vector>(d.value().col(0).array().exp());
  for (Eigen::Index r = 0; r < out.rows(); ++r) out(r, r % n) += (*e)(r);
  return tape_of(g).record(std::move(out), {g, d}, [g, d, e, n](Tape& t, const Matrix& gr) {
    if (t.requires_grad(g)) t.accumulate(g, gr);
    if (t.requires_grad(d)) {
      Matrix dd(d.rows(), 1);
      for (Eigen::Index r = 0; r < gr.rows(); ++r) dd(r, 0) = gr(r, r % n) * (*e)(r);
      t.accumulate(d, dd);
    }
  });
}

Var gaussian_log_density(const Var& mean, const Var& log_sigma, const Matrix& y, const Matrix& weight) {
  require_same_shape(mean, log_sigma, "gaussian_log_density");
  if (y.rows() != mean.rows() || y.cols() != mean.cols() || weight.rows() != y.rows() ||
      weight.cols() != y.cols())
    throw DimensionError("gaussian_log_density: target shape mismatch");
  auto z = std::make_shared<Matrix>(
      (y - mean.value()).cwiseQuotient(Matrix(log_sigma.value().array().exp())));
  auto w = std::make_shared<Matrix>(weight);
  double total = 0.0;
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      const double wij = weight(i, j);
      if (wij == 0.0) continue;
      total += wij * (-log_sigma.value()(i, j) - kHalfLog2Pi - 0.5 * (*z)(i, j) * (*z)(i, j));
    }
  Matrix out(1, 1);
  out(0, 0) = total;
  return tape_of(mean).record(std::move(out), {mean, log_sigma},
                              [mean, log_sigma, z, w](Tape& t, const Matrix& g) {
                                const double s = g(0, 0);
                                const Matrix sigma = log_sigma.value().array().exp();
                                if (t.requires_grad(mean))
                                  t.accumulate(mean, s * w->cwiseProduct(z->cwiseQuotient(sigma)));
                                if (t.requires_grad(log_sigma))
                                  t.accumulate(log_sigma,
                                               s * w->cwiseProduct(Matrix(z->array().square() - 1.0)));
                              });
}

Var mvn_tril_log_density(const Var& mean, const Var& scale_tril, const Vector& y, const Vector& weight) {
  const Eigen::Index n = scale_tril.cols();
  if (mean.cols() != 1 || mean.rows() != scale_tril.rows() || y.size() != mean.rows() || n <= 0 ||
      mean.rows() % n != 0)
    throw DimensionError("mvn_tril_log_density: shape mismatch");
  const Eigen::Index blocks = mean.rows() / n;
  if (weight.size() != blocks) throw DimensionError("mvn_tril_log_density: weight per block expected");
  auto z = std::make_shared<std::vector<Vector>>(static_cast<std::size_t>(blocks));
  double total = 0.0;
  for (Eigen::Index b = 0; b < blocks; ++b) {
    const Matrix lb = scale_tril.value().middleRows(b * n, n);
    if (!(lb.diagonal().array() > 0.0).all()) throw NumericError("singular scale factor");
    const Vector r = y.segment(b * n, n) - mean.value().col(0).segment(b * n, n);
    (*z)[static_cast<std::size_t>(b)] = lb.triangularView<Eigen::Lower>().solve(r);
    const double lp = -0.5 * (*z)[static_cast<std::size_t>(b)].squaredNorm() -
                      lb.diagonal().array().log().sum() - static_cast<double>(n) * kHalfLog2Pi;
    total += weight(b) * lp;
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  return tape_of(mean).record(
      std::move(out), {mean, scale_tril}, [mean, scale_tril, z, weight, n, blocks](Tape& t, const Matrix& g) {
        Matrix dmu(mean.rows(), 1);
        Matrix dl = Matrix::Zero(scale_tril.rows(), n);
        for (Eigen::Index b = 0; b < blocks; ++b) {
          const Matrix lb = scale_tril.value().middleRows(b * n, n);
          const Vector& zb = (*z)[static_cast<std::size_t>(b)];
          const Vector wv = lb.transpose().triangularView<Eigen::Upper>().solve(zb);
          const double s = g(0, 0) * weight(b);
          dmu.col(0).segment(b * n, n) = s * wv;
          Matrix gl = wv * zb.transpose();
          gl.diagonal() -= lb.diagonal().cwiseInverse();
          dl.middleRows(b * n, n) = s * Matrix(gl.triangularView<Eigen::Lower>());
        }
        if (t.requires_grad(mean)) t.accumulate(mean, dmu);
        if (t.requires_grad(scale_tril)) t.accumulate(scale_tril, dl);
      });
}

Var mvn_dense_log_density(const Var& mean, const Var& cov, const Vector& y, const Vector& weight) {
  const Eigen::Index n = cov.cols();
  if (mean.cols() != 1 || mean.rows() != cov.rows() || y.size() != mean.rows() || n <= 0 ||
      mean.rows() % n != 0)
    throw DimensionError("mvn_dense_log_density: shape mismatch");
  const Eigen::Index blocks = mean.rows() / n;
  if (weight.size() != blocks) throw DimensionError("mvn_dense_log_density: weight per block expected");
  auto factors = std::make_shared<std::vector<Matrix>>();
  auto alphas = std::make_shared<std::vector<Vector>>();
  double total = 0.0;
  for (Eigen::Index b = 0; b < blocks; ++b) {
    CholeskyResult chol = cholesky_with_jitter(cov.value().middleRows(b * n, n), 0.0, 1e-2);
    const Vector r = y.segment(b * n, n) - mean.value().col(0).segment(b * n, n);
    const Vector zb = chol.lower.triangularView<Eigen::Lower>().solve(r);
    const double lp = -0.5 * zb.squaredNorm() - chol.lower.diagonal().array().log().sum() -
                      static_cast<double>(n) * kHalfLog2Pi;
    total += weight(b) * lp;
    alphas->push_back(chol.lower.transpose().triangularView<Eigen::Upper>().solve(zb));
    factors->push_back(std::move(chol.lower));
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  return tape_of(mean).record(
      std::move(out), {mean, cov}, [mean, cov, factors, alphas, weight, n, blocks](Tape& t, const Matrix& g) {
        Matrix dmu(mean.rows(), 1);
        Matrix dcov(cov.rows(), n);
        for (Eigen::Index b = 0; b < blocks; ++b) {
          const auto bi = static_cast<std::size_t>(b);
          const double s = g(0, 0) * weight(b);
          dmu.col(0).segment(b * n, n) = s * (*alphas)[bi];
          const Matrix& l = (*factors)[bi];
          const Matrix inv = Matrix(l.triangularView<Eigen::Lower>().solve(Matrix::Identity(n, n)))
                                 .transpose()
                                 .eval();
          const Matrix cov_inv = inv * inv.transpose();
          dcov.middleRows(b * n, n) =
              0.5 * s * (Matrix((*alphas)[bi] * (*alphas)[bi].transpose()) - cov_inv);
        }
        if (t.requires_grad(mean)) t.accumulate(mean, dmu);
        if (t.requires_grad(cov)) t.accumulate(cov, dcov);
      });
}

}  // namespace ad
}  // namespace tnp
