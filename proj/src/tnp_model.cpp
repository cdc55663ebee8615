#include "tnp/tnp_model.hpp"

#include "tnp/errors.hpp"
#include "tnp/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tnp {

Variant parse_variant(std::string_view name) {
  if (name == "A" || name == "a" || name == "autoregressive") return Variant::autoregressive;
  if (name == "D" || name == "d" || name == "diagonal") return Variant::diagonal;
  if (name == "ND" || name == "nd" || name == "non_diagonal") return Variant::non_diagonal;
  throw ConfigError("unknown TNP variant: " + std::string(name) + " (expected A, D or ND)");
}

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::autoregressive: return "A";
    case Variant::diagonal: return "D";
    case Variant::non_diagonal: return "ND";
  }
  return "D";
}

// ------------------------------------------------------------- ModelConfig

void ModelConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v <= 0) throw ConfigError(std::string("model.") + what + " must be positive");
  };
  positive(dim_x, "dim_x");
  positive(dim_y, "dim_y");
  positive(d_model, "d_model");
  positive(n_layers, "n_layers");
  positive(n_heads, "n_heads");
  positive(ff_width, "ff_width");
  positive(n_embed_layers, "n_embed_layers");
  if (d_model % n_heads != 0) throw ConfigError("model.d_model must be divisible by model.n_heads");
  if (variant == Variant::non_diagonal) {
    positive(nd_extra_attention_layers, "nd_extra_attention_layers");
    positive(nd_projection_dim, "nd_projection_dim");
    positive(nd_projection_layers, "nd_projection_layers");
    positive(lowrank_rank, "lowrank_rank");
    if (dim_y != 1) throw ConfigError("the ND variant supports dim_y = 1 only");
  }
  if (variant == Variant::autoregressive && dim_y != 1)
    throw ConfigError("the A variant supports dim_y = 1 only");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must lie in [0, 1)");
}

ModelConfig ModelConfig::full_scale(Variant v) {
  ModelConfig c;
  c.variant = v;
  return c;
}

ModelConfig ModelConfig::desk_scale(Variant v) {
  ModelConfig c;
  c.variant = v;
  c.d_model = 32;
  c.n_layers = 4;
  c.n_heads = 2;
  c.ff_width = 64;
  return c;
}

ModelConfig ModelConfig::from_values(const KeyValues& kv) {
  ModelConfig c = desk_scale(parse_variant(kv.get_string("model.variant", "D")));
  const std::string profile = kv.get_string("model.profile", "desk");
  if (profile == "full") {
    c = full_scale(c.variant);
  } else if (profile != "desk") {
    throw ConfigError("model.profile must be desk or full");
  }
  c.dim_x = static_cast<int>(kv.get_int("model.dim_x", c.dim_x));
  c.dim_y = static_cast<int>(kv.get_int("model.dim_y", c.dim_y));
  c.d_model = static_cast<int>(kv.get_int("model.d_model", c.d_model));
  c.n_layers = static_cast<int>(kv.get_int("model.n_layers", c.n_layers));
  c.n_heads = static_cast<int>(kv.get_int("model.n_heads", c.n_heads));
  c.ff_width = static_cast<int>(kv.get_int("model.ff_width", c.ff_width));
  c.n_embed_layers = static_cast<int>(kv.get_int("model.n_embed_layers", c.n_embed_layers));
  c.nd_extra_attention_layers = static_cast<int>(kv.get_int("model.nd_extra_attention_layers", c.nd_extra_attention_layers));
  c.nd_projection_dim = static_cast<int>(kv.get_int("model.nd_projection_dim", c.nd_projection_dim));
  c.nd_projection_layers = static_cast<int>(kv.get_int("model.nd_projection_layers", c.nd_projection_layers));
  const std::string cov = kv.get_string("model.nd_covariance", "cholesky");
  if (cov == "cholesky") {
    c.nd_covariance = CovarianceMode::cholesky;
  } else if (cov == "lowrank") {
    c.nd_covariance = CovarianceMode::lowrank;
  } else {
    throw ConfigError("model.nd_covariance must be cholesky or lowrank");
  }
  c.lowrank_rank = static_cast<int>(kv.get_int("model.lowrank_rank", c.lowrank_rank));
  c.dropout = kv.get_double("model.dropout", c.dropout);
  c.validate();
  return c;
}

KeyValues ModelConfig::to_values() const {
  KeyValues kv;
  kv.set("model.kind", "tnp");
  kv.set("model.variant", std::string(variant_name(variant)));
  kv.set("model.dim_x", std::to_string(dim_x));
  kv.set("model.dim_y", std::to_string(dim_y));
  kv.set("model.d_model", std::to_string(d_model));
  kv.set("model.n_layers", std::to_string(n_layers));
  kv.set("model.n_heads", std::to_string(n_heads));
  kv.set("model.ff_width", std::to_string(ff_width));
  kv.set("model.n_embed_layers", std::to_string(n_embed_layers));
  kv.set("model.nd_extra_attention_layers", std::to_string(nd_extra_attention_layers));
  kv.set("model.nd_projection_dim", std::to_string(nd_projection_dim));
  kv.set("model.nd_projection_layers", std::to_string(nd_projection_layers));
  kv.set("model.nd_covariance", nd_covariance == CovarianceMode::cholesky ? "cholesky" : "lowrank");
  kv.set("model.lowrank_rank", std::to_string(lowrank_rank));
  kv.set("model.dropout", format_double(dropout));
  return kv;
}

// ---------------------------------------------------------- tokens & masks

std::vector<int> TokenSequence::padded_rows() const {
  std::vector<int> rows;
  rows.reserve(static_cast<std::size_t>(batch) * padded_positions.size());
  for (int b = 0; b < batch; ++b)
    for (const int p : padded_positions) rows.push_back(b * length + p);
  return rows;
}

TokenSequence embed_sequence(const TaskBatch& batch, Variant variant, bool allow_empty_context) {
  batch.validate(allow_empty_context);
  const int m = batch.num_context, n = batch.num_targets();
  const int dx = batch.dim_x, dy = batch.dim_y;

  TokenSequence seq;
  seq.batch = batch.batch;
  seq.roles.assign(static_cast<std::size_t>(m), TokenRole::context);
  std::vector<int> source;  // point index per position
  for (int i = 0; i < m; ++i) source.push_back(i);
  if (variant == Variant::autoregressive) {
    for (int k = 0; k < n; ++k) {
      seq.roles.push_back(TokenRole::target_real);
      source.push_back(m + k);
    }
  }
  for (int k = 0; k < n; ++k) {
    seq.padded_positions.push_back(static_cast<int>(seq.roles.size()));
    seq.roles.push_back(TokenRole::target_padded);
    source.push_back(m + k);
  }
  seq.length = static_cast<int>(seq.roles.size());
  seq.tokens = Matrix::Zero(static_cast<Eigen::Index>(batch.batch) * seq.length, dx + 2 * dy);

  const bool has_mask = batch.observed.size() != 0;
  for (int b = 0; b < batch.batch; ++b) {
    for (int pos = 0; pos < seq.length; ++pos) {
      const Eigen::Index r = static_cast<Eigen::Index>(b) * seq.length + pos;
      const int src = batch.row(b, source[static_cast<std::size_t>(pos)]);
      seq.tokens.row(r).head(dx) = batch.x.row(src);
      const TokenRole role = seq.roles[static_cast<std::size_t>(pos)];
      if (role == TokenRole::target_padded) continue;
      for (int j = 0; j < dy; ++j) {
        const double obs = (has_mask && role == TokenRole::context) ? batch.observed(src, j) : 1.0;
        seq.tokens(r, dx + j) = obs != 0.0 ? batch.y(src, j) : 0.0;
        seq.tokens(r, dx + dy + j) = obs != 0.0 ? 1.0 : 0.0;
      }
    }
  }
  return seq;
}

MaskSpec build_mask(int num_points, int num_context, Variant variant) {
  if (num_context < 0 || num_context >= num_points)
    throw DimensionError("build_mask: need 0 <= m < N (got m=" + std::to_string(num_context) +
                         ", N=" + std::to_string(num_points) + ")");
  const int m = num_context, n = num_points - num_context;
  if (variant == Variant::autoregressive) {
    const int len = 2 * num_points - m;
    BoolMatrix allow = BoolMatrix::Constant(len, len, false);
    allow.topLeftCorner(m, m).setConstant(true);
    for (int k = 0; k < n; ++k) {
      const int real = m + k, padded = m + n + k;
      allow.row(real).head(m).setConstant(true);
      allow.row(padded).head(m).setConstant(true);
      for (int j = 0; j <= k; ++j) allow(real, m + j) = true;
      for (int j = 0; j < k; ++j) allow(padded, m + j) = true;
    }
    if (m == 0) allow(n, n) = true;
    return MaskSpec{std::move(allow)};
  }
  BoolMatrix allow = BoolMatrix::Constant(num_points, num_points, false);
  allow.leftCols(m).setConstant(true);
  allow.topLeftCorner(m, m).setConstant(true);
  for (int k = 0; k < n; ++k) allow(m + k, m + k) = true;
  return MaskSpec{std::move(allow)};
}

// ---------------------------------------------------------------- TnpModel

TnpModel::TnpModel(ModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed, 0x746e70);
  const int d = config_.d_model;
  embed_ = Mlp::create(params_, "embed", mlp_widths(config_.token_width(), d, d, config_.n_embed_layers),
                       Activation::relu, rng);
  for (int i = 0; i < config_.n_layers; ++i)
    layers_.push_back(TransformerLayer::create(params_, "layer" + std::to_string(i), d, config_.n_heads,
                                               config_.ff_width, rng));
  final_norm_ = LayerNorm::create(params_, "final_norm", d);
  const bool joint = config_.variant == Variant::non_diagonal;
  head_ = Mlp::create(params_, "head", {d, config_.ff_width, joint ? config_.dim_y : 2 * config_.dim_y},
                      Activation::relu, rng);
  if (joint) {
    for (int i = 0; i < config_.nd_extra_attention_layers; ++i)
      cov_layers_.push_back(TransformerLayer::create(params_, "cov_layer" + std::to_string(i), d, config_.n_heads,
                                                     config_.ff_width, rng));
    const int p = config_.nd_covariance == CovarianceMode::cholesky ? config_.nd_projection_dim : config_.lowrank_rank;
    projector_ = Mlp::create(params_, "projector", mlp_widths(d, config_.ff_width, p, config_.nd_projection_layers),
                             Activation::relu, rng);
    if (config_.nd_covariance == CovarianceMode::lowrank)
      diag_head_ = Mlp::create(params_, "log_diag", {d, config_.ff_width, 1}, Activation::relu, rng);
  }
}

Var TnpModel::encode(const BoundParameters& p, const TokenSequence& seq, const MaskSpec& mask,
                     const Dropout& dropout) const {
  if (seq.tokens.cols() != config_.token_width())
    throw DimensionError("token width " + std::to_string(seq.tokens.cols()) + " does not match the model (" +
                         std::to_string(config_.token_width()) + ")");
  if (mask.rows() != seq.length) throw DimensionError("mask size does not match the sequence length");
  Var h = embed_(p, p.tape().constant(seq.tokens));
  for (const auto& layer : layers_) h = layer(p, h, mask, seq.batch, dropout);
  return final_norm_(p, h);
}

TnpModel::DiagonalHead TnpModel::diagonal_head(const BoundParameters& p, const Var& z) const {
  if (config_.variant == Variant::non_diagonal) throw ConfigError("the ND variant has no diagonal head");
  const Var out = head_(p, z);
  const int dy = config_.dim_y;
  return {ad::slice_cols(out, 0, dy), ad::clamp(ad::slice_cols(out, dy, dy), kLogSigmaMin, kLogSigmaMax)};
}

TnpModel::JointHead TnpModel::joint_head(const BoundParameters& p, const Var& z_targets, int blocks, int n,
                                         double epsilon, const Dropout& dropout) const {
  if (config_.variant != Variant::non_diagonal) throw ConfigError("only the ND variant has a joint head");
  JointHead out;
  out.mean = head_(p, z_targets);
  Var h = z_targets;
  const MaskSpec full = MaskSpec::full(n, n);
  for (const auto& layer : cov_layers_) h = layer(p, h, full, blocks, dropout);
  const Var gram = ad::block_gram(projector_(p, h), n);
  if (config_.nd_covariance == CovarianceMode::cholesky) {
    out.factor = ad::block_lower(gram, n, epsilon);
  } else {
    out.factor = ad::block_add_exp_diag(gram, diag_head_(p, h));
    out.is_covariance = true;
  }
  return out;
}

namespace {

// Weight per regressed label entry so that each task's entries average to
// 1/batch. Rows follow `rows` (task-major positions in the token sequence).
Matrix entry_weights(const TaskBatch& batch, const TokenSequence& seq, const std::vector<int>& rows,
                     const std::vector<int>& point_of_row, Matrix* targets) {
  const int dy = batch.dim_y;
  Matrix w = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), dy);
  targets->resize(static_cast<Eigen::Index>(rows.size()), dy);
  std::vector<double> counts(static_cast<std::size_t>(batch.batch), 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int b = rows[i] / seq.length;
    const int point = point_of_row[i];
    const int src = batch.row(b, point);
    targets->row(static_cast<Eigen::Index>(i)) = batch.y.row(src);
    for (int j = 0; j < dy; ++j) {
      const bool is_target = point >= batch.num_context;
      const bool hidden = !is_target && batch.observed.size() != 0 && batch.observed(src, j) == 0.0;
      if (is_target || hidden) {
        w(static_cast<Eigen::Index>(i), j) = 1.0;
        counts[static_cast<std::size_t>(b)] += 1.0;
      }
    }
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto b = static_cast<std::size_t>(rows[i] / seq.length);
    if (counts[b] > 0.0) w.row(static_cast<Eigen::Index>(i)) /= counts[b] * static_cast<double>(batch.batch);
  }
  return w;
}

bool has_hidden_context(const TaskBatch& batch) {
  if (batch.observed.size() == 0 || batch.num_context == 0) return false;
  for (int b = 0; b < batch.batch; ++b)
    if ((batch.observed.middleRows(batch.row(b, 0), batch.num_context).array() == 0.0).any()) return true;
  return false;
}

}  // namespace

Var TnpModel::loss(const BoundParameters& p, const TaskBatch& batch, const Dropout& dropout) const {
  const Variant v = config_.variant;
  const TokenSequence seq = embed_sequence(batch, v, v == Variant::autoregressive);
  const MaskSpec mask = build_mask(batch.num_points, batch.num_context, v);
  const Var z = encode(p, seq, mask, dropout);
  const int n = batch.num_targets();

  if (v == Variant::non_diagonal) {
    std::vector<int> rows;
    Vector y(static_cast<Eigen::Index>(batch.batch) * n);
    for (int b = 0; b < batch.batch; ++b) {
      const std::vector<int> order = canonical_target_order(batch, b);
      for (int k = 0; k < n; ++k) {
        const int t = order[static_cast<std::size_t>(k)];
        rows.push_back(b * seq.length + seq.padded_positions[static_cast<std::size_t>(t)]);
        y(static_cast<Eigen::Index>(b) * n + k) = batch.y(batch.row(b, batch.num_context + t), 0);
      }
    }
    const JointHead head = joint_head(p, ad::gather_rows(z, rows), batch.batch, n, kCholeskyEpsilon, dropout);
    const Vector w = Vector::Constant(batch.batch, 1.0 / (static_cast<double>(n) * batch.batch));
    const Var lp = head.is_covariance ? ad::mvn_dense_log_density(head.mean, head.factor, y, w)
                                      : ad::mvn_tril_log_density(head.mean, head.factor, y, w);
    return ad::scale(lp, -1.0);
  }

  // Rows whose head outputs are scored: padded targets, plus context rows
  // when some of their labels are hidden (variant D only).
  std::vector<int> rows, points;
  const bool score_context = v == Variant::diagonal && has_hidden_context(batch);
  for (int b = 0; b < batch.batch; ++b) {
    if (score_context)
      for (int i = 0; i < batch.num_context; ++i) {
        rows.push_back(b * seq.length + i);
        points.push_back(i);
      }
    for (int k = 0; k < n; ++k) {
      rows.push_back(b * seq.length + seq.padded_positions[static_cast<std::size_t>(k)]);
      points.push_back(batch.num_context + k);
    }
  }
  Matrix targets;
  const Matrix w = entry_weights(batch, seq, rows, points, &targets);
  const DiagonalHead head = diagonal_head(p, ad::gather_rows(z, rows));
  return ad::scale(ad::gaussian_log_density(head.mean, head.log_sigma, targets, w), -1.0);
}

namespace {

DiagonalPrediction diagonal_from_rows(const TnpModel& model, const TaskBatch& batch, Variant expected,
                                      bool allow_empty_context) {
  if (model.config().variant != expected)
    throw ConfigError("model variant " + std::string(variant_name(model.config().variant)) +
                      " cannot produce this prediction");
  Tape tape(false);
  BoundParameters p(tape, model.parameters());
  const TokenSequence seq = embed_sequence(batch, expected, allow_empty_context);
  const Var z = model.encode(p, seq, build_mask(batch.num_points, batch.num_context, expected));
  const auto head = model.diagonal_head(p, ad::gather_rows(z, seq.padded_rows()));
  DiagonalPrediction out;
  out.batch = batch.batch;
  out.targets = batch.num_targets();
  out.mean = head.mean.value();
  out.sigma = head.log_sigma.value().array().exp();
  return out;
}

}  // namespace

DiagonalPrediction predict_diagonal(const TnpModel& model, const TaskBatch& batch) {
  return diagonal_from_rows(model, batch, Variant::diagonal, true);
}

DiagonalPrediction predict_autoregressive_teacher_forced(const TnpModel& model, const TaskBatch& batch) {
  return diagonal_from_rows(model, batch, Variant::autoregressive, true);
}

std::vector<int> canonical_target_order(const TaskBatch& batch, int b) {
  std::vector<int> order(static_cast<std::size_t>(batch.num_targets()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) {
    const auto xi = batch.x.row(batch.row(b, batch.num_context + i));
    const auto xj = batch.x.row(batch.row(b, batch.num_context + j));
    return std::lexicographical_compare(xi.begin(), xi.end(), xj.begin(), xj.end());
  });
  return order;
}

JointGaussianPrediction predict_joint(const TnpModel& model, const TaskBatch& batch) {
  if (model.config().variant != Variant::non_diagonal)
    throw ConfigError("predict_joint needs the ND variant");
  Tape tape(false);
  BoundParameters p(tape, model.parameters());
  const TokenSequence seq = embed_sequence(batch, Variant::non_diagonal, true);
  const Var z = model.encode(p, seq, build_mask(batch.num_points, batch.num_context, Variant::non_diagonal));
  const int n = batch.num_targets();
  std::vector<std::vector<int>> orders;
  std::vector<int> rows;
  for (int b = 0; b < batch.batch; ++b) {
    orders.push_back(canonical_target_order(batch, b));
    for (const int t : orders.back()) rows.push_back(b * seq.length + seq.padded_positions[static_cast<std::size_t>(t)]);
  }
  const Var zt = ad::gather_rows(z, rows);

  for (double eps = kCholeskyEpsilon; eps <= kCholeskyEpsilonMax * (1.0 + 1e-9); eps *= 10.0) {
    const auto head = model.joint_head(p, zt, batch.batch, n, eps);
    JointGaussianPrediction out;
    out.order = orders;
    bool ok = true;
    for (int b = 0; b < batch.batch && ok; ++b) {
      const auto& order = orders[static_cast<std::size_t>(b)];
      Vector mean(n);
      for (int k = 0; k < n; ++k)
        mean(order[static_cast<std::size_t>(k)]) = head.mean.value()(static_cast<Eigen::Index>(b) * n + k, 0);
      out.mean.push_back(std::move(mean));
      const Matrix block = head.factor.value().middleRows(static_cast<Eigen::Index>(b) * n, n);
      if (head.is_covariance) {
        // Dense path has its own jitter escalation.
        out.scale_tril.push_back(cholesky_with_jitter(block, 0.0, kCholeskyEpsilonMax).lower);
        continue;
      }
      const Matrix sigma = block * block.transpose();
      Eigen::LLT<Matrix> check(sigma);
      ok = block.allFinite() && (block.diagonal().array() > 0.0).all() && check.info() == Eigen::Success;
      out.scale_tril.push_back(block);
    }
    if (ok) return out;
  }
  throw NumericError("covariance factorization failed");
}

Matrix JointGaussianPrediction::covariance(std::size_t b) const {
  const Matrix canonical = scale_tril[b] * scale_tril[b].transpose();
  const auto& o = order[b];
  const auto n = static_cast<Eigen::Index>(o.size());
  Matrix out(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) out(o[static_cast<std::size_t>(i)], o[static_cast<std::size_t>(j)]) = canonical(i, j);
  return out;
}

double JointGaussianPrediction::log_likelihood(std::size_t b, const Vector& y) const {
  const auto& o = order[b];
  if (y.size() != static_cast<Eigen::Index>(o.size())) throw DimensionError("joint log-likelihood: length mismatch");
  Vector yc(y.size()), mc(y.size());
  for (std::size_t k = 0; k < o.size(); ++k) {
    yc(static_cast<Eigen::Index>(k)) = y(o[k]);
    mc(static_cast<Eigen::Index>(k)) = mean[b](o[k]);
  }
  return log_likelihood_joint(mc, scale_tril[b], yc);
}

DiagonalPrediction TnpModel::predict_marginals(const TaskBatch& batch) const {
  switch (config_.variant) {
    case Variant::diagonal: return predict_diagonal(*this, batch);
    case Variant::autoregressive: return predict_autoregressive_teacher_forced(*this, batch);
    case Variant::non_diagonal: {
      const JointGaussianPrediction joint = predict_joint(*this, batch);
      DiagonalPrediction out;
      out.batch = batch.batch;
      out.targets = batch.num_targets();
      const int n = out.targets;
      out.mean.resize(static_cast<Eigen::Index>(batch.batch) * n, 1);
      out.sigma.resize(out.mean.rows(), 1);
      for (int b = 0; b < batch.batch; ++b) {
        const auto bi = static_cast<std::size_t>(b);
        out.mean.col(0).segment(static_cast<Eigen::Index>(b) * n, n) = joint.mean[bi];
        const Vector sd = joint.scale_tril[bi].rowwise().norm();
        for (int k = 0; k < n; ++k)
          out.sigma(static_cast<Eigen::Index>(b) * n + joint.order[bi][static_cast<std::size_t>(k)], 0) = sd(k);
      }
      return out;
    }
  }
  throw ConfigError("unknown variant");
}

Vector autoregressive_log_likelihood(const TnpModel& model, const TaskBatch& batch) {
  const DiagonalPrediction pred = predict_autoregressive_teacher_forced(model, batch);
  Vector out(batch.batch);
  const int n = batch.num_targets();
  for (int b = 0; b < batch.batch; ++b)
    out(b) = static_cast<double>(n) * log_likelihood_diag(pred.task_mean(b), pred.task_sigma(b), batch.target_y(b));
  return out;
}

Vector sample_targets_autoregressive(const TnpModel& model, const Matrix& context_x, const Matrix& context_y,
                                     const Matrix& target_x, std::uint64_t seed, bool mean_decoding) {
  if (model.config().variant != Variant::autoregressive)
    throw ConfigError("autoregressive sampling needs the A variant");
  Rng rng(seed, 0x73616d70);
  const auto n = target_x.rows();
  Vector sampled = Vector::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Matrix ty = Matrix::Zero(i + 1, 1);
    ty.col(0).head(i) = sampled.head(i);
    const TaskBatch step = make_task(context_x, context_y, target_x.topRows(i + 1), ty);
    const DiagonalPrediction pred = predict_autoregressive_teacher_forced(model, step);
    const double mu = pred.mean(i, 0), sigma = pred.sigma(i, 0);
    sampled(i) = mean_decoding ? mu : mu + sigma * rng.normal();
  }
  return sampled;
}

namespace {

double log_mean_exp(const std::vector<double>& v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (const double x : v) s += std::exp(x - mx);
  return mx + std::log(s / static_cast<double>(v.size()));
}

}  // namespace

Vector symmetrized_log_likelihood(const TnpModel& model, const TaskBatch& batch,
                                  const std::vector<std::vector<int>>& orders) {
  if (orders.empty()) throw ConfigError("symmetrization needs at least one target order");
  const int m = batch.num_context, n = batch.num_targets();
  std::vector<std::vector<double>> per_task(static_cast<std::size_t>(batch.batch));
  for (const auto& order : orders) {
    if (static_cast<int>(order.size()) != n) throw DimensionError("target order has the wrong length");
    std::vector<int> full(static_cast<std::size_t>(batch.num_points));
    std::iota(full.begin(), full.begin() + m, 0);
    for (int k = 0; k < n; ++k) full[static_cast<std::size_t>(m + k)] = m + order[static_cast<std::size_t>(k)];
    const Vector ll = autoregressive_log_likelihood(model, batch.reordered(full));
    for (int b = 0; b < batch.batch; ++b) per_task[static_cast<std::size_t>(b)].push_back(ll(b));
  }
  Vector out(batch.batch);
  for (int b = 0; b < batch.batch; ++b) out(b) = log_mean_exp(per_task[static_cast<std::size_t>(b)]);
  return out;
}

Vector symmetrized_log_likelihood(const TnpModel& model, const TaskBatch& batch, int n_perms, std::uint64_t seed) {
  if (n_perms < 1) throw ConfigError("n_perms must be >= 1");
  Rng rng(seed, 0x73796d);
  std::vector<std::vector<int>> orders;
  for (int i = 0; i < n_perms; ++i) orders.push_back(rng.permutation(batch.num_targets()));
  return symmetrized_log_likelihood(model, batch, orders);
}

Vector symmetrized_log_likelihood_exact(const TnpModel& model, const TaskBatch& batch, int max_targets) {
  const int n = batch.num_targets();
  if (n > max_targets) throw ConfigError("intractable group");
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::vector<int>> orders;
  do {
    orders.push_back(order);
  } while (std::next_permutation(order.begin(), order.end()));
  return symmetrized_log_likelihood(model, batch, orders);
}

Var pretraining_loss(const TnpModel& model, const BoundParameters& params, const TaskBatch& batch,
                     const Dropout& dropout) {
  if (model.config().variant != Variant::autoregressive) throw ConfigError("pretraining needs the A variant");
  TaskBatch all_targets = batch;
  all_targets.num_context = 0;
  all_targets.observed.resize(0, 0);
  return model.loss(params, all_targets, dropout);
}

// ------------------------------------------------------------- densities

double log_likelihood_diag(const Vector& mean, const Vector& sigma, const Vector& y) {
  if (mean.size() != sigma.size() || mean.size() != y.size() || mean.size() == 0)
    throw DimensionError("log_likelihood_diag: length mismatch");
  if (!(sigma.array() > 0.0).all()) throw NumericError("log_likelihood_diag: sigma must be positive");
  const Eigen::ArrayXd z = (y - mean).array() / sigma.array();
  return (-sigma.array().log() - kHalfLog2Pi - 0.5 * z.square()).mean();
}

double log_likelihood_joint(const Vector& mean, const Matrix& scale_tril, const Vector& y) {
  if (mean.size() == 0) throw DimensionError("log_likelihood_joint: no targets");
  return mvn_log_density_tril(mean, scale_tril, y) / static_cast<double>(mean.size());
}

}  // namespace tnp
