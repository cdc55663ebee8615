#include "tnp/cnp.hpp"

#include "tnp/errors.hpp"

namespace tnp {

void CnpConfig::validate() const {
  if (dim_x <= 0 || dim_y <= 0) throw ConfigError("model.dim_x and model.dim_y must be positive");
  if (width <= 0) throw ConfigError("model.cnp_width must be positive");
  if (encoder_layers < 1 || decoder_layers < 1) throw ConfigError("CNP MLPs need at least one layer");
}

CnpConfig CnpConfig::from_values(const KeyValues& kv) {
  CnpConfig c;
  c.dim_x = static_cast<int>(kv.get_int("model.dim_x", c.dim_x));
  c.dim_y = static_cast<int>(kv.get_int("model.dim_y", c.dim_y));
  c.width = static_cast<int>(kv.get_int("model.cnp_width", c.width));
  c.encoder_layers = static_cast<int>(kv.get_int("model.cnp_encoder_layers", c.encoder_layers));
  c.decoder_layers = static_cast<int>(kv.get_int("model.cnp_decoder_layers", c.decoder_layers));
  c.validate();
  return c;
}

KeyValues CnpConfig::to_values() const {
  KeyValues kv;
  kv.set("model.kind", "cnp");
  kv.set("model.dim_x", std::to_string(dim_x));
  kv.set("model.dim_y", std::to_string(dim_y));
  kv.set("model.cnp_width", std::to_string(width));
  kv.set("model.cnp_encoder_layers", std::to_string(encoder_layers));
  kv.set("model.cnp_decoder_layers", std::to_string(decoder_layers));
  return kv;
}

CnpModel::CnpModel(CnpConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed, 0x636e70);
  const int w = config_.width;
  encoder_ = Mlp::create(params_, "encoder", mlp_widths(config_.dim_x + config_.dim_y, w, w, config_.encoder_layers),
                         Activation::relu, rng);
  decoder_ = Mlp::create(params_, "decoder", mlp_widths(config_.dim_x + w, w, 2 * config_.dim_y, config_.decoder_layers),
                         Activation::relu, rng);
}

CnpModel::Output CnpModel::forward(const BoundParameters& p, const TaskBatch& batch) const {
  batch.validate(false);
  if (batch.dim_x != config_.dim_x || batch.dim_y != config_.dim_y)
    throw DimensionError("batch dimensions do not match the CNP");
  const int m = batch.num_context, n = batch.num_targets();
  std::vector<int> ctx, tgt;
  for (int b = 0; b < batch.batch; ++b) {
    for (int i = 0; i < m; ++i) ctx.push_back(batch.row(b, i));
    for (int k = 0; k < n; ++k) tgt.push_back(batch.row(b, m + k));
  }
  if (batch.observed.size() != 0)
    for (const int r : ctx)
      if ((batch.observed.row(r).array() == 0.0).any()) throw ConfigError("the CNP needs fully observed contexts");

  Tape& tape = p.tape();
  Matrix pairs(static_cast<Eigen::Index>(ctx.size()), config_.dim_x + config_.dim_y);
  Matrix xt(static_cast<Eigen::Index>(tgt.size()), config_.dim_x);
  for (std::size_t i = 0; i < ctx.size(); ++i) {
    pairs.row(static_cast<Eigen::Index>(i)) << batch.x.row(ctx[i]), batch.y.row(ctx[i]);
  }
  for (std::size_t i = 0; i < tgt.size(); ++i) xt.row(static_cast<Eigen::Index>(i)) = batch.x.row(tgt[i]);

  const Var pooled = ad::block_mean_rows(encoder_(p, tape.constant(std::move(pairs))), m);
  std::vector<int> broadcast;
  for (int b = 0; b < batch.batch; ++b)
    for (int k = 0; k < n; ++k) broadcast.push_back(b);
  const Var input = ad::concat_cols(tape.constant(std::move(xt)), ad::gather_rows(pooled, broadcast));
  const Var out = decoder_(p, input);
  const int dy = config_.dim_y;
  return {ad::slice_cols(out, 0, dy), ad::clamp(ad::slice_cols(out, dy, dy), kCnpLogSigmaMin, kCnpLogSigmaMax)};
}

Var CnpModel::loss(const BoundParameters& params, const TaskBatch& batch, const Dropout&) const {
  const Output out = forward(params, batch);
  const int n = batch.num_targets();
  Matrix y(out.mean.rows(), config_.dim_y);
  for (int b = 0; b < batch.batch; ++b)
    y.middleRows(static_cast<Eigen::Index>(b) * n, n) = batch.y.middleRows(batch.row(b, batch.num_context), n);
  const Matrix w = Matrix::Constant(y.rows(), y.cols(), 1.0 / (static_cast<double>(y.size())));
  return ad::scale(ad::gaussian_log_density(out.mean, out.log_sigma, y, w), -1.0);
}

DiagonalPrediction cnp_predict(const CnpModel& model, const TaskBatch& batch) {
  Tape tape(false);
  BoundParameters p(tape, model.parameters());
  const auto out = model.forward(p, batch);
  DiagonalPrediction pred;
  pred.batch = batch.batch;
  pred.targets = batch.num_targets();
  pred.mean = out.mean.value();
  pred.sigma = out.log_sigma.value().array().exp();
  return pred;
}

DiagonalPrediction CnpModel::predict_marginals(const TaskBatch& batch) const { return cnp_predict(*this, batch); }

}  // namespace tnp
