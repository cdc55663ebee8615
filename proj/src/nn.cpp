#include "tnp/nn.hpp"

#include "tnp/errors.hpp"

#include <cmath>

namespace tnp {

int ParameterSet::add(std::string name, Matrix init) {
  if (index_.contains(name)) throw std::logic_error("duplicate parameter name: " + name);
  const int id = size();
  index_.emplace(name, id);
  names_.push_back(std::move(name));
  values_.push_back(std::move(init));
  return id;
}

int ParameterSet::index_of(std::string_view name) const {
  const auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
  return it->second;
}

bool ParameterSet::contains(std::string_view name) const { return index_.contains(std::string(name)); }

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const Matrix& m : values_) n += static_cast<std::size_t>(m.size());
  return n;
}

BoundParameters::BoundParameters(Tape& tape, const ParameterSet& params) : tape_(&tape) {
  vars_.reserve(static_cast<std::size_t>(params.size()));
  for (int i = 0; i < params.size(); ++i) vars_.push_back(tape.variable(params[i]));
}

Matrix xavier_uniform(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix w(fan_in, fan_out);
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-a, a);
  return w;
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "identity") return Activation::identity;
  throw ConfigError("unknown activation: " + std::string(name));
}

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "relu";
}

Var activate(const Var& x, Activation a) {
  switch (a) {
    case Activation::relu: return ad::relu(x);
    case Activation::tanh: return ad::tanh(x);
    case Activation::identity: return x;
  }
  return x;
}

Linear Linear::create(ParameterSet& params, const std::string& name, Eigen::Index in, Eigen::Index out,
                      Rng& rng) {
  Linear l;
  l.weight = params.add(name + ".weight", xavier_uniform(in, out, rng));
  l.bias = params.add(name + ".bias", Matrix::Zero(1, out));
  return l;
}

Var Linear::operator()(const BoundParameters& p, const Var& x) const {
  return ad::linear(x, p[weight], p[bias]);
}

LayerNorm LayerNorm::create(ParameterSet& params, const std::string& name, Eigen::Index width) {
  LayerNorm n;
  n.gain = params.add(name + ".gain", Matrix::Ones(1, width));
  n.bias = params.add(name + ".bias", Matrix::Zero(1, width));
  return n;
}

Var LayerNorm::operator()(const BoundParameters& p, const Var& x) const {
  return ad::layer_norm(x, p[gain], p[bias]);
}

std::vector<int> mlp_widths(int in, int hidden, int out, int depth) {
  if (depth < 1) throw ConfigError("mlp depth must be >= 1");
  std::vector<int> w{in};
  for (int i = 0; i < depth - 1; ++i) w.push_back(hidden);
  w.push_back(out);
  return w;
}

Mlp Mlp::create(ParameterSet& params, const std::string& name, const std::vector<int>& widths,
                Activation activation, Rng& rng) {
  if (widths.size() < 2) throw ConfigError("mlp needs at least an input and an output width");
  Mlp m;
  m.activation = activation;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    m.layers.push_back(Linear::create(params, name + "." + std::to_string(i), widths[i], widths[i + 1], rng));
  return m;
}

Var Mlp::operator()(const BoundParameters& p, const Var& x) const {
  Var h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](p, h);
    if (i + 1 < layers.size()) h = activate(h, activation);
  }
  return h;
}

AttentionLayer AttentionLayer::create(ParameterSet& params, const std::string& name, int d_model, int heads,
                                      Rng& rng) {
  if (heads <= 0 || d_model % heads != 0)
    throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by the head count (" +
                      std::to_string(heads) + ")");
  AttentionLayer a;
  a.heads = heads;
  a.d_model = d_model;
  a.query = Linear::create(params, name + ".query", d_model, d_model, rng);
  a.key = Linear::create(params, name + ".key", d_model, d_model, rng);
  a.value = Linear::create(params, name + ".value", d_model, d_model, rng);
  a.output = Linear::create(params, name + ".output", d_model, d_model, rng);
  return a;
}

Var AttentionLayer::operator()(const BoundParameters& p, const Var& tokens, const MaskSpec& mask,
                               int blocks) const {
  if (tokens.cols() != d_model)
    throw DimensionError("attention: token width " + std::to_string(tokens.cols()) + " != d_model " +
                         std::to_string(d_model));
  const Var q = query(p, tokens);
  const Var k = key(p, tokens);
  const Var v = value(p, tokens);
  return output(p, ad::attention(q, k, v, mask, blocks, heads));
}

Var Dropout::operator()(const Var& x) const {
  if (rate <= 0.0 || rng == nullptr) return x;
  Matrix keep(x.rows(), x.cols());
  const double s = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < keep.size(); ++i) keep.data()[i] = rng->bernoulli(rate) ? 0.0 : s;
  return ad::mul_constant(x, keep);
}

TransformerLayer TransformerLayer::create(ParameterSet& params, const std::string& name, int d_model,
                                          int heads, int ff_width, Rng& rng) {
  TransformerLayer l;
  l.attn_norm = LayerNorm::create(params, name + ".attn_norm", d_model);
  l.attn = AttentionLayer::create(params, name + ".attn", d_model, heads, rng);
  l.ff_norm = LayerNorm::create(params, name + ".ff_norm", d_model);
  l.ff = Mlp::create(params, name + ".ff", {d_model, ff_width, d_model}, Activation::relu, rng);
  return l;
}

Var TransformerLayer::operator()(const BoundParameters& p, const Var& x, const MaskSpec& mask, int blocks,
                                 const Dropout& dropout) const {
  Var h = ad::add(x, dropout(attn(p, attn_norm(p, x), mask, blocks)));
  return ad::add(h, dropout(ff(p, ff_norm(p, h))));
}

Matrix mlp_forward(const std::vector<Matrix>& weights, const std::vector<Matrix>& biases,
                   std::string_view activation, const Matrix& input) {
  const Activation act = parse_activation(activation);
  if (weights.empty() || weights.size() != biases.size())
    throw ConfigError("mlp_forward: need one bias per weight matrix");
  Tape tape(false);
  Var h = tape.constant(input);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    h = ad::linear(h, tape.constant(weights[i]), tape.constant(biases[i]));
    if (i + 1 < weights.size()) h = activate(h, act);
  }
  return h.value();
}

Matrix scaled_dot_attention(const ParameterSet& params, const AttentionLayer& layer, const Matrix& tokens,
                            const MaskSpec& mask) {
  Tape tape(false);
  BoundParameters bound(tape, params);
  return layer(bound, tape.constant(tokens), mask, 1).value();
}

}  // namespace tnp
