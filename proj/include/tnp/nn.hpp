#pragma once

// Parameter storage and the layers the models are assembled from.

#include "tnp/autodiff.hpp"
#include "tnp/rng.hpp"

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tnp {

// Named learnable arrays, in insertion order.
class ParameterSet {
 public:
  int add(std::string name, Matrix init);
  int index_of(std::string_view name) const;
  bool contains(std::string_view name) const;

  Matrix& operator[](int i) { return values_.at(static_cast<std::size_t>(i)); }
  const Matrix& operator[](int i) const { return values_.at(static_cast<std::size_t>(i)); }
  const std::string& name(int i) const { return names_.at(static_cast<std::size_t>(i)); }
  int size() const { return static_cast<int>(values_.size()); }
  std::size_t scalar_count() const;

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
  std::unordered_map<std::string, int> index_;
};

// Parameters copied onto a tape as leaves.
class BoundParameters {
 public:
  BoundParameters(Tape& tape, const ParameterSet& params);
  const Var& operator[](int i) const { return vars_.at(static_cast<std::size_t>(i)); }
  int size() const { return static_cast<int>(vars_.size()); }
  Tape& tape() const { return *tape_; }

 private:
  Tape* tape_;
  std::vector<Var> vars_;
};

// Xavier-uniform weights, zero bias.
Matrix xavier_uniform(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng);

enum class Activation { relu, tanh, identity };
// Throws ConfigError for unknown names.
Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation a);
Var activate(const Var& x, Activation a);

struct Linear {
  int weight = -1;
  int bias = -1;

  static Linear create(ParameterSet& params, const std::string& name, Eigen::Index in,
                       Eigen::Index out, Rng& rng);
  Var operator()(const BoundParameters& p, const Var& x) const;
};

struct LayerNorm {
  int gain = -1;
  int bias = -1;

  static LayerNorm create(ParameterSet& params, const std::string& name, Eigen::Index width);
  Var operator()(const BoundParameters& p, const Var& x) const;
};

// Affine layers with the activation between them; the last layer is affine.
struct Mlp {
  std::vector<Linear> layers;
  Activation activation = Activation::relu;

  // widths = {in, hidden..., out}; needs at least two entries.
  static Mlp create(ParameterSet& params, const std::string& name, const std::vector<int>& widths,
                    Activation activation, Rng& rng);
  Var operator()(const BoundParameters& p, const Var& x) const;
};

// widths {in, hidden, ..., out} with `depth` affine layers in total.
std::vector<int> mlp_widths(int in, int hidden, int out, int depth);

struct AttentionLayer {
  Linear query, key, value, output;
  int heads = 1;
  int d_model = 0;

  static AttentionLayer create(ParameterSet& params, const std::string& name, int d_model, int heads,
                               Rng& rng);
  // tokens: (blocks * T x d_model); mask T x T.
  Var operator()(const BoundParameters& p, const Var& tokens, const MaskSpec& mask, int blocks) const;
};

// Optional dropout applied to sublayer outputs during training.
struct Dropout {
  double rate = 0.0;
  Rng* rng = nullptr;
  Var operator()(const Var& x) const;
};

// Pre-norm block: x + attn(norm(x)), then x + ff(norm(x)).
struct TransformerLayer {
  LayerNorm attn_norm;
  AttentionLayer attn;
  LayerNorm ff_norm;
  Mlp ff;

  static TransformerLayer create(ParameterSet& params, const std::string& name, int d_model, int heads,
                                 int ff_width, Rng& rng);
  Var operator()(const BoundParameters& p, const Var& x, const MaskSpec& mask, int blocks,
                 const Dropout& dropout = {}) const;
};

// Stateless entry points on plain matrices.
Matrix mlp_forward(const std::vector<Matrix>& weights, const std::vector<Matrix>& biases,
                   std::string_view activation, const Matrix& input);
Matrix scaled_dot_attention(const ParameterSet& params, const AttentionLayer& layer, const Matrix& tokens,
                            const MaskSpec& mask);

}  // namespace tnp
