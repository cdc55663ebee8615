#pragma once

// Conditional neural process: every context pair is encoded independently,
// the encodings are mean-pooled into one vector, and each target x is decoded
// from (x, pooled vector) alone.

#include "tnp/model.hpp"

#include <cstdint>

namespace tnp {

struct CnpConfig {
  int dim_x = 1;
  int dim_y = 1;
  int width = 64;
  int encoder_layers = 4;
  int decoder_layers = 4;

  void validate() const;
  static CnpConfig from_values(const KeyValues& kv);
  KeyValues to_values() const;
};

class CnpModel final : public NeuralProcess {
 public:
  CnpModel(CnpConfig config, std::uint64_t seed);

  const CnpConfig& config() const { return config_; }
  std::string kind() const override { return "cnp"; }
  ParameterSet& parameters() override { return params_; }
  const ParameterSet& parameters() const override { return params_; }
  KeyValues config_values() const override { return config_.to_values(); }
  int dim_x() const override { return config_.dim_x; }
  int dim_y() const override { return config_.dim_y; }

  Var loss(const BoundParameters& params, const TaskBatch& batch, const Dropout& dropout) const override;
  DiagonalPrediction predict_marginals(const TaskBatch& batch) const override;

  struct Output {
    Var mean;       // (batch*targets x dim_y)
    Var log_sigma;  // clamped to [kCnpLogSigmaMin, kCnpLogSigmaMax]
  };
  // Throws DimensionError on an empty context and ConfigError if some
  // context label is hidden.
  Output forward(const BoundParameters& p, const TaskBatch& batch) const;

  const Mlp& decoder() const { return decoder_; }

 private:
  CnpConfig config_;
  ParameterSet params_;
  Mlp encoder_;
  Mlp decoder_;
};

inline constexpr double kCnpLogSigmaMin = -6.0;
inline constexpr double kCnpLogSigmaMax = 6.0;

DiagonalPrediction cnp_predict(const CnpModel& model, const TaskBatch& batch);

}  // namespace tnp
