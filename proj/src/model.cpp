#include "tnp/model.hpp"

#include "tnp/cnp.hpp"
#include "tnp/errors.hpp"
#include "tnp/tnp_model.hpp"

namespace tnp {

std::unique_ptr<NeuralProcess> make_model(const KeyValues& config, std::uint64_t seed) {
  const std::string kind = config.get_string("model.kind", "tnp");
  if (kind == "tnp") return std::make_unique<TnpModel>(ModelConfig::from_values(config), seed);
  if (kind == "cnp") return std::make_unique<CnpModel>(CnpConfig::from_values(config), seed);
  throw ConfigError("unknown model.kind: " + kind + " (expected tnp or cnp)");
}

}  // namespace tnp
