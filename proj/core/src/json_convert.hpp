#pragma once

// JSON converters shared by io.cpp and config.cpp. Not installed.

#include <string>

#include <json.hpp>

#include "flowdistill/adversarial.hpp"
#include "flowdistill/distill.hpp"
#include "flowdistill/nn.hpp"
#include "flowdistill/optimizer.hpp"
#include "flowdistill/velocity_model.hpp"

namespace flowdistill::detail {

using nlohmann::json;

json params_to_json(const nn::ParamSet& params);
nn::ParamSet params_from_json(const json& j);

json arch_to_json(const nn::Architecture& arch);
nn::Architecture arch_from_json(const json& j);

json optimizer_to_json(const nn::OptimizerState& state);
nn::OptimizerState optimizer_from_json(const json& j);

json taps_to_json(const adversarial::FeatureTapConfig& taps);
adversarial::FeatureTapConfig taps_from_json(const json& j);

json distill_config_to_json(const distill::DistillConfig& cfg);
/// Reads known fields over `base`; unknown keys raise ConfigError naming the key.
distill::DistillConfig distill_config_from_json(const json& j, distill::DistillConfig base);

std::string rng_to_string(const Rng& rng);
Rng rng_from_string(const std::string& s);

/// Throws ConfigError naming `where` if `j` has keys outside `allowed`.
void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where);

}  // namespace flowdistill::detail
