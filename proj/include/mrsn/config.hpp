#pragma once

#include "json.hpp"

#include "mrsn/dataset.hpp"
#include "mrsn/model.hpp"
#include "mrsn/training.hpp"

namespace mrsn {

// JSON mapping for every configuration struct. Parsing is strict: unknown
// keys raise ConfigError; missing keys keep their defaults.

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

/// Fingerprint of a model configuration, stored in bank headers.
std::uint64_t config_hash(const ModelConfig& cfg);

}  // namespace mrsn
