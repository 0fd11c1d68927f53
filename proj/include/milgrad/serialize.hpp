#pragma once

#include <string>

#include <json.hpp>

#include "milgrad/adam.hpp"
#include "milgrad/influence.hpp"
#include "milgrad/model.hpp"
#include "milgrad/prune.hpp"
#include "milgrad/synth.hpp"

namespace milgrad {

// JSON codecs for the config structs. Readers are strict: unknown keys are
// rejected naming the key; absent keys fall back to defaults. allow_seed
// distinguishes manifest echoes (seeds recorded) from experiment configs
// (all randomness flows from the single top-level seed).

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& section);

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& section,
                                   bool allow_seed = true);

nlohmann::json synth_config_to_json(const SynthConfig& c);
SynthConfig synth_config_from_json(const nlohmann::json& j, const std::string& section,
                                   bool allow_seed = true);

nlohmann::json influence_options_to_json(const InfluenceOptions& o);
InfluenceOptions influence_options_from_json(const nlohmann::json& j, const std::string& section);

nlohmann::json prune_config_to_json(const PruneConfig& c);
PruneConfig prune_config_from_json(const nlohmann::json& j, const std::string& section);

}  // namespace milgrad
