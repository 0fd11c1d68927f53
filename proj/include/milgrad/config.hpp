#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "milgrad/serialize.hpp"

namespace milgrad {

struct MetricsConfig {
  double audit_recall_fraction = 0.30;

  bool operator==(const MetricsConfig&) const = default;
};

// One experiment, one file. The top-level seed is mandatory and is the only
// source of randomness: section seeds are derived through named substreams,
// never read from the file. Unknown keys anywhere are rejected by name.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  SynthConfig synth;
  ModelConfig model;
  TrainConfig train;
  InfluenceOptions influence;
  PruneConfig prune;
  MetricsConfig metrics;

  // Section configs with their substream seeds filled in.
  SynthConfig resolved_synth() const;
  TrainConfig resolved_train() const;

  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  // Canonical serialized form; its hash names this config in manifests.
  std::string canonical_text() const;
  std::string hash() const;

  static ExperimentConfig load(const std::filesystem::path& path);
};

}  // namespace milgrad
