#include "milgrad/config.hpp"

#include <fstream>
#include <sstream>

#include "milgrad/json_util.hpp"
#include "milgrad/rng.hpp"
#include "milgrad/sha256.hpp"

namespace milgrad {

SynthConfig ExperimentConfig::resolved_synth() const {
  SynthConfig c = synth;
  c.seed = Rng::substream(seed, "synth").next_u64();
  return c;
}

TrainConfig ExperimentConfig::resolved_train() const {
  TrainConfig c = train;
  c.seed = Rng::substream(seed, "train").next_u64();
  return c;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  JsonSection s(j, "config");
  ExperimentConfig c;
  c.seed = s.required_uinteger("seed");
  c.synth = synth_config_from_json(s.object("synth"), "synth", /*allow_seed=*/false);
  c.model = model_config_from_json(s.object("model"), "model");
  c.train = train_config_from_json(s.object("train"), "train", /*allow_seed=*/false);
  c.influence = influence_options_from_json(s.object("influence"), "influence");
  c.prune = prune_config_from_json(s.object("prune"), "prune");
  {
    const nlohmann::json metrics_json = s.object("metrics");
    JsonSection ms(metrics_json, "metrics");
    c.metrics.audit_recall_fraction =
        ms.number("audit_recall_fraction", c.metrics.audit_recall_fraction);
    ms.done();
  }
  s.done();
  if (!(c.metrics.audit_recall_fraction > 0.0) || c.metrics.audit_recall_fraction > 1.0) {
    throw ConfigError("metrics.audit_recall_fraction must be in (0, 1]");
  }
  return c;
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  nlohmann::json synth_json = synth_config_to_json(synth);
  synth_json.erase("seed");
  j["synth"] = synth_json;
  j["model"] = model_config_to_json(model);
  nlohmann::json train_json = train_config_to_json(train);
  train_json.erase("seed");
  j["train"] = train_json;
  j["influence"] = influence_options_to_json(influence);
  j["prune"] = prune_config_to_json(prune);
  j["metrics"] = {{"audit_recall_fraction", metrics.audit_recall_fraction}};
  return j;
}

std::string ExperimentConfig::canonical_text() const { return to_json().dump(2) + "\n"; }

std::string ExperimentConfig::hash() const { return sha256_hex(canonical_text()); }

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot open config: " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

}  // namespace milgrad
