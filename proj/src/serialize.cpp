#include "milgrad/serialize.hpp"

#include "milgrad/json_util.hpp"

namespace milgrad {

nlohmann::json influence_options_to_json(const InfluenceOptions& o) {
  nlohmann::json j;
  j["variant"] = variant_name(o.variant);
  j["checkpoint_mode"] = checkpoint_mode_name(o.mode);
  return j;
}

InfluenceOptions influence_options_from_json(const nlohmann::json& j, const std::string& section) {
  JsonSection s(j, section);
  InfluenceOptions o;
  o.variant = parse_variant(s.text("variant", variant_name(o.variant)));
  o.mode = parse_checkpoint_mode(s.text("checkpoint_mode", checkpoint_mode_name(o.mode)));
  s.done();
  return o;
}

nlohmann::json prune_config_to_json(const PruneConfig& c) {
  nlohmann::json j;
  j["k"] = c.k;
  j["variant"] = variant_name(c.variant);
  j["checkpoint_mode"] = checkpoint_mode_name(c.checkpoint_mode);
  j["ranking"] = ranking_mode_name(c.ranking);
  j["seed_policy"] = seed_policy_name(c.seed_policy);
  return j;
}

PruneConfig prune_config_from_json(const nlohmann::json& j, const std::string& section) {
  JsonSection s(j, section);
  PruneConfig c;
  c.k = static_cast<int>(s.integer("k", c.k));
  c.variant = parse_variant(s.text("variant", variant_name(c.variant)));
  c.checkpoint_mode =
      parse_checkpoint_mode(s.text("checkpoint_mode", checkpoint_mode_name(c.checkpoint_mode)));
  c.ranking = parse_ranking_mode(s.text("ranking", ranking_mode_name(c.ranking)));
  c.seed_policy = parse_seed_policy(s.text("seed_policy", seed_policy_name(c.seed_policy)));
  s.done();
  c.validate();
  return c;
}

}  // namespace milgrad
