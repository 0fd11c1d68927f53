#pragma once

#include <span>
#include <vector>

#include "milgrad/archive.hpp"
#include "milgrad/bag.hpp"
#include "milgrad/model.hpp"
#include "milgrad/rng.hpp"

namespace milgrad {

// One epoch's sampling schedule: indices into the bag list, drawn with
// replacement with probability proportional to 1 / class count, schedule
// length equal to the dataset size. All three classes must be represented.
std::vector<std::size_t> weighted_sampler(std::span<const int> labels, Rng& rng);
std::vector<std::size_t> weighted_sampler(std::span<const int> labels, std::uint64_t seed);

// One optimizer step over a batch: mean gradient over the batch members in
// order, decoupled weight decay, Adam update. Returns the mean batch loss.
// Training and replay share this path, which is what makes replay bit-exact.
double apply_train_step(Vector& params, AdamState& state, const ModelConfig& model_config,
                        std::span<const Bag* const> batch, const TrainConfig& config);

struct TrainResult {
  RunManifest manifest;
  std::vector<CheckpointRecord> checkpoints;
  ModelParams best_params;
};

// Full training loop: weighted sampling per epoch, per-step membership
// logging, checkpoints at the cadence plus the final epoch (plus record 0
// holding the initialization), per-epoch validation micro-AUC, and the
// best-validation-AUC checkpoint flagged in the manifest.
TrainResult train(const TrainConfig& config, const ModelConfig& model_config,
                  std::span<const Bag> train_bags, std::span<const Bag> val_bags,
                  const std::string& dataset_fingerprint, const std::string& config_hash);

// Re-executes training between consecutive checkpoints from the stored state
// and membership log; true iff every reproduced parameter and moment vector
// matches the stored one bit-exactly.
bool replay_verify(const RunArchive& archive, std::span<const Bag> train_bags);

}  // namespace milgrad
