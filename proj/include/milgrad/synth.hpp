#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "milgrad/bag.hpp"
#include "milgrad/types.hpp"

namespace milgrad {

enum class Split { kTrain = 0, kVal = 1, kTest = 2 };

const char* split_name(Split s);

struct SynthConfig {
  std::uint64_t bag_count = 200;
  Index instances_per_bag = 46;
  Index feature_dim = 24;
  Index signal_instances = 5;
  double spurious_rate = 0.0;
  double spurious_strength = 3.0;
  double reader2_disagreement_rate = 0.16;
  std::array<double, 3> split_fractions{0.70, 0.10, 0.20};
  std::uint64_t seed = 1;

  // Texture of the generated features.
  double background_noise = 1.0;    // stddev of every raw feature entry
  double signal_marker = 2.5;       // constant added to dim 0 of signal instances
  double severity_scale = 2.5;      // half-range of the centered severity signal on dim 1
  // Fraction of the severity signal carried by non-signal instances: every
  // "image" of a visit reflects its severity somewhat, signal instances are
  // just the clearest.
  double background_severity_leak = 0.3;
  // Keeps drawn severities this far away from the class thresholds; 0 allows
  // arbitrarily ambiguous visits right at a boundary.
  double class_margin = 0.0;
  std::array<double, 3> class_mix{0.40, 0.35, 0.25};

  void validate() const;
  bool operator==(const SynthConfig&) const = default;
};

// Severity-index thresholds: [0,5] mild, (5,10] moderate, (10,inf) severe.
// Boundaries land in the lower class; negative scores are rejected.
int severity_to_class(double score);

struct DatasetBag {
  Bag bag;
  Split split = Split::kTrain;
  bool spurious_corrupted = false;
  bool reader_disagreement = false;
  std::vector<std::uint32_t> signal_instances;
};

struct SynthDataset {
  SynthConfig config;
  std::vector<DatasetBag> bags;  // global bag-id order

  std::vector<Bag> split_bags(Split s) const;
  std::vector<const DatasetBag*> split_view(Split s) const;
};

// Draws latent severities from the class mixture, plants a severity-scaled
// signal in a random subset of each bag's instances, fills the rest with
// background noise, and assigns bag-level splits. Reader 2 initially agrees
// with reader 1 everywhere and no noise flags are set.
SynthDataset generate(const SynthConfig& config);

// Adds a label-correlated value on the dedicated spurious feature dimension
// (the last one) across all instances of round(rate * train_count) training
// bags; validation and test bags receive the same dimension decorrelated
// from their labels. No-op when the count rounds to zero.
void plant_spurious(SynthDataset& dataset, double rate, double strength, std::uint64_t seed);

// Plants annotation disagreement on round(rate * bag_count) bags chosen
// without replacement: the training label (reader 1) moves to an adjacent
// class while reader 2 keeps the severity-consistent label, so flagged bags
// are genuinely mislabeled in training and the two readers disagree by
// exactly one class.
void simulate_second_reader(SynthDataset& dataset, double rate, std::uint64_t seed);

// generate + simulate_second_reader + plant_spurious with substream seeds
// derived from config.seed.
SynthDataset synthesize(const SynthConfig& config);

// Dataset directory: dataset_{train,val,test}.mgds containers plus
// dataset_manifest.json carrying the config echo, the content fingerprint
// (sha256 over the three split containers) and the hash of the experiment
// config that produced it.
std::string write_dataset(const std::filesystem::path& dir, const SynthDataset& dataset,
                          const std::string& config_hash = "");
SynthDataset load_dataset(const std::filesystem::path& dir);
std::string dataset_fingerprint(const SynthDataset& dataset);

}  // namespace milgrad
