#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "milgrad/adam.hpp"
#include "milgrad/model.hpp"
#include "milgrad/types.hpp"

namespace milgrad {

// Bags sampled at one optimizer step.
struct MembershipEntry {
  std::uint64_t step = 0;
  std::vector<std::uint32_t> bag_ids;
};

// Snapshot after completing `step` optimizer steps: parameters and the
// moments used by the final applied update, plus the minibatch membership
// for every step since the previous stored record. Record 0 is the
// initialization state (step 0, empty membership); influence tracing
// iterates records 1..T only.
struct CheckpointRecord {
  std::uint64_t index = 0;
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  double eta = 0.0;
  Vector params;
  Vector m;
  Vector v;
  std::vector<MembershipEntry> membership;
};

struct EpochMetrics {
  std::uint64_t epoch = 0;
  double train_loss = 0.0;
  double val_auc = 0.0;
};

// Everything needed to replay or extend a run. No timestamps: a manifest is
// a pure function of its inputs.
struct RunManifest {
  ModelConfig model;
  TrainConfig train;
  std::string config_hash;
  std::string dataset_fingerprint;
  std::vector<std::string> checkpoint_files;
  std::vector<EpochMetrics> epoch_metrics;
  std::uint64_t best_checkpoint_index = 0;
};

// One directory per run: manifest.json plus checkpoints/ckpt_NNNNN.mgck
// containers. Write -> read -> write is byte-identical.
void write_run_archive(const std::filesystem::path& dir, const RunManifest& manifest,
                       const std::vector<CheckpointRecord>& records);

class RunArchive {
 public:
  static RunArchive load(const std::filesystem::path& dir);
  static RunArchive from_parts(RunManifest manifest, std::vector<CheckpointRecord> records);

  const RunManifest& manifest() const { return manifest_; }
  const std::vector<CheckpointRecord>& checkpoints() const { return records_; }
  const std::filesystem::path& dir() const { return dir_; }

  const CheckpointRecord& best_checkpoint() const;
  ModelParams params_at(const CheckpointRecord& record) const;
  ModelParams best_params() const { return params_at(best_checkpoint()); }

 private:
  std::filesystem::path dir_;
  RunManifest manifest_;
  std::vector<CheckpointRecord> records_;
};

std::string make_checkpoint_file_name(std::uint64_t index);

// Serialization pieces shared with tests.
std::string checkpoint_to_bytes(const CheckpointRecord& record);
CheckpointRecord checkpoint_from_bytes(const std::string& bytes, const std::string& origin);
std::string manifest_to_json_text(const RunManifest& manifest);
RunManifest manifest_from_json_text(const std::string& text, const std::string& origin);

}  // namespace milgrad
