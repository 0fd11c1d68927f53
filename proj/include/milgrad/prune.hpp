#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "milgrad/influence.hpp"
#include "milgrad/metrics.hpp"
#include "milgrad/model.hpp"
#include "milgrad/synth.hpp"
#include "milgrad/train.hpp"

namespace milgrad {

enum class RankingMode { kPerTargetTopkUnion, kCumulativeSum };
enum class SeedPolicy { kSameAsBaseline, kFresh };

const char* ranking_mode_name(RankingMode m);
RankingMode parse_ranking_mode(const std::string& name);
const char* seed_policy_name(SeedPolicy p);
SeedPolicy parse_seed_policy(const std::string& name);

struct PruneConfig {
  int k = 300;
  InfluenceVariant variant = InfluenceVariant::kLiteral;
  CheckpointMode checkpoint_mode = CheckpointMode::kStrict;
  RankingMode ranking = RankingMode::kPerTargetTopkUnion;
  SeedPolicy seed_policy = SeedPolicy::kSameAsBaseline;

  void validate() const;
  bool operator==(const PruneConfig&) const = default;
};

// Validation bags whose argmax class probability disagrees with the reader-1
// label; argmax ties break to the lowest class index.
std::vector<std::uint32_t> find_misclassified(const ModelParams& params,
                                              std::span<const Bag> val_bags);

// One singleton bag per misclassified visit, selected by attention and
// carrying the visit's reader-1 label.
std::vector<Bag> build_targets(const ModelParams& params,
                               std::span<const std::uint32_t> misclassified_ids,
                               std::span<const Bag> val_bags);

struct RemovalSelection {
  std::vector<InstanceId> removed;  // sorted unique union
  std::vector<std::vector<InstanceId>> per_target;
  std::vector<std::string> warnings;
};

// Top-k per target (descending score, ties by ascending candidate id) and
// union; or cumulative: per-candidate score sums across targets, global top
// targets*k. k beyond the candidate count takes everything with a warning.
RemovalSelection flag_removals(const InfluenceTable& table, int k, RankingMode mode);

// One instance id per line under a "candidate_id" header.
void write_removal_set(const std::filesystem::path& path, std::span<const InstanceId> removed);
std::vector<InstanceId> read_removal_set(const std::filesystem::path& path);

struct RetrainResult {
  TrainResult run;
  std::vector<Bag> pruned_train_bags;
  std::vector<std::string> warnings;  // bags that lost every instance
  std::string effective_fingerprint;
};

// Clears the presence flags of the removed instances in the training split
// and retrains; bags left without a single present instance are dropped with
// a warning. Same-seed policy reuses the baseline seed so the comparison
// isolates the data change.
RetrainResult retrain_without(const std::vector<Bag>& train_bags, const std::vector<Bag>& val_bags,
                              std::span<const InstanceId> removed, const TrainConfig& base_config,
                              const ModelConfig& model_config, SeedPolicy policy,
                              const std::string& base_fingerprint,
                              const std::string& config_hash);

// "p% (u/total)" in the report table's formatting, e.g. "13.3% (3,734/28,060)".
std::string format_removal(std::size_t removed, std::size_t total);

struct ReaderMetrics {
  bool present = false;
  MetricBundle metrics;
};

struct EvaluatedRun {
  std::string tag;  // row label, e.g. "baseline" or "top-300 removed"
  std::size_t removed_count = 0;
  std::size_t total_instances = 0;
  ReaderMetrics reader1;
  ReaderMetrics reader2;
};

// Micro-AUC, linearly weighted kappa and confusion matrix on a bag list for
// each reader with labels available.
EvaluatedRun evaluate_run(const ModelParams& params, std::span<const Bag> bags,
                          const std::string& tag, std::size_t removed_count,
                          std::size_t total_instances);

struct PruneReport {
  std::size_t misclassified_count = 0;
  std::size_t target_count = 0;
  int k = 0;
  std::size_t union_size = 0;
  std::size_t max_possible = 0;  // targets * k
  std::size_t total_training_instances = 0;
  std::vector<std::vector<InstanceId>> per_target_removed;
  EvaluatedRun baseline;
  std::vector<EvaluatedRun> retrained;
};

PruneReport compare_report(const EvaluatedRun& baseline, std::vector<EvaluatedRun> retrained,
                           const RemovalSelection& selection, std::size_t misclassified_count,
                           int k, std::size_t total_training_instances);

// Table-style text rendering plus a machine-readable JSON document.
std::string render_report_table(const PruneReport& report);
std::string report_to_json_text(const PruneReport& report);

// Step curve of flagged-bag recovery along a ranking. Flags must cover every
// ranked bag and at least one must be set.
DetectionCurve detection_curve(std::span<const std::uint32_t> ranked_bag_ids,
                               const std::map<std::uint32_t, bool>& disagreement_flags);

void write_detection_curve(const std::filesystem::path& path, const DetectionCurve& curve);

struct AuditResult {
  std::vector<BagScore> scores;          // in ranked order
  std::vector<std::uint32_t> ranked;     // bag ids, best first
  DetectionCurve curve;
  std::size_t flagged_count = 0;
};

// Self-influence ranking over doubly-read bags with flags = (reader1 !=
// reader2), and the detection curve over that ranking.
AuditResult simulate_dual_reader_audit(std::span<const Bag> audited_bags,
                                       const RunArchive& archive,
                                       const InfluenceOptions& options);

// Random subset of the audited bags preserving the same:different reader
// ratio (exact counts).
std::vector<Bag> stratified_audit_subset(std::span<const Bag> bags, std::size_t subset_size,
                                         std::uint64_t seed);

}  // namespace milgrad
