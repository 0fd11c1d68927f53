#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "milgrad/archive.hpp"
#include "milgrad/bag.hpp"
#include "milgrad/types.hpp"

namespace milgrad {

// Published formulations of moment-preconditioned gradient tracing disagree
// on whether the candidate gradient enters the product, so the defensible
// readings are explicit variants:
//   kLiteral          eta * sum_p m/(sqrt(v)+eps) * g'_p * g_p
//   kUpdateDot        eta * sum_p g'_p * m/(sqrt(v)+eps)
//   kPreconditionedIp eta * sum_p g'_p * g_p / (sqrt(v)+eps)
// g' is the target's gradient, g the candidate's, m/v the stored Adam
// moments at the checkpoint. Every pair score is divided by the training
// batch size at the end.
enum class InfluenceVariant { kLiteral, kUpdateDot, kPreconditionedIp };

// Checkpoint inclusion: kStrict requires the candidate's parent bag in the
// membership log of the interval ending at the checkpoint; kTracInCp always
// includes every trained checkpoint.
enum class CheckpointMode { kStrict, kTracInCp };

const char* variant_name(InfluenceVariant v);
InfluenceVariant parse_variant(const std::string& name);
const char* checkpoint_mode_name(CheckpointMode m);
CheckpointMode parse_checkpoint_mode(const std::string& name);

struct InfluenceOptions {
  InfluenceVariant variant = InfluenceVariant::kLiteral;
  CheckpointMode mode = CheckpointMode::kStrict;

  bool operator==(const InfluenceOptions&) const = default;
};

struct InfluenceScore {
  InstanceId target;
  InstanceId candidate;
  InfluenceVariant variant = InfluenceVariant::kLiteral;
  double score = 0.0;
  int checkpoints_used = 0;
};

// One checkpoint's contribution, summed over parameters in canonical order.
// Shared by every scoring path so batched computation matches pairwise calls
// bit for bit.
double variant_checkpoint_term(InfluenceVariant variant, double eta, const Vector& m,
                               const Vector& v, double epsilon, const Vector& grad_target,
                               const Vector& grad_candidate);

// Gradient-tracing score of one (target, candidate) singleton pair over the
// stored checkpoints. Both bags must have exactly one present instance; an
// archive without trained checkpoints yields score 0 with zero checkpoints.
InfluenceScore tracin_pair(const RunArchive& archive, const Bag& target, const Bag& candidate,
                           const InfluenceOptions& options);

struct InfluenceTable {
  std::vector<InstanceId> targets;
  std::vector<InstanceId> candidates;
  std::vector<InfluenceScore> entries;  // row-major: targets x candidates
  InfluenceVariant variant = InfluenceVariant::kLiteral;

  const InfluenceScore& at(std::size_t target_row, std::size_t candidate_col) const;
};

// Complete |targets| x |candidates| table. Gradients are computed once per
// checkpoint and reused; every entry equals the corresponding tracin_pair
// call exactly.
InfluenceTable influence_table(const RunArchive& archive, std::span<const Bag> targets,
                               std::span<const Bag> candidates, const InfluenceOptions& options);

struct SelfInfluenceMatrix {
  std::uint32_t bag_id = 0;
  Matrix scores;  // N x N, entry (i, j) = tracin(singleton_i, singleton_j)
  InfluenceVariant variant = InfluenceVariant::kLiteral;
  int checkpoints_used = 0;
};

// Pairwise scores among one bag's present instances, every singleton
// carrying the visit's training label.
SelfInfluenceMatrix self_influence_matrix(const RunArchive& archive, const Bag& bag,
                                          const InfluenceOptions& options);

// Maximum diagonal entry — the visit-level mislabel score.
double bag_self_influence_score(const SelfInfluenceMatrix& matrix);

struct BagScore {
  std::uint32_t bag_id = 0;
  double score = 0.0;
  int checkpoints_used = 0;
};

// Visit-level scores for many bags; computes only the diagonal terms it
// needs, equal to bag_self_influence_score(self_influence_matrix(...)).
std::vector<BagScore> self_influence_scores(const RunArchive& archive, std::span<const Bag> bags,
                                            const InfluenceOptions& options);

// Descending by score, ties broken by ascending bag id. Scores must be finite.
std::vector<std::uint32_t> rank_bags_by_self_influence(std::span<const BagScore> scores);

// Tab-separated with header target_id, candidate_id, variant,
// checkpoints_used, score. Rankings reuse the schema with
// target = candidate = the bag.
void write_influence_table(const std::filesystem::path& path, const InfluenceTable& table);
InfluenceTable read_influence_table(const std::filesystem::path& path);
void write_ranking(const std::filesystem::path& path, std::span<const BagScore> scores,
                   std::span<const std::uint32_t> ranked, InfluenceVariant variant);

}  // namespace milgrad
