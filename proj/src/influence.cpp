#include "milgrad/influence.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace milgrad {

const char* variant_name(InfluenceVariant v) {
  switch (v) {
    case InfluenceVariant::kLiteral:
      return "literal";
    case InfluenceVariant::kUpdateDot:
      return "update_dot";
    case InfluenceVariant::kPreconditionedIp:
      return "preconditioned_ip";
  }
  return "?";
}

InfluenceVariant parse_variant(const std::string& name) {
  if (name == "literal") {
    return InfluenceVariant::kLiteral;
  }
  if (name == "update_dot") {
    return InfluenceVariant::kUpdateDot;
  }
  if (name == "preconditioned_ip") {
    return InfluenceVariant::kPreconditionedIp;
  }
  throw ConfigError("unknown influence variant '" + name +
                    "' (expected literal, update_dot or preconditioned_ip)");
}

const char* checkpoint_mode_name(CheckpointMode m) {
  return m == CheckpointMode::kStrict ? "strict" : "tracincp";
}

CheckpointMode parse_checkpoint_mode(const std::string& name) {
  if (name == "strict") {
    return CheckpointMode::kStrict;
  }
  if (name == "tracincp") {
    return CheckpointMode::kTracInCp;
  }
  throw ConfigError("unknown checkpoint mode '" + name + "' (expected strict or tracincp)");
}

double variant_checkpoint_term(InfluenceVariant variant, double eta, const Vector& m,
                               const Vector& v, double epsilon, const Vector& grad_target,
                               const Vector& grad_candidate) {
  const Index n = grad_target.size();
  if (m.size() != n || v.size() != n ||
      (variant != InfluenceVariant::kUpdateDot && grad_candidate.size() != n)) {
    throw std::runtime_error("variant_checkpoint_term: shape mismatch");
  }
  double sum = 0.0;
  switch (variant) {
    case InfluenceVariant::kLiteral:
      for (Index p = 0; p < n; ++p) {
        sum += m(p) / (std::sqrt(v(p)) + epsilon) * grad_target(p) * grad_candidate(p);
      }
      break;
    case InfluenceVariant::kUpdateDot:
      for (Index p = 0; p < n; ++p) {
        sum += grad_target(p) * (m(p) / (std::sqrt(v(p)) + epsilon));
      }
      break;
    case InfluenceVariant::kPreconditionedIp:
      for (Index p = 0; p < n; ++p) {
        sum += grad_target(p) * grad_candidate(p) / (std::sqrt(v(p)) + epsilon);
      }
      break;
  }
  return eta * sum;
}

namespace {

InstanceId singleton_instance_id(const Bag& bag, const char* role) {
  if (bag.num_present() != 1) {
    throw std::runtime_error(std::string(role) + " bag " + std::to_string(bag.id) +
                             " must have exactly one present instance, has " +
                             std::to_string(bag.num_present()));
  }
  for (Index i = 0; i < bag.num_instances(); ++i) {
    if (bag.is_present(i)) {
      return InstanceId{bag.id, static_cast<std::uint32_t>(i)};
    }
  }
  throw std::runtime_error("unreachable");
}

bool record_trained(const CheckpointRecord& rec) { return rec.step > 0; }

bool membership_contains(const CheckpointRecord& rec, std::uint32_t bag_id) {
  for (const auto& entry : rec.membership) {
    for (std::uint32_t id : entry.bag_ids) {
      if (id == bag_id) {
        return true;
      }
    }
  }
  return false;
}

bool record_included(const CheckpointRecord& rec, CheckpointMode mode,
                     std::uint32_t candidate_parent) {
  if (!record_trained(rec)) {
    return false;  // record 0 is the initialization snapshot
  }
  return mode == CheckpointMode::kTracInCp || membership_contains(rec, candidate_parent);
}

Vector singleton_grad(const ModelParams& params, const Bag& bag) {
  return bag_loss_and_grad(params, bag, bag.reader1_label).grad.values;
}

}  // namespace

InfluenceScore tracin_pair(const RunArchive& archive, const Bag& target, const Bag& candidate,
                           const InfluenceOptions& options) {
  InfluenceScore out;
  out.target = singleton_instance_id(target, "target");
  out.candidate = singleton_instance_id(candidate, "candidate");
  out.variant = options.variant;

  const TrainConfig& train = archive.manifest().train;
  for (const auto& rec : archive.checkpoints()) {
    if (!record_included(rec, options.mode, candidate.id)) {
      continue;
    }
    const ModelParams params = archive.params_at(rec);
    const Vector grad_target = singleton_grad(params, target);
    Vector grad_candidate;
    if (options.variant != InfluenceVariant::kUpdateDot) {
      grad_candidate = singleton_grad(params, candidate);
    }
    out.score += variant_checkpoint_term(options.variant, rec.eta, rec.m, rec.v, train.epsilon,
                                         grad_target, grad_candidate);
    ++out.checkpoints_used;
  }
  out.score /= static_cast<double>(train.batch_size);
  return out;
}

const InfluenceScore& InfluenceTable::at(std::size_t target_row, std::size_t candidate_col) const {
  if (target_row >= targets.size() || candidate_col >= candidates.size()) {
    throw std::runtime_error("influence table index out of range");
  }
  return entries[target_row * candidates.size() + candidate_col];
}

InfluenceTable influence_table(const RunArchive& archive, std::span<const Bag> targets,
                               std::span<const Bag> candidates, const InfluenceOptions& options) {
  if (targets.empty() || candidates.empty()) {
    throw std::runtime_error("influence_table: empty target or candidate list");
  }
  InfluenceTable table;
  table.variant = options.variant;
  for (const Bag& t : targets) {
    table.targets.push_back(singleton_instance_id(t, "target"));
  }
  for (const Bag& c : candidates) {
    table.candidates.push_back(singleton_instance_id(c, "candidate"));
  }
  table.entries.resize(targets.size() * candidates.size());
  for (std::size_t ti = 0; ti < targets.size(); ++ti) {
    for (std::size_t ci = 0; ci < candidates.size(); ++ci) {
      auto& e = table.entries[ti * candidates.size() + ci];
      e.target = table.targets[ti];
      e.candidate = table.candidates[ci];
      e.variant = options.variant;
    }
  }

  const TrainConfig& train = archive.manifest().train;
  const bool needs_candidate_grad = options.variant != InfluenceVariant::kUpdateDot;
  std::vector<Vector> target_grads(targets.size());
  std::vector<Vector> candidate_grads(candidates.size());
  std::vector<char> included(candidates.size());

  for (const auto& rec : archive.checkpoints()) {
    if (!record_trained(rec)) {
      continue;
    }
    bool any = false;
    for (std::size_t ci = 0; ci < candidates.size(); ++ci) {
      included[ci] = record_included(rec, options.mode, candidates[ci].id) ? 1 : 0;
      any = any || included[ci];
    }
    if (!any) {
      continue;
    }
    const ModelParams params = archive.params_at(rec);
    for (std::size_t ti = 0; ti < targets.size(); ++ti) {
      target_grads[ti] = singleton_grad(params, targets[ti]);
    }
    if (needs_candidate_grad) {
      for (std::size_t ci = 0; ci < candidates.size(); ++ci) {
        if (included[ci]) {
          candidate_grads[ci] = singleton_grad(params, candidates[ci]);
        }
      }
    }
    for (std::size_t ti = 0; ti < targets.size(); ++ti) {
      for (std::size_t ci = 0; ci < candidates.size(); ++ci) {
        if (!included[ci]) {
          continue;
        }
        auto& e = table.entries[ti * candidates.size() + ci];
        e.score += variant_checkpoint_term(options.variant, rec.eta, rec.m, rec.v, train.epsilon,
                                           target_grads[ti], candidate_grads[ci]);
        ++e.checkpoints_used;
      }
    }
  }
  for (auto& e : table.entries) {
    e.score /= static_cast<double>(train.batch_size);
  }
  return table;
}

SelfInfluenceMatrix self_influence_matrix(const RunArchive& archive, const Bag& bag,
                                          const InfluenceOptions& options) {
  const Index n = bag.num_instances();
  if (n < 1) {
    throw std::runtime_error("self_influence_matrix: empty bag");
  }
  std::vector<Bag> singletons;
  singletons.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    singletons.push_back(as_singleton_bag(bag, i));
  }
  const InfluenceTable table = influence_table(archive, singletons, singletons, options);
  SelfInfluenceMatrix out;
  out.bag_id = bag.id;
  out.variant = options.variant;
  out.scores.resize(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const auto& e = table.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
      out.scores(i, j) = e.score;
      out.checkpoints_used = e.checkpoints_used;
    }
  }
  return out;
}

double bag_self_influence_score(const SelfInfluenceMatrix& matrix) {
  if (matrix.scores.rows() != matrix.scores.cols() || matrix.scores.rows() < 1) {
    throw std::runtime_error("malformed self-influence matrix");
  }
  return matrix.scores.diagonal().maxCoeff();
}

std::vector<BagScore> self_influence_scores(const RunArchive& archive, std::span<const Bag> bags,
                                            const InfluenceOptions& options) {
  const TrainConfig& train = archive.manifest().train;
  std::vector<BagScore> out(bags.size());
  std::vector<std::vector<Bag>> singletons(bags.size());
  std::vector<std::vector<double>> diag(bags.size());
  for (std::size_t bi = 0; bi < bags.size(); ++bi) {
    out[bi].bag_id = bags[bi].id;
    const Index n = bags[bi].num_instances();
    singletons[bi].reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      singletons[bi].push_back(as_singleton_bag(bags[bi], i));
    }
    diag[bi].assign(static_cast<std::size_t>(n), 0.0);
  }

  for (const auto& rec : archive.checkpoints()) {
    if (!record_trained(rec)) {
      continue;
    }
    std::vector<char> included(bags.size());
    bool any = false;
    for (std::size_t bi = 0; bi < bags.size(); ++bi) {
      included[bi] = record_included(rec, options.mode, bags[bi].id) ? 1 : 0;
      any = any || included[bi];
    }
    if (!any) {
      continue;
    }
    const ModelParams params = archive.params_at(rec);
    for (std::size_t bi = 0; bi < bags.size(); ++bi) {
      if (!included[bi]) {
        continue;
      }
      for (std::size_t i = 0; i < singletons[bi].size(); ++i) {
        const Vector g = singleton_grad(params, singletons[bi][i]);
        diag[bi][i] +=
            variant_checkpoint_term(options.variant, rec.eta, rec.m, rec.v, train.epsilon, g, g);
      }
      ++out[bi].checkpoints_used;
    }
  }
  for (std::size_t bi = 0; bi < bags.size(); ++bi) {
    double best = 0.0;
    bool first = true;
    for (double d : diag[bi]) {
      const double scaled = d / static_cast<double>(train.batch_size);
      if (first || scaled > best) {
        best = scaled;
        first = false;
      }
    }
    out[bi].score = best;
  }
  return out;
}

std::vector<std::uint32_t> rank_bags_by_self_influence(std::span<const BagScore> scores) {
  for (const auto& s : scores) {
    if (!std::isfinite(s.score)) {
      throw std::runtime_error("rank_bags_by_self_influence: non-finite score for bag " +
                               std::to_string(s.bag_id));
    }
  }
  std::vector<std::uint32_t> order(scores.size());
  std::vector<const BagScore*> ptrs(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    ptrs[i] = &scores[i];
  }
  std::stable_sort(ptrs.begin(), ptrs.end(), [](const BagScore* a, const BagScore* b) {
    if (a->score != b->score) {
      return a->score > b->score;
    }
    return a->bag_id < b->bag_id;
  });
  for (std::size_t i = 0; i < ptrs.size(); ++i) {
    order[i] = ptrs[i]->bag_id;
  }
  return order;
}

namespace {

std::string format_score(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

}  // namespace

void write_influence_table(const std::filesystem::path& path, const InfluenceTable& table) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write influence table: " + path.string());
  }
  out << "target_id\tcandidate_id\tvariant\tcheckpoints_used\tscore\n";
  for (const auto& e : table.entries) {
    out << to_string(e.target) << '\t' << to_string(e.candidate) << '\t' << variant_name(e.variant)
        << '\t' << e.checkpoints_used << '\t' << format_score(e.score) << '\n';
  }
}

InfluenceTable read_influence_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open influence table: " + path.string());
  }
  std::string line;
  if (!std::getline(in, line) ||
      line != "target_id\tcandidate_id\tvariant\tcheckpoints_used\tscore") {
    throw std::runtime_error("malformed influence table header in " + path.string());
  }
  InfluenceTable table;
  std::vector<InfluenceScore> rows;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    std::istringstream ls(line);
    std::string target, candidate, variant, used, score;
    if (!std::getline(ls, target, '\t') || !std::getline(ls, candidate, '\t') ||
        !std::getline(ls, variant, '\t') || !std::getline(ls, used, '\t') ||
        !std::getline(ls, score, '\t')) {
      throw std::runtime_error("malformed influence table row in " + path.string());
    }
    InfluenceScore e;
    e.target = parse_instance_id(target);
    e.candidate = parse_instance_id(candidate);
    e.variant = parse_variant(variant);
    e.checkpoints_used = std::stoi(used);
    e.score = std::stod(score);
    rows.push_back(e);
  }
  if (rows.empty()) {
    throw std::runtime_error("empty influence table: " + path.string());
  }
  // Rows are row-major: all candidates of the first target, then the next.
  std::size_t n_candidates = 0;
  while (n_candidates < rows.size() && rows[n_candidates].target == rows[0].target) {
    ++n_candidates;
  }
  if (n_candidates == 0 || rows.size() % n_candidates != 0) {
    throw std::runtime_error("ragged influence table: " + path.string());
  }
  for (std::size_t ci = 0; ci < n_candidates; ++ci) {
    table.candidates.push_back(rows[ci].candidate);
  }
  for (std::size_t ti = 0; ti < rows.size() / n_candidates; ++ti) {
    table.targets.push_back(rows[ti * n_candidates].target);
    for (std::size_t ci = 0; ci < n_candidates; ++ci) {
      if (!(rows[ti * n_candidates + ci].candidate == table.candidates[ci])) {
        throw std::runtime_error("inconsistent candidate order in " + path.string());
      }
    }
  }
  table.variant = rows.front().variant;
  table.entries = std::move(rows);
  return table;
}

void write_ranking(const std::filesystem::path& path, std::span<const BagScore> scores,
                   std::span<const std::uint32_t> ranked, InfluenceVariant variant) {
  std::map<std::uint32_t, const BagScore*> by_id;
  for (const auto& s : scores) {
    by_id[s.bag_id] = &s;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write ranking: " + path.string());
  }
  out << "target_id\tcandidate_id\tvariant\tcheckpoints_used\tscore\n";
  for (std::uint32_t id : ranked) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) {
      throw std::runtime_error("ranking references unknown bag " + std::to_string(id));
    }
    out << id << '\t' << id << '\t' << variant_name(variant) << '\t'
        << it->second->checkpoints_used << '\t' << format_score(it->second->score) << '\n';
  }
}

}  // namespace milgrad
