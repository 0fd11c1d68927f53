#include "milgrad/prune.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "milgrad/sha256.hpp"

namespace milgrad {

const char* ranking_mode_name(RankingMode m) {
  return m == RankingMode::kPerTargetTopkUnion ? "per_target_topk_union" : "cumulative_sum";
}

RankingMode parse_ranking_mode(const std::string& name) {
  if (name == "per_target_topk_union") {
    return RankingMode::kPerTargetTopkUnion;
  }
  if (name == "cumulative_sum") {
    return RankingMode::kCumulativeSum;
  }
  throw ConfigError("unknown ranking mode '" + name +
                    "' (expected per_target_topk_union or cumulative_sum)");
}

const char* seed_policy_name(SeedPolicy p) {
  return p == SeedPolicy::kSameAsBaseline ? "same_as_baseline" : "fresh";
}

SeedPolicy parse_seed_policy(const std::string& name) {
  if (name == "same_as_baseline") {
    return SeedPolicy::kSameAsBaseline;
  }
  if (name == "fresh") {
    return SeedPolicy::kFresh;
  }
  throw ConfigError("unknown seed policy '" + name + "' (expected same_as_baseline or fresh)");
}

void PruneConfig::validate() const {
  if (k < 1) {
    throw ConfigError("k must be >= 1");
  }
}

std::vector<std::uint32_t> find_misclassified(const ModelParams& params,
                                              std::span<const Bag> val_bags) {
  if (val_bags.empty()) {
    throw std::runtime_error("find_misclassified: empty validation set");
  }
  std::vector<std::uint32_t> out;
  for (const Bag& bag : val_bags) {
    const BagOutput output = classify_bag(params, bag);
    int predicted = 0;
    for (int c = 1; c < kNumClasses; ++c) {
      if (output.probabilities(c) > output.probabilities(predicted)) {
        predicted = c;  // ties keep the lowest class index
      }
    }
    if (predicted != bag.reader1_label) {
      out.push_back(bag.id);
    }
  }
  return out;
}

std::vector<Bag> build_targets(const ModelParams& params,
                               std::span<const std::uint32_t> misclassified_ids,
                               std::span<const Bag> val_bags) {
  std::vector<Bag> targets;
  targets.reserve(misclassified_ids.size());
  for (std::uint32_t id : misclassified_ids) {
    const Bag* bag = nullptr;
    for (const Bag& b : val_bags) {
      if (b.id == id) {
        bag = &b;
        break;
      }
    }
    if (bag == nullptr) {
      throw std::runtime_error("build_targets: bag " + std::to_string(id) +
                               " not in validation set");
    }
    targets.push_back(as_singleton_bag(*bag, most_attended_instance(params, *bag)));
  }
  return targets;
}

RemovalSelection flag_removals(const InfluenceTable& table, int k, RankingMode mode) {
  if (k < 1) {
    throw std::runtime_error("flag_removals: k must be >= 1");
  }
  const std::size_t n_targets = table.targets.size();
  const std::size_t n_candidates = table.candidates.size();
  RemovalSelection out;
  if (static_cast<std::size_t>(k) > n_candidates) {
    out.warnings.push_back("k = " + std::to_string(k) + " exceeds the " +
                           std::to_string(n_candidates) + " available candidates; taking all");
  }
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), n_candidates);

  std::set<InstanceId> union_set;
  if (mode == RankingMode::kPerTargetTopkUnion) {
    for (std::size_t ti = 0; ti < n_targets; ++ti) {
      std::vector<std::size_t> order(n_candidates);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double sa = table.at(ti, a).score;
        const double sb = table.at(ti, b).score;
        if (sa != sb) {
          return sa > sb;
        }
        return table.candidates[a] < table.candidates[b];
      });
      std::vector<InstanceId> flagged;
      flagged.reserve(take);
      for (std::size_t i = 0; i < take; ++i) {
        flagged.push_back(table.candidates[order[i]]);
        union_set.insert(table.candidates[order[i]]);
      }
      out.per_target.push_back(std::move(flagged));
    }
  } else {
    std::vector<double> totals(n_candidates, 0.0);
    for (std::size_t ci = 0; ci < n_candidates; ++ci) {
      for (std::size_t ti = 0; ti < n_targets; ++ti) {
        totals[ci] += table.at(ti, ci).score;
      }
    }
    std::vector<std::size_t> order(n_candidates);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (totals[a] != totals[b]) {
        return totals[a] > totals[b];
      }
      return table.candidates[a] < table.candidates[b];
    });
    const std::size_t cumulative_take =
        std::min(n_candidates, n_targets * static_cast<std::size_t>(k));
    std::vector<InstanceId> flagged;
    for (std::size_t i = 0; i < cumulative_take; ++i) {
      flagged.push_back(table.candidates[order[i]]);
      union_set.insert(table.candidates[order[i]]);
    }
    out.per_target.push_back(std::move(flagged));
  }
  out.removed.assign(union_set.begin(), union_set.end());
  return out;
}

void write_removal_set(const std::filesystem::path& path, std::span<const InstanceId> removed) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write removal set: " + path.string());
  }
  out << "candidate_id\n";
  for (const InstanceId& id : removed) {
    out << to_string(id) << "\n";
  }
}

std::vector<InstanceId> read_removal_set(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open removal set: " + path.string());
  }
  std::string line;
  if (!std::getline(in, line) || line != "candidate_id") {
    throw std::runtime_error("malformed removal set header in " + path.string());
  }
  std::vector<InstanceId> out;
  while (std::getline(in, line)) {
    if (!line.empty()) {
      out.push_back(parse_instance_id(line));
    }
  }
  return out;
}

RetrainResult retrain_without(const std::vector<Bag>& train_bags, const std::vector<Bag>& val_bags,
                              std::span<const InstanceId> removed, const TrainConfig& base_config,
                              const ModelConfig& model_config, SeedPolicy policy,
                              const std::string& base_fingerprint,
                              const std::string& config_hash) {
  std::set<InstanceId> removal_set(removed.begin(), removed.end());
  RetrainResult result;
  for (const Bag& bag : train_bags) {
    Bag pruned = bag;
    for (Index i = 0; i < bag.num_instances(); ++i) {
      if (removal_set.count(InstanceId{bag.id, static_cast<std::uint32_t>(i)})) {
        pruned.presence[static_cast<std::size_t>(i)] = 0;
      }
    }
    if (pruned.num_present() == 0) {
      result.warnings.push_back("bag " + std::to_string(bag.id) +
                                " lost every instance and was dropped");
      continue;
    }
    result.pruned_train_bags.push_back(std::move(pruned));
  }
  if (result.pruned_train_bags.empty()) {
    throw std::runtime_error("removal emptied the entire training set");
  }

  TrainConfig config = base_config;
  if (policy == SeedPolicy::kFresh) {
    config.seed = Rng::substream(base_config.seed, "retrain").next_u64();
  }

  // The effective dataset is the base plus the removal set; hash both so the
  // run stays reconstructible from its manifest.
  Sha256 h;
  h.update(base_fingerprint);
  for (const InstanceId& id : removal_set) {
    const std::string text = to_string(id) + "\n";
    h.update(text);
  }
  result.effective_fingerprint = h.hex_digest();

  result.run = train(config, model_config, result.pruned_train_bags, val_bags,
                     result.effective_fingerprint, config_hash);
  return result;
}

std::string format_removal(std::size_t removed, std::size_t total) {
  const double pct = total == 0 ? 0.0 : 100.0 * static_cast<double>(removed) /
                                            static_cast<double>(total);
  auto with_separators = [](std::size_t value) {
    std::string digits = std::to_string(value);
    std::string out;
    int counter = 0;
    for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
      if (counter > 0 && counter % 3 == 0) {
        out.push_back(',');
      }
      out.push_back(*it);
      ++counter;
    }
    std::reverse(out.begin(), out.end());
    return out;
  };
  char pct_buf[32];
  std::snprintf(pct_buf, sizeof(pct_buf), "%.1f", pct);
  return std::string(pct_buf) + "% (" + with_separators(removed) + "/" + with_separators(total) +
         ")";
}

EvaluatedRun evaluate_run(const ModelParams& params, std::span<const Bag> bags,
                          const std::string& tag, std::size_t removed_count,
                          std::size_t total_instances) {
  EvaluatedRun run;
  run.tag = tag;
  run.removed_count = removed_count;
  run.total_instances = total_instances;

  std::vector<Vector> probs;
  std::vector<int> predictions;
  std::vector<int> reader1;
  std::vector<int> reader2;
  bool all_have_reader2 = !bags.empty();
  for (const Bag& bag : bags) {
    const BagOutput output = classify_bag(params, bag);
    probs.push_back(output.probabilities);
    int predicted = 0;
    for (int c = 1; c < kNumClasses; ++c) {
      if (output.probabilities(c) > output.probabilities(predicted)) {
        predicted = c;
      }
    }
    predictions.push_back(predicted);
    reader1.push_back(bag.reader1_label);
    if (bag.reader2_label) {
      reader2.push_back(*bag.reader2_label);
    } else {
      all_have_reader2 = false;
    }
  }

  run.reader1.present = true;
  run.reader1.metrics.auc = micro_auc(probs, reader1);
  run.reader1.metrics.kappa = weighted_kappa(predictions, reader1);
  run.reader1.metrics.matrix = confusion(predictions, reader1);
  if (all_have_reader2) {
    run.reader2.present = true;
    run.reader2.metrics.auc = micro_auc(probs, reader2);
    run.reader2.metrics.kappa = weighted_kappa(predictions, reader2);
    run.reader2.metrics.matrix = confusion(predictions, reader2);
  }
  return run;
}

PruneReport compare_report(const EvaluatedRun& baseline, std::vector<EvaluatedRun> retrained,
                           const RemovalSelection& selection, std::size_t misclassified_count,
                           int k, std::size_t total_training_instances) {
  PruneReport report;
  report.misclassified_count = misclassified_count;
  report.target_count = selection.per_target.size();
  report.k = k;
  report.union_size = selection.removed.size();
  report.max_possible = selection.per_target.size() * static_cast<std::size_t>(k);
  report.total_training_instances = total_training_instances;
  report.per_target_removed = selection.per_target;
  report.baseline = baseline;
  report.retrained = std::move(retrained);
  return report;
}

namespace {

std::string metric_cell(const ReaderMetrics& m) {
  if (!m.present) {
    return "    -      -";
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%7.3f %6.3f", m.metrics.kappa, m.metrics.auc);
  return buf;
}

nlohmann::json confusion_to_json(const ConfusionMatrix3& cm) {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < kNumClasses; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < kNumClasses; ++j) {
      row.push_back(cm.at(i, j));
    }
    rows.push_back(row);
  }
  return rows;
}

nlohmann::json reader_to_json(const ReaderMetrics& m) {
  if (!m.present) {
    return nullptr;
  }
  nlohmann::json j;
  j["auc"] = m.metrics.auc;
  j["kappa"] = m.metrics.kappa;
  j["confusion"] = confusion_to_json(m.metrics.matrix);
  return j;
}

}  // namespace

std::string render_report_table(const PruneReport& report) {
  std::ostringstream out;
  if (report.target_count > 0) {
    out << "Misclassified validation visits: " << report.misclassified_count << "\n";
    out << "Targets: " << report.target_count << ", k = " << report.k << ", flagged union "
        << report.union_size << " of max " << report.max_possible << "\n";
  }
  out << "Removed: " << format_removal(report.union_size, report.total_training_instances)
      << "\n\n";
  out << "Run                        % Removed               Reader 1        Reader 2\n";
  out << "                                                  Kappa    AUC    Kappa    AUC\n";
  auto row = [&](const EvaluatedRun& r) {
    char name[32];
    std::snprintf(name, sizeof(name), "%-26s", r.tag.c_str());
    const std::string removal = format_removal(r.removed_count, r.total_instances);
    out << name << " " << removal;
    for (std::size_t i = removal.size(); i < 22; ++i) {
      out << ' ';
    }
    out << metric_cell(r.reader1) << " " << metric_cell(r.reader2) << "\n";
  };
  row(report.baseline);
  for (const auto& r : report.retrained) {
    row(r);
  }
  return out.str();
}

std::string report_to_json_text(const PruneReport& report) {
  nlohmann::json j;
  j["misclassified_count"] = report.misclassified_count;
  j["target_count"] = report.target_count;
  j["k"] = report.k;
  j["union_size"] = report.union_size;
  j["max_possible"] = report.max_possible;
  j["total_training_instances"] = report.total_training_instances;
  j["removal_rendered"] = format_removal(report.union_size, report.total_training_instances);
  nlohmann::json per_target = nlohmann::json::array();
  for (const auto& list : report.per_target_removed) {
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& id : list) {
      ids.push_back(to_string(id));
    }
    per_target.push_back(ids);
  }
  j["per_target_removed"] = per_target;
  auto run_json = [](const EvaluatedRun& r) {
    nlohmann::json rj;
    rj["tag"] = r.tag;
    rj["removed_count"] = r.removed_count;
    rj["total_instances"] = r.total_instances;
    rj["removal_rendered"] = format_removal(r.removed_count, r.total_instances);
    rj["reader1"] = reader_to_json(r.reader1);
    rj["reader2"] = reader_to_json(r.reader2);
    return rj;
  };
  j["baseline"] = run_json(report.baseline);
  nlohmann::json retrained = nlohmann::json::array();
  for (const auto& r : report.retrained) {
    retrained.push_back(run_json(r));
  }
  j["retrained"] = retrained;
  return j.dump(2) + "\n";
}

DetectionCurve detection_curve(std::span<const std::uint32_t> ranked_bag_ids,
                               const std::map<std::uint32_t, bool>& disagreement_flags) {
  if (ranked_bag_ids.empty()) {
    throw std::runtime_error("detection_curve: empty ranking");
  }
  std::size_t total_flagged = 0;
  for (std::uint32_t id : ranked_bag_ids) {
    const auto it = disagreement_flags.find(id);
    if (it == disagreement_flags.end()) {
      throw std::runtime_error("detection_curve: no flag for bag " + std::to_string(id));
    }
    total_flagged += it->second ? 1 : 0;
  }
  if (total_flagged == 0) {
    throw std::runtime_error("no disagreements to detect");
  }
  DetectionCurve curve;
  const double b = static_cast<double>(ranked_bag_ids.size());
  const double f = static_cast<double>(total_flagged);
  std::size_t found = 0;
  for (std::size_t i = 0; i < ranked_bag_ids.size(); ++i) {
    found += disagreement_flags.at(ranked_bag_ids[i]) ? 1 : 0;
    curve.fraction_inspected.push_back(static_cast<double>(i + 1) / b);
    curve.fraction_found.push_back(static_cast<double>(found) / f);
  }
  return curve;
}

void write_detection_curve(const std::filesystem::path& path, const DetectionCurve& curve) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write detection curve: " + path.string());
  }
  out << "fraction_inspected\tfraction_found\n";
  char buf[80];
  for (std::size_t i = 0; i < curve.fraction_inspected.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g\t%.17g\n", curve.fraction_inspected[i],
                  curve.fraction_found[i]);
    out << buf;
  }
}

AuditResult simulate_dual_reader_audit(std::span<const Bag> audited_bags,
                                       const RunArchive& archive,
                                       const InfluenceOptions& options) {
  if (audited_bags.empty()) {
    throw std::runtime_error("audit: no bags");
  }
  std::map<std::uint32_t, bool> flags;
  std::size_t flagged = 0;
  for (const Bag& bag : audited_bags) {
    if (!bag.reader2_label) {
      throw std::runtime_error("audit: bag " + std::to_string(bag.id) +
                               " has no reader-2 label");
    }
    const bool disagrees = *bag.reader2_label != bag.reader1_label;
    flags[bag.id] = disagrees;
    flagged += disagrees ? 1 : 0;
  }
  if (flagged == 0) {
    throw std::runtime_error("no disagreements to detect");
  }

  AuditResult result;
  result.flagged_count = flagged;
  std::vector<BagScore> scores = self_influence_scores(archive, audited_bags, options);
  result.ranked = rank_bags_by_self_influence(scores);
  std::map<std::uint32_t, BagScore> by_id;
  for (const auto& s : scores) {
    by_id[s.bag_id] = s;
  }
  for (std::uint32_t id : result.ranked) {
    result.scores.push_back(by_id.at(id));
  }
  result.curve = detection_curve(result.ranked, flags);
  return result;
}

std::vector<Bag> stratified_audit_subset(std::span<const Bag> bags, std::size_t subset_size,
                                         std::uint64_t seed) {
  if (subset_size == 0 || subset_size > bags.size()) {
    throw std::runtime_error("audit subset size must be in [1, bag count]");
  }
  std::vector<std::size_t> same;
  std::vector<std::size_t> different;
  for (std::size_t i = 0; i < bags.size(); ++i) {
    if (!bags[i].reader2_label) {
      throw std::runtime_error("audit: bag " + std::to_string(bags[i].id) +
                               " has no reader-2 label");
    }
    if (*bags[i].reader2_label != bags[i].reader1_label) {
      different.push_back(i);
    } else {
      same.push_back(i);
    }
  }
  // Preserve the same:different ratio exactly (rounded).
  const double ratio =
      static_cast<double>(different.size()) / static_cast<double>(bags.size());
  std::size_t n_diff = static_cast<std::size_t>(
      std::llround(ratio * static_cast<double>(subset_size)));
  n_diff = std::min(n_diff, different.size());
  std::size_t n_same = subset_size - n_diff;
  if (n_same > same.size()) {
    n_same = same.size();
    n_diff = std::min(subset_size - n_same, different.size());
  }

  Rng rng(seed);
  std::vector<Bag> subset;
  subset.reserve(n_same + n_diff);
  for (auto pick : rng.sample_without_replacement(same.size(), n_same)) {
    subset.push_back(bags[same[pick]]);
  }
  for (auto pick : rng.sample_without_replacement(different.size(), n_diff)) {
    subset.push_back(bags[different[pick]]);
  }
  std::sort(subset.begin(), subset.end(), [](const Bag& a, const Bag& b) { return a.id < b.id; });
  return subset;
}

}  // namespace milgrad
