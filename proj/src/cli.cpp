#include "milgrad/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "milgrad/config.hpp"
#include "milgrad/metrics.hpp"
#include "milgrad/prune.hpp"
#include "milgrad/sha256.hpp"
#include "milgrad/serialize.hpp"
#include "milgrad/train.hpp"

namespace milgrad {

namespace {

namespace fs = std::filesystem;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed_override;
};

ExperimentConfig load_config(const CommonArgs& args) {
  ExperimentConfig config = ExperimentConfig::load(args.config_path);
  if (args.seed_override) {
    config.seed = *args.seed_override;
  }
  return config;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << text;
}

void write_command_manifest(const fs::path& out_dir, const std::string& command,
                            nlohmann::json inputs, nlohmann::json outputs) {
  nlohmann::json j;
  j["format"] = "milgrad-command/1";
  j["command"] = command;
  j["inputs"] = std::move(inputs);
  j["outputs"] = std::move(outputs);
  write_text(out_dir / (command + "_manifest.json"), j.dump(2) + "\n");
}

int predicted_class(const Vector& probabilities) {
  int predicted = 0;
  for (int c = 1; c < kNumClasses; ++c) {
    if (probabilities(c) > probabilities(predicted)) {
      predicted = c;
    }
  }
  return predicted;
}

std::size_t count_present_instances(std::span<const Bag> bags) {
  std::size_t total = 0;
  for (const Bag& b : bags) {
    total += static_cast<std::size_t>(b.num_present());
  }
  return total;
}

int cmd_synth(const CommonArgs& args) {
  const ExperimentConfig config = load_config(args);
  const SynthDataset dataset = synthesize(config.resolved_synth());
  fs::create_directories(args.out_dir);
  const std::string fingerprint = write_dataset(args.out_dir, dataset, config.hash());
  write_command_manifest(args.out_dir, "synth",
                         {{"config_hash", config.hash()}},
                         {{"dataset_fingerprint", fingerprint}});
  std::printf("dataset fingerprint %s\n", fingerprint.c_str());
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& data_dir) {
  const ExperimentConfig config = load_config(args);
  const SynthDataset dataset = load_dataset(data_dir);
  if (dataset.config.feature_dim != config.model.feature_dim) {
    throw ConfigError("model.feature_dim = " + std::to_string(config.model.feature_dim) +
                      " does not match dataset feature_dim = " +
                      std::to_string(dataset.config.feature_dim));
  }
  const std::vector<Bag> train_bags = dataset.split_bags(Split::kTrain);
  const std::vector<Bag> val_bags = dataset.split_bags(Split::kVal);
  const std::string fingerprint = dataset_fingerprint(dataset);

  const TrainResult result = train(config.resolved_train(), config.model, train_bags, val_bags,
                                   fingerprint, config.hash());
  fs::create_directories(args.out_dir);
  write_run_archive(args.out_dir, result.manifest, result.checkpoints);
  write_command_manifest(args.out_dir, "train",
                         {{"config_hash", config.hash()}, {"dataset_fingerprint", fingerprint}},
                         {{"checkpoints", result.manifest.checkpoint_files.size()},
                          {"best_checkpoint_index", result.manifest.best_checkpoint_index}});

  double best_auc = 0.0;
  std::uint64_t best_epoch = 0;
  for (const auto& r : result.checkpoints) {
    if (r.index == result.manifest.best_checkpoint_index) {
      best_epoch = r.epoch;
    }
  }
  for (const auto& em : result.manifest.epoch_metrics) {
    if (em.epoch == best_epoch) {
      best_auc = em.val_auc;
    }
  }
  std::printf("best epoch %llu validation micro-AUC %.4f\n",
              static_cast<unsigned long long>(best_epoch), best_auc);
  return 0;
}

int cmd_attribute(const CommonArgs& args, const std::string& archive_dir,
                  const std::string& data_dir, const std::optional<std::string>& variant,
                  const std::optional<int>& k, const std::optional<std::string>& mode) {
  ExperimentConfig config = load_config(args);
  if (variant) {
    config.influence.variant = parse_variant(*variant);
    config.prune.variant = config.influence.variant;
  }
  if (k) {
    if (*k < 1) {
      throw ConfigError("--k must be >= 1");
    }
    config.prune.k = *k;
  }
  if (mode) {
    config.influence.mode = parse_checkpoint_mode(*mode);
    config.prune.checkpoint_mode = config.influence.mode;
  }

  const RunArchive archive = RunArchive::load(archive_dir);
  const SynthDataset dataset = load_dataset(data_dir);
  const ModelParams params = archive.best_params();
  const std::vector<Bag> val_bags = dataset.split_bags(Split::kVal);
  const std::vector<Bag> train_bags = dataset.split_bags(Split::kTrain);
  const std::size_t total_instances = count_present_instances(train_bags);

  fs::create_directories(args.out_dir);
  const std::vector<std::uint32_t> misclassified = find_misclassified(params, val_bags);
  nlohmann::json inputs = {
      {"config_hash", config.hash()},
      {"archive_manifest_sha256", sha256_file_hex(fs::path(archive_dir) / "manifest.json")},
      {"dataset_fingerprint", dataset_fingerprint(dataset)},
      {"variant", variant_name(config.influence.variant)},
      {"checkpoint_mode", checkpoint_mode_name(config.influence.mode)},
      {"k", config.prune.k}};

  if (misclassified.empty()) {
    write_removal_set(fs::path(args.out_dir) / "flagged.tsv", {});
    write_command_manifest(args.out_dir, "attribute", inputs,
                           {{"misclassified", 0}, {"flagged_union", 0}});
    std::printf("nothing to prune: no misclassified validation visits\n");
    return 0;
  }

  const std::vector<Bag> targets = build_targets(params, misclassified, val_bags);
  std::vector<Bag> candidates;
  for (const Bag& bag : train_bags) {
    for (Index i = 0; i < bag.num_instances(); ++i) {
      if (bag.is_present(i)) {
        candidates.push_back(as_singleton_bag(bag, i));
      }
    }
  }

  const InfluenceTable table = influence_table(archive, targets, candidates, config.influence);
  const RemovalSelection selection = flag_removals(table, config.prune.k, config.prune.ranking);
  for (const auto& warning : selection.warnings) {
    std::fprintf(stderr, "warning: %s\n", warning.c_str());
  }

  write_influence_table(fs::path(args.out_dir) / "influence_table.tsv", table);
  write_removal_set(fs::path(args.out_dir) / "flagged.tsv", selection.removed);

  nlohmann::json target_ids = nlohmann::json::array();
  for (const auto& t : table.targets) {
    target_ids.push_back(to_string(t));
  }
  write_command_manifest(args.out_dir, "attribute", inputs,
                         {{"misclassified", misclassified.size()},
                          {"targets", target_ids},
                          {"flagged_union", selection.removed.size()},
                          {"total_training_instances", total_instances}});

  std::printf("flagged %s\n",
              format_removal(selection.removed.size(), total_instances).c_str());
  return 0;
}

int cmd_prune_retrain(const CommonArgs& args, const std::string& archive_dir,
                      const std::string& data_dir, const std::string& flagged_path) {
  const ExperimentConfig config = load_config(args);
  const RunArchive baseline = RunArchive::load(archive_dir);
  const SynthDataset dataset = load_dataset(data_dir);
  const std::vector<Bag> train_bags = dataset.split_bags(Split::kTrain);
  const std::vector<Bag> val_bags = dataset.split_bags(Split::kVal);
  const std::vector<Bag> test_bags = dataset.split_bags(Split::kTest);
  const std::vector<InstanceId> removed = read_removal_set(flagged_path);

  for (const InstanceId& id : removed) {
    bool found = false;
    for (const Bag& bag : train_bags) {
      if (bag.id == id.bag && static_cast<Index>(id.index) < bag.num_instances()) {
        found = true;
        break;
      }
    }
    if (!found) {
      throw ConfigError("flagged instance " + to_string(id) + " is not in the training split");
    }
  }

  const RetrainResult retrained = retrain_without(
      train_bags, val_bags, removed, baseline.manifest().train, baseline.manifest().model,
      config.prune.seed_policy, baseline.manifest().dataset_fingerprint, config.hash());
  for (const auto& warning : retrained.warnings) {
    std::fprintf(stderr, "warning: %s\n", warning.c_str());
  }

  fs::create_directories(args.out_dir);
  const fs::path run_dir = fs::path(args.out_dir) / "run";
  write_run_archive(run_dir, retrained.run.manifest, retrained.run.checkpoints);

  const std::size_t total_instances = count_present_instances(train_bags);
  const EvaluatedRun base_eval =
      evaluate_run(baseline.best_params(), test_bags, "baseline", 0, total_instances);
  const EvaluatedRun pruned_eval = evaluate_run(retrained.run.best_params, test_bags, "pruned",
                                                removed.size(), total_instances);

  // The flagged set arrives as a file; how it was selected (its k, targets)
  // lives in the attribute manifest, not here.
  RemovalSelection selection;
  selection.removed = removed;
  const PruneReport report = compare_report(base_eval, {pruned_eval}, selection,
                                            /*misclassified_count=*/0, /*k=*/0, total_instances);
  write_text(fs::path(args.out_dir) / "prune_report.txt", render_report_table(report));
  write_text(fs::path(args.out_dir) / "prune_report.json", report_to_json_text(report));
  write_command_manifest(
      args.out_dir, "prune-retrain",
      {{"config_hash", config.hash()},
       {"baseline_manifest_sha256", sha256_file_hex(fs::path(archive_dir) / "manifest.json")},
       {"dataset_fingerprint", dataset_fingerprint(dataset)},
       {"flagged_sha256", sha256_file_hex(flagged_path)}},
      {{"removed", removed.size()},
       {"effective_fingerprint", retrained.effective_fingerprint},
       {"dropped_bags", retrained.warnings.size()}});

  std::printf("%s", render_report_table(report).c_str());
  return 0;
}

int cmd_audit_labels(const CommonArgs& args, const std::string& archive_dir,
                     const std::string& data_dir, std::size_t subset_size,
                     const std::optional<std::string>& variant,
                     const std::optional<std::string>& mode) {
  ExperimentConfig config = load_config(args);
  if (variant) {
    config.influence.variant = parse_variant(*variant);
  }
  if (mode) {
    config.influence.mode = parse_checkpoint_mode(*mode);
  }
  const RunArchive archive = RunArchive::load(archive_dir);
  const SynthDataset dataset = load_dataset(data_dir);
  std::vector<Bag> audited = dataset.split_bags(Split::kTrain);
  for (const Bag& bag : audited) {
    if (!bag.reader2_label) {
      throw std::runtime_error("audit: bag " + std::to_string(bag.id) +
                               " has no reader-2 label");
    }
  }
  if (subset_size > 0 && subset_size < audited.size()) {
    audited = stratified_audit_subset(audited, subset_size,
                                      Rng::substream(config.seed, "audit").next_u64());
  }

  const AuditResult result = simulate_dual_reader_audit(audited, archive, config.influence);
  fs::create_directories(args.out_dir);
  write_ranking(fs::path(args.out_dir) / "self_influence_ranking.tsv", result.scores,
                result.ranked, config.influence.variant);
  write_detection_curve(fs::path(args.out_dir) / "detection_curve.tsv", result.curve);

  const double recall = recall_at_fraction(result.curve, config.metrics.audit_recall_fraction);
  write_command_manifest(
      args.out_dir, "audit-labels",
      {{"config_hash", config.hash()},
       {"archive_manifest_sha256", sha256_file_hex(fs::path(archive_dir) / "manifest.json")},
       {"dataset_fingerprint", dataset_fingerprint(dataset)},
       {"subset", audited.size()}},
      {{"flagged", result.flagged_count},
       {"recall_fraction", config.metrics.audit_recall_fraction},
       {"recall", recall}});
  std::printf("audited %zu bags, %zu disagreements, recall@%.2f = %.4f\n", audited.size(),
              result.flagged_count, config.metrics.audit_recall_fraction, recall);
  return 0;
}

int cmd_report(const CommonArgs& args, const std::string& baseline_dir,
               const std::vector<std::string>& pruned_dirs, const std::string& data_dir,
               const std::string& out_file) {
  const ExperimentConfig config = load_config(args);
  const RunArchive baseline = RunArchive::load(baseline_dir);
  const SynthDataset dataset = load_dataset(data_dir);
  const std::vector<Bag> test_bags = dataset.split_bags(Split::kTest);
  const std::size_t total_instances =
      count_present_instances(dataset.split_bags(Split::kTrain));

  const EvaluatedRun base_eval =
      evaluate_run(baseline.best_params(), test_bags, "baseline", 0, total_instances);
  std::vector<EvaluatedRun> rows;
  nlohmann::json input_hashes = nlohmann::json::array();
  int k_seen = 0;
  std::size_t union_seen = 0;
  for (const auto& dir : pruned_dirs) {
    const RunArchive pruned = RunArchive::load(fs::path(dir) / "run");
    std::ifstream rj(fs::path(dir) / "prune_report.json", std::ios::binary);
    std::size_t removed_count = 0;
    std::string tag = "pruned";
    if (rj) {
      std::ostringstream buf;
      buf << rj.rdbuf();
      const auto j = nlohmann::json::parse(buf.str());
      removed_count = j.value("union_size", std::size_t{0});
      k_seen = j.value("k", 0);
      union_seen = removed_count;
      if (k_seen > 0) {
        tag = "top-" + std::to_string(k_seen) + " removed";
      }
    }
    rows.push_back(
        evaluate_run(pruned.best_params(), test_bags, tag, removed_count, total_instances));
    input_hashes.push_back(sha256_file_hex(fs::path(dir) / "run" / "manifest.json"));
  }

  RemovalSelection selection;
  PruneReport report = compare_report(base_eval, rows, selection, 0, k_seen, total_instances);
  report.union_size = union_seen;
  const std::string text = render_report_table(report);
  write_text(out_file, text);
  std::printf("%s", text.c_str());
  write_command_manifest(
      fs::path(out_file).parent_path(), "report",
      {{"config_hash", config.hash()},
       {"baseline_manifest_sha256", sha256_file_hex(fs::path(baseline_dir) / "manifest.json")},
       {"pruned_manifests_sha256", input_hashes},
       {"dataset_fingerprint", dataset_fingerprint(dataset)}},
      {{"report", out_file}});
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"training-data attribution toolkit for attention-MIL bag classifiers"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string data_dir;
  std::string archive_dir;
  std::string flagged_path;
  std::string baseline_dir;
  std::string out_file;
  std::vector<std::string> pruned_dirs;
  std::string variant_value;
  int k_value = 0;
  std::string mode_value;
  std::uint64_t seed_value = 0;
  std::size_t subset_size = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "experiment config (JSON)")->required();
    sub->add_option("--out", common.out_dir, "output directory")->required();
    sub->add_option("--seed", seed_value, "override the config seed");
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic bag dataset");
  add_common(synth);

  CLI::App* train_cmd = app.add_subcommand("train", "train and checkpoint an attention-MIL run");
  add_common(train_cmd);
  train_cmd->add_option("--data", data_dir, "dataset directory")->required();

  CLI::App* attribute =
      app.add_subcommand("attribute", "trace influence of training instances on misclassified "
                                      "validation visits and flag removals");
  add_common(attribute);
  attribute->add_option("--archive", archive_dir, "baseline run directory")->required();
  attribute->add_option("--data", data_dir, "dataset directory")->required();
  attribute->add_option("--variant", variant_value,
                        "influence variant (literal, update_dot, preconditioned_ip)");
  attribute->add_option("--k", k_value, "instances to flag per target");
  attribute->add_option("--checkpoint-mode", mode_value,
                        "checkpoint inclusion (strict, tracincp)");

  CLI::App* prune_retrain =
      app.add_subcommand("prune-retrain", "retrain with flagged instances masked out and compare");
  add_common(prune_retrain);
  prune_retrain->add_option("--archive", archive_dir, "baseline run directory")->required();
  prune_retrain->add_option("--data", data_dir, "dataset directory")->required();
  prune_retrain->add_option("--flagged", flagged_path, "flagged removal set file")->required();

  CLI::App* audit =
      app.add_subcommand("audit-labels", "rank bags by self-influence against reader disagreement");
  add_common(audit);
  audit->add_option("--archive", archive_dir, "run directory")->required();
  audit->add_option("--data", data_dir, "dataset directory")->required();
  audit->add_option("--subset", subset_size, "stratified audit subset size (0 = all)");
  audit->add_option("--variant", variant_value,
                    "influence variant (literal, update_dot, preconditioned_ip)");
  audit->add_option("--checkpoint-mode", mode_value, "checkpoint inclusion (strict, tracincp)");

  CLI::App* report = app.add_subcommand("report", "render a comparison table over finished runs");
  report->add_option("--config", common.config_path, "experiment config (JSON)")->required();
  report->add_option("--baseline", baseline_dir, "baseline run directory")->required();
  report->add_option("--pruned", pruned_dirs, "prune-retrain output directories");
  report->add_option("--data", data_dir, "dataset directory")->required();
  report->add_option("--out", out_file, "report text file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const CLI::App* active = app.get_subcommands().front();
  const CLI::Option* seed_opt = active->get_option_no_throw("--seed");
  if (seed_opt != nullptr && seed_opt->count() > 0) {
    common.seed_override = seed_value;
  }
  std::optional<std::string> variant;
  std::optional<int> k;
  std::optional<std::string> checkpoint_mode;
  for (const CLI::App* sub : {attribute, audit}) {
    if (!sub->parsed()) {
      continue;
    }
    if (sub->count("--variant") > 0) {
      variant = variant_value;
    }
    if (sub->get_option_no_throw("--k") != nullptr && sub->count("--k") > 0) {
      k = k_value;
    }
    if (sub->count("--checkpoint-mode") > 0) {
      checkpoint_mode = mode_value;
    }
  }

  try {
    if (synth->parsed()) {
      return cmd_synth(common);
    }
    if (train_cmd->parsed()) {
      return cmd_train(common, data_dir);
    }
    if (attribute->parsed()) {
      return cmd_attribute(common, archive_dir, data_dir, variant, k, checkpoint_mode);
    }
    if (prune_retrain->parsed()) {
      return cmd_prune_retrain(common, archive_dir, data_dir, flagged_path);
    }
    if (audit->parsed()) {
      return cmd_audit_labels(common, archive_dir, data_dir, subset_size, variant,
                              checkpoint_mode);
    }
    if (report->parsed()) {
      return cmd_report(common, baseline_dir, pruned_dirs, data_dir, out_file);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}

}  // namespace milgrad
