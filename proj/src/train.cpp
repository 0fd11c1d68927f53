#include "milgrad/train.hpp"

#include <algorithm>
#include <cstring>
#include <map>
#include <stdexcept>

#include "milgrad/metrics.hpp"

namespace milgrad {

namespace {

std::array<std::size_t, kNumClasses> class_counts(std::span<const int> labels) {
  std::array<std::size_t, kNumClasses> counts{};
  for (int l : labels) {
    if (l < 0 || l >= kNumClasses) {
      throw std::runtime_error("weighted_sampler: label out of range");
    }
    ++counts[static_cast<std::size_t>(l)];
  }
  return counts;
}

double evaluate_val_auc(const ModelParams& params, std::span<const Bag> val_bags) {
  std::vector<Vector> probs;
  std::vector<int> labels;
  probs.reserve(val_bags.size());
  labels.reserve(val_bags.size());
  for (const Bag& bag : val_bags) {
    probs.push_back(classify_bag(params, bag).probabilities);
    labels.push_back(bag.reader1_label);
  }
  return micro_auc(probs, labels);
}

bool bits_equal(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) {
    return false;
  }
  return std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

}  // namespace

std::vector<std::size_t> weighted_sampler(std::span<const int> labels, Rng& rng) {
  if (labels.empty()) {
    throw std::runtime_error("weighted_sampler: no bags");
  }
  // Weights are per class actually present in the labels; a class absent from
  // the dataset takes no part (a single-class dataset is fine). Zero counts
  // cannot reach the division below.
  const auto counts = class_counts(labels);
  std::vector<double> cumulative(labels.size());
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto count = counts[static_cast<std::size_t>(labels[i])];
    if (count == 0) {
      throw std::runtime_error(std::string("weighted_sampler: class '") +
                               class_name(labels[i]) + "' has zero bags");
    }
    total += 1.0 / static_cast<double>(count);
    cumulative[i] = total;
  }
  std::vector<std::size_t> schedule(labels.size());
  for (auto& slot : schedule) {
    const double u = rng.uniform() * total;
    slot = static_cast<std::size_t>(
        std::distance(cumulative.begin(),
                      std::upper_bound(cumulative.begin(), cumulative.end(), u)));
    if (slot >= labels.size()) {
      slot = labels.size() - 1;
    }
  }
  return schedule;
}

std::vector<std::size_t> weighted_sampler(std::span<const int> labels, std::uint64_t seed) {
  Rng rng(seed);
  return weighted_sampler(labels, rng);
}

double apply_train_step(Vector& params, AdamState& state, const ModelConfig& model_config,
                        std::span<const Bag* const> batch, const TrainConfig& config) {
  if (batch.empty()) {
    throw std::runtime_error("apply_train_step: empty batch");
  }
  const ModelParams unflat = ModelParams::from_flat(model_config, params);
  Vector grad_sum = Vector::Zero(params.size());
  double loss_sum = 0.0;
  for (const Bag* bag : batch) {
    const LossAndGrad lg = bag_loss_and_grad(unflat, *bag, bag->reader1_label);
    grad_sum += lg.grad.values;
    loss_sum += lg.loss;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  const Vector mean_grad = grad_sum * inv;
  adam_step(params, state, mean_grad, config);
  return loss_sum * inv;
}

TrainResult train(const TrainConfig& config, const ModelConfig& model_config,
                  std::span<const Bag> train_bags, std::span<const Bag> val_bags,
                  const std::string& dataset_fingerprint, const std::string& config_hash) {
  config.validate();
  model_config.validate();
  if (train_bags.empty() || val_bags.empty()) {
    throw std::runtime_error("train: empty split");
  }

  std::vector<int> labels;
  labels.reserve(train_bags.size());
  for (const Bag& b : train_bags) {
    labels.push_back(b.reader1_label);
  }

  Rng init_rng = Rng::substream(config.seed, "init");
  const ModelParams initial = init_model_params(model_config, init_rng);
  Vector params = initial.to_flat();
  AdamState state = AdamState::zeros(params.size(), config.learning_rate);

  TrainResult result;
  result.manifest.model = model_config;
  result.manifest.train = config;
  result.manifest.config_hash = config_hash;
  result.manifest.dataset_fingerprint = dataset_fingerprint;

  auto store_checkpoint = [&](std::uint64_t epoch, std::vector<MembershipEntry> membership) {
    CheckpointRecord record;
    record.index = result.checkpoints.size();
    record.step = state.step;
    record.epoch = epoch;
    record.eta = state.eta;
    record.params = params;
    record.m = state.m;
    record.v = state.v;
    record.membership = std::move(membership);
    result.manifest.checkpoint_files.push_back(make_checkpoint_file_name(record.index));
    result.checkpoints.push_back(std::move(record));
  };

  store_checkpoint(0, {});  // initialization state

  std::vector<MembershipEntry> pending_membership;
  double best_auc = -1.0;
  std::uint64_t best_index = 0;
  Vector best_params = params;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng sampler_rng = Rng::substream(config.seed, "sampler", static_cast<std::uint64_t>(epoch));
    const std::vector<std::size_t> schedule = weighted_sampler(labels, sampler_rng);

    double epoch_loss = 0.0;
    std::size_t steps_this_epoch = 0;
    for (std::size_t at = 0; at < schedule.size(); at += config.batch_size) {
      const std::size_t end = std::min(schedule.size(), at + config.batch_size);
      std::vector<const Bag*> batch;
      MembershipEntry entry;
      entry.step = state.step + 1;
      for (std::size_t i = at; i < end; ++i) {
        batch.push_back(&train_bags[schedule[i]]);
        entry.bag_ids.push_back(train_bags[schedule[i]].id);
      }
      double loss = 0.0;
      try {
        loss = apply_train_step(params, state, model_config, batch, config);
      } catch (const std::exception& e) {
        throw std::runtime_error("training diverged at step " + std::to_string(entry.step) + ": " +
                                 e.what());
      }
      if (!std::isfinite(loss)) {
        throw std::runtime_error("training diverged at step " + std::to_string(entry.step) +
                                 ": non-finite loss");
      }
      pending_membership.push_back(std::move(entry));
      epoch_loss += loss;
      ++steps_this_epoch;
    }

    const ModelParams current = ModelParams::from_flat(model_config, params);
    const double val_auc = evaluate_val_auc(current, val_bags);
    result.manifest.epoch_metrics.push_back(EpochMetrics{
        static_cast<std::uint64_t>(epoch), epoch_loss / static_cast<double>(steps_this_epoch),
        val_auc});

    const bool cadence_hit = epoch % config.checkpoint_cadence == 0;
    const bool final_epoch = epoch == config.epochs;
    if (cadence_hit || final_epoch) {
      store_checkpoint(static_cast<std::uint64_t>(epoch), std::move(pending_membership));
      pending_membership.clear();
      if (val_auc > best_auc) {
        best_auc = val_auc;
        best_index = result.checkpoints.back().index;
        best_params = params;
      }
    }
  }

  result.manifest.best_checkpoint_index = best_index;
  result.best_params = ModelParams::from_flat(model_config, best_params);
  return result;
}

bool replay_verify(const RunArchive& archive, std::span<const Bag> train_bags) {
  const auto& records = archive.checkpoints();
  if (records.empty()) {
    throw std::runtime_error("replay_verify: empty archive");
  }
  std::map<std::uint32_t, const Bag*> by_id;
  for (const Bag& b : train_bags) {
    by_id[b.id] = &b;
  }
  const ModelConfig& model_config = archive.manifest().model;
  const TrainConfig& config = archive.manifest().train;

  for (std::size_t i = 1; i < records.size(); ++i) {
    const CheckpointRecord& from = records[i - 1];
    const CheckpointRecord& to = records[i];

    std::uint64_t expected_step = from.step + 1;
    for (const auto& entry : to.membership) {
      if (entry.step != expected_step) {
        throw std::runtime_error("replay_verify: missing membership entry for step " +
                                 std::to_string(expected_step));
      }
      ++expected_step;
    }
    if (expected_step != to.step + 1) {
      throw std::runtime_error("replay_verify: membership log ends at step " +
                               std::to_string(expected_step - 1) + " but checkpoint is at step " +
                               std::to_string(to.step));
    }

    Vector params = from.params;
    AdamState state;
    state.step = from.step;
    state.m = from.m;
    state.v = from.v;
    state.eta = from.eta;

    for (const auto& entry : to.membership) {
      std::vector<const Bag*> batch;
      batch.reserve(entry.bag_ids.size());
      for (std::uint32_t id : entry.bag_ids) {
        const auto it = by_id.find(id);
        if (it == by_id.end()) {
          throw std::runtime_error("replay_verify: bag " + std::to_string(id) +
                                   " from membership log not in dataset");
        }
        batch.push_back(it->second);
      }
      apply_train_step(params, state, model_config, batch, config);
    }

    if (!bits_equal(params, to.params) || !bits_equal(state.m, to.m) ||
        !bits_equal(state.v, to.v)) {
      return false;
    }
  }
  return true;
}

}  // namespace milgrad
