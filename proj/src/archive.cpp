#include "milgrad/archive.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "milgrad/container.hpp"
#include "milgrad/json_util.hpp"
#include "milgrad/serialize.hpp"

namespace milgrad {

namespace {

constexpr const char* kRunFormat = "milgrad-run/1";

Matrix to_column(const Vector& v) { return v; }

Vector matrix_to_vector(const Matrix& m, const char* what) {
  if (m.cols() != 1) {
    throw std::runtime_error(std::string("checkpoint field '") + what + "' is not a column");
  }
  return m.col(0);
}

std::string checkpoint_file_name(std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%05llu.mgck", static_cast<unsigned long long>(index));
  return buf;
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["feature_dim"] = c.feature_dim;
  j["encoder_hidden"] = c.encoder_hidden;
  j["embed_dim"] = c.embed_dim;
  j["attention_dim"] = c.attention_dim;
  j["head_hidden"] = c.head_hidden;
  j["activation"] = activation_name(c.activation);
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& section) {
  JsonSection s(j, section);
  ModelConfig c;
  c.feature_dim = s.integer("feature_dim", c.feature_dim);
  c.encoder_hidden = s.integer("encoder_hidden", c.encoder_hidden);
  c.embed_dim = s.integer("embed_dim", c.embed_dim);
  c.attention_dim = s.integer("attention_dim", c.attention_dim);
  c.head_hidden = s.integer("head_hidden", c.head_hidden);
  c.activation = parse_activation(s.text("activation", activation_name(c.activation)));
  s.done();
  c.validate();
  return c;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["learning_rate"] = c.learning_rate;
  j["weight_decay"] = c.weight_decay;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["epsilon"] = c.epsilon;
  j["checkpoint_cadence"] = c.checkpoint_cadence;
  j["seed"] = c.seed;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& section,
                                   bool allow_seed) {
  JsonSection s(j, section);
  TrainConfig c;
  c.learning_rate = s.number("learning_rate", c.learning_rate);
  c.weight_decay = s.number("weight_decay", c.weight_decay);
  c.batch_size = static_cast<int>(s.integer("batch_size", c.batch_size));
  c.epochs = static_cast<int>(s.integer("epochs", c.epochs));
  c.beta1 = s.number("beta1", c.beta1);
  c.beta2 = s.number("beta2", c.beta2);
  c.epsilon = s.number("epsilon", c.epsilon);
  c.checkpoint_cadence = static_cast<int>(s.integer("checkpoint_cadence", c.checkpoint_cadence));
  if (allow_seed) {
    c.seed = s.uinteger("seed", c.seed);
  }
  s.done();
  c.validate();
  return c;
}

std::string checkpoint_to_bytes(const CheckpointRecord& record) {
  io::RecordWriter w;
  w.string("kind", "milgrad-checkpoint");
  w.u64("index", record.index);
  w.u64("step", record.step);
  w.u64("epoch", record.epoch);
  w.f64("eta", record.eta);
  w.matrix("params", to_column(record.params));
  w.matrix("m", to_column(record.m));
  w.matrix("v", to_column(record.v));
  w.u64("membership_count", record.membership.size());
  for (std::size_t i = 0; i < record.membership.size(); ++i) {
    const auto& entry = record.membership[i];
    const std::string prefix = "membership." + std::to_string(i);
    w.u64(prefix + ".step", entry.step);
    w.u32_array(prefix + ".bags", entry.bag_ids);
  }
  return w.finish();
}

CheckpointRecord checkpoint_from_bytes(const std::string& bytes, const std::string& origin) {
  const auto r = io::RecordReader::from_bytes(bytes, origin);
  if (r.string("kind") != "milgrad-checkpoint") {
    throw std::runtime_error("not a checkpoint container: " + origin);
  }
  CheckpointRecord record;
  record.index = r.u64("index");
  record.step = r.u64("step");
  record.epoch = r.u64("epoch");
  record.eta = r.f64("eta");
  record.params = matrix_to_vector(r.matrix("params"), "params");
  record.m = matrix_to_vector(r.matrix("m"), "m");
  record.v = matrix_to_vector(r.matrix("v"), "v");
  const auto count = r.u64("membership_count");
  record.membership.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string prefix = "membership." + std::to_string(i);
    MembershipEntry entry;
    entry.step = r.u64(prefix + ".step");
    entry.bag_ids = r.u32_array(prefix + ".bags");
    record.membership.push_back(std::move(entry));
  }
  return record;
}

std::string manifest_to_json_text(const RunManifest& manifest) {
  nlohmann::json j;
  j["format"] = kRunFormat;
  j["model"] = model_config_to_json(manifest.model);
  j["train"] = train_config_to_json(manifest.train);
  j["config_hash"] = manifest.config_hash;
  j["dataset_fingerprint"] = manifest.dataset_fingerprint;
  j["checkpoint_files"] = manifest.checkpoint_files;
  nlohmann::json metrics = nlohmann::json::array();
  for (const auto& em : manifest.epoch_metrics) {
    metrics.push_back({{"epoch", em.epoch}, {"train_loss", em.train_loss}, {"val_auc", em.val_auc}});
  }
  j["epoch_metrics"] = metrics;
  j["best_checkpoint_index"] = manifest.best_checkpoint_index;
  return j.dump(2) + "\n";
}

RunManifest manifest_from_json_text(const std::string& text, const std::string& origin) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("malformed manifest " + origin + ": " + e.what());
  }
  JsonSection s(j, "manifest");
  const std::string format = s.required_text("format");
  if (format != kRunFormat) {
    throw std::runtime_error("unsupported run manifest format '" + format + "' in " + origin);
  }
  RunManifest manifest;
  manifest.model = model_config_from_json(s.object("model"), "model");
  manifest.train = train_config_from_json(s.object("train"), "train");
  manifest.config_hash = s.required_text("config_hash");
  manifest.dataset_fingerprint = s.required_text("dataset_fingerprint");
  for (const auto& f : s.array("checkpoint_files")) {
    manifest.checkpoint_files.push_back(f.get<std::string>());
  }
  for (const auto& em : s.array("epoch_metrics")) {
    JsonSection es(em, "epoch_metrics[]");
    EpochMetrics metrics;
    metrics.epoch = es.required_uinteger("epoch");
    metrics.train_loss = es.number("train_loss", 0.0);
    metrics.val_auc = es.number("val_auc", 0.0);
    es.done();
    manifest.epoch_metrics.push_back(metrics);
  }
  manifest.best_checkpoint_index = s.required_uinteger("best_checkpoint_index");
  s.done();
  return manifest;
}

void write_run_archive(const std::filesystem::path& dir, const RunManifest& manifest,
                       const std::vector<CheckpointRecord>& records) {
  if (records.size() != manifest.checkpoint_files.size()) {
    throw std::runtime_error("manifest checkpoint list does not match records");
  }
  std::filesystem::create_directories(dir / "checkpoints");
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto path = dir / "checkpoints" / manifest.checkpoint_files[i];
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw std::runtime_error("cannot write checkpoint: " + path.string());
    }
    const std::string bytes = checkpoint_to_bytes(records[i]);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write manifest in " + dir.string());
  }
  out << manifest_to_json_text(manifest);
}

RunArchive RunArchive::from_parts(RunManifest manifest, std::vector<CheckpointRecord> records) {
  RunArchive archive;
  archive.manifest_ = std::move(manifest);
  archive.records_ = std::move(records);
  return archive;
}

RunArchive RunArchive::load(const std::filesystem::path& dir) {
  RunArchive archive;
  archive.dir_ = dir;
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  if (!in) {
    throw ConfigError("no run manifest in " + dir.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  archive.manifest_ = manifest_from_json_text(buf.str(), (dir / "manifest.json").string());
  for (const auto& file : archive.manifest_.checkpoint_files) {
    const auto path = dir / "checkpoints" / file;
    std::ifstream ck(path, std::ios::binary);
    if (!ck) {
      throw std::runtime_error("missing checkpoint file: " + path.string());
    }
    std::ostringstream cbuf;
    cbuf << ck.rdbuf();
    archive.records_.push_back(checkpoint_from_bytes(cbuf.str(), path.string()));
  }
  for (std::size_t i = 1; i < archive.records_.size(); ++i) {
    if (archive.records_[i].step <= archive.records_[i - 1].step) {
      throw std::runtime_error("checkpoint steps not strictly increasing in " + dir.string());
    }
  }
  return archive;
}

const CheckpointRecord& RunArchive::best_checkpoint() const {
  for (const auto& r : records_) {
    if (r.index == manifest_.best_checkpoint_index) {
      return r;
    }
  }
  throw std::runtime_error("best checkpoint index " +
                           std::to_string(manifest_.best_checkpoint_index) + " not in archive");
}

ModelParams RunArchive::params_at(const CheckpointRecord& record) const {
  return ModelParams::from_flat(manifest_.model, record.params);
}

std::string make_checkpoint_file_name(std::uint64_t index) { return checkpoint_file_name(index); }

}  // namespace milgrad
