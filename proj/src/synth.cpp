#include "milgrad/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "milgrad/container.hpp"
#include "milgrad/json_util.hpp"
#include "milgrad/rng.hpp"
#include "milgrad/serialize.hpp"
#include "milgrad/sha256.hpp"

namespace milgrad {

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "?";
}

void SynthConfig::validate() const {
  if (bag_count < 1) {
    throw ConfigError("bag_count must be >= 1");
  }
  if (instances_per_bag < 1) {
    throw ConfigError("instances_per_bag must be >= 1");
  }
  if (feature_dim < 3) {
    throw ConfigError("feature_dim must be >= 3 (marker, severity and spurious dimensions)");
  }
  if (signal_instances < 1 || signal_instances > instances_per_bag) {
    throw ConfigError("signal_instances must be in [1, instances_per_bag]");
  }
  if (spurious_rate < 0.0 || spurious_rate > 1.0) {
    throw ConfigError("spurious_rate must be in [0, 1]");
  }
  if (reader2_disagreement_rate < 0.0 || reader2_disagreement_rate > 1.0) {
    throw ConfigError("reader2_disagreement_rate must be in [0, 1]");
  }
  double total = 0.0;
  for (double f : split_fractions) {
    if (f < 0.0) {
      throw ConfigError("split fractions must be >= 0");
    }
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
  double mix = 0.0;
  for (double f : class_mix) {
    if (!(f > 0.0)) {
      throw ConfigError("class_mix entries must be positive");
    }
    mix += f;
  }
  if (std::abs(mix - 1.0) > 1e-9) {
    throw ConfigError("class_mix must sum to 1");
  }
  if (!(background_noise > 0.0)) {
    throw ConfigError("background_noise must be positive");
  }
  if (background_severity_leak < 0.0 || background_severity_leak > 1.0) {
    throw ConfigError("background_severity_leak must be in [0, 1]");
  }
  if (class_margin < 0.0 || class_margin >= 2.0) {
    throw ConfigError("class_margin must be in [0, 2)");
  }
}

int severity_to_class(double score) {
  if (score < 0.0) {
    throw std::runtime_error("severity must be non-negative");
  }
  if (score <= 5.0) {
    return kMild;
  }
  if (score <= 10.0) {
    return kModerate;
  }
  return kSevere;
}

std::vector<Bag> SynthDataset::split_bags(Split s) const {
  std::vector<Bag> out;
  for (const auto& db : bags) {
    if (db.split == s) {
      out.push_back(db.bag);
    }
  }
  return out;
}

std::vector<const DatasetBag*> SynthDataset::split_view(Split s) const {
  std::vector<const DatasetBag*> out;
  for (const auto& db : bags) {
    if (db.split == s) {
      out.push_back(&db);
    }
  }
  return out;
}

namespace {

// Severity ranges per class; severe is capped at 18 (the clinical index runs
// higher, but the upper tail carries no extra structure here).
constexpr double kClassLow[3] = {0.0, 5.0, 10.0};
constexpr double kClassHigh[3] = {5.0, 10.0, 18.0};

double spurious_direction(int label) { return static_cast<double>(label - 1); }

}  // namespace

SynthDataset generate(const SynthConfig& config) {
  config.validate();
  SynthDataset dataset;
  dataset.config = config;
  dataset.bags.reserve(config.bag_count);

  Rng rng = Rng::substream(config.seed, "gen");
  for (std::uint64_t id = 0; id < config.bag_count; ++id) {
    DatasetBag db;
    db.bag.id = static_cast<std::uint32_t>(id);

    // Class from the mixture, then severity uniform inside that class range.
    const double u = rng.uniform();
    int cls = kSevere;
    double acc = 0.0;
    for (int c = 0; c < kNumClasses; ++c) {
      acc += config.class_mix[static_cast<std::size_t>(c)];
      if (u < acc) {
        cls = c;
        break;
      }
    }
    const double margin_low = kClassLow[cls] > 0.0 ? config.class_margin : 0.0;
    const double margin_high = kClassHigh[cls] < 18.0 ? config.class_margin : 0.0;
    const double severity =
        rng.uniform(kClassLow[cls] + margin_low, kClassHigh[cls] - margin_high);
    db.bag.latent_severity = severity;
    db.bag.reader1_label = severity_to_class(severity);
    db.bag.reader2_label = db.bag.reader1_label;

    const Index n = config.instances_per_bag;
    const Index f = config.feature_dim;
    db.bag.features.resize(n, f);
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < f; ++j) {
        db.bag.features(i, j) = config.background_noise * rng.normal();
      }
    }
    const auto chosen = rng.sample_without_replacement(
        static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(config.signal_instances));
    for (auto idx : chosen) {
      db.signal_instances.push_back(static_cast<std::uint32_t>(idx));
    }
    std::sort(db.signal_instances.begin(), db.signal_instances.end());

    // Every instance is a view of the visit's severity: dimension 0 carries
    // an observable view-quality marker (strong on signal instances, a weak
    // floor elsewhere, so a lone background instance is still a state the
    // encoder has seen), and dimension 1 carries the severity itself with a
    // view noise matching that quality. Severity is centered and bounded
    // (the analog of input normalization) so feature magnitudes do not grow
    // with the score. The leak factor attenuates how much severity the
    // blurry views retain.
    const double centered = (severity - 9.0) / 9.0;  // roughly [-1, 1]
    for (Index i = 0; i < n; ++i) {
      const bool is_signal =
          std::binary_search(db.signal_instances.begin(), db.signal_instances.end(),
                             static_cast<std::uint32_t>(i));
      const double weight = is_signal ? 1.0 : config.background_severity_leak;
      const double view_sigma = config.background_noise * (is_signal ? 0.25 : 0.5);
      db.bag.features(i, 0) += (is_signal ? 1.0 : 0.3) * config.signal_marker;
      db.bag.features(i, 1) =
          weight * config.severity_scale * centered + view_sigma * rng.normal();
    }
    db.bag.presence.assign(static_cast<std::size_t>(n), std::uint8_t{1});
    dataset.bags.push_back(std::move(db));
  }

  // Bag-level split assignment; instances never cross splits.
  const auto b = config.bag_count;
  const auto n_train = static_cast<std::uint64_t>(std::llround(config.split_fractions[0] * b));
  const auto n_val = static_cast<std::uint64_t>(std::llround(config.split_fractions[1] * b));
  if (n_train + n_val > b) {
    throw ConfigError("split fractions leave no room for the test split");
  }
  std::vector<std::uint64_t> order(b);
  for (std::uint64_t i = 0; i < b; ++i) {
    order[i] = i;
  }
  Rng split_rng = Rng::substream(config.seed, "split");
  split_rng.shuffle(order);
  for (std::uint64_t i = 0; i < b; ++i) {
    Split s = Split::kTest;
    if (i < n_train) {
      s = Split::kTrain;
    } else if (i < n_train + n_val) {
      s = Split::kVal;
    }
    dataset.bags[order[i]].split = s;
  }
  return dataset;
}

void plant_spurious(SynthDataset& dataset, double rate, double strength, std::uint64_t seed) {
  if (rate < 0.0 || rate > 1.0) {
    throw ConfigError("spurious rate must be in [0, 1]");
  }
  for (auto& db : dataset.bags) {
    db.spurious_corrupted = false;
  }
  std::vector<std::size_t> train_positions;
  for (std::size_t i = 0; i < dataset.bags.size(); ++i) {
    if (dataset.bags[i].split == Split::kTrain) {
      train_positions.push_back(i);
    }
  }
  const auto n_corrupt =
      static_cast<std::uint64_t>(std::llround(rate * static_cast<double>(train_positions.size())));
  if (n_corrupt == 0) {
    return;
  }

  Rng rng(seed);
  const Index spur = dataset.config.feature_dim - 1;
  const auto chosen = rng.sample_without_replacement(train_positions.size(), n_corrupt);
  // Per-bag magnitude jitter: the artifact varies in intensity from visit to
  // visit while its sign keeps tracking the label.
  for (auto pick : chosen) {
    DatasetBag& db = dataset.bags[train_positions[pick]];
    db.spurious_corrupted = true;
    const double value =
        spurious_direction(db.bag.reader1_label) * strength * rng.uniform(0.5, 1.5);
    db.bag.features.col(spur).array() += value;
  }
  // Validation/test bags see the same dimension with a label-independent
  // push of the same magnitude profile, so reliance learned from the
  // corrupted bags does not transfer.
  for (auto& db : dataset.bags) {
    if (db.split == Split::kTrain) {
      continue;
    }
    const int fake = static_cast<int>(rng.uniform_index(kNumClasses));
    db.bag.features.col(spur).array() +=
        spurious_direction(fake) * strength * rng.uniform(0.5, 1.5);
  }
}

void simulate_second_reader(SynthDataset& dataset, double rate, std::uint64_t seed) {
  if (rate < 0.0 || rate > 1.0) {
    throw ConfigError("disagreement rate must be in [0, 1]");
  }
  for (auto& db : dataset.bags) {
    db.reader_disagreement = false;
    db.bag.reader2_label = db.bag.reader1_label;
  }
  const auto n_flip =
      static_cast<std::uint64_t>(std::llround(rate * static_cast<double>(dataset.bags.size())));
  if (n_flip == 0) {
    return;
  }
  Rng rng(seed);
  const auto chosen = rng.sample_without_replacement(dataset.bags.size(), n_flip);
  for (auto pick : chosen) {
    DatasetBag& db = dataset.bags[pick];
    const int truth = severity_to_class(db.bag.latent_severity);
    int flipped;
    if (truth == kMild) {
      flipped = kModerate;
    } else if (truth == kSevere) {
      flipped = kModerate;
    } else {
      flipped = rng.uniform() < 0.5 ? kMild : kSevere;
    }
    // Training reads reader 1; the second reader keeps the consistent label,
    // so the disagreement marks a genuinely mislabeled training bag.
    db.bag.reader1_label = flipped;
    db.bag.reader2_label = truth;
    db.reader_disagreement = true;
  }
}

SynthDataset synthesize(const SynthConfig& config) {
  SynthDataset dataset = generate(config);
  simulate_second_reader(dataset, config.reader2_disagreement_rate,
                         Rng::substream(config.seed, "reader2").next_u64());
  plant_spurious(dataset, config.spurious_rate, config.spurious_strength,
                 Rng::substream(config.seed, "spurious").next_u64());
  return dataset;
}

namespace {

constexpr const char* kDatasetFormat = "milgrad-dataset/1";

std::string split_container_bytes(const SynthDataset& dataset, Split s) {
  io::RecordWriter w;
  w.string("kind", "milgrad-dataset-split");
  w.string("split", split_name(s));
  const auto view = dataset.split_view(s);
  w.u64("bag_count", view.size());
  w.u64("feature_dim", static_cast<std::uint64_t>(dataset.config.feature_dim));
  for (std::size_t i = 0; i < view.size(); ++i) {
    const DatasetBag& db = *view[i];
    const std::string p = "bag." + std::to_string(i);
    w.u64(p + ".id", db.bag.id);
    w.u64(p + ".reader1", static_cast<std::uint64_t>(db.bag.reader1_label));
    w.u64(p + ".has_reader2", db.bag.reader2_label.has_value() ? 1 : 0);
    w.u64(p + ".reader2",
          static_cast<std::uint64_t>(db.bag.reader2_label.value_or(0)));
    w.f64(p + ".latent_severity", db.bag.latent_severity);
    w.u64(p + ".spurious_corrupted", db.spurious_corrupted ? 1 : 0);
    w.u64(p + ".reader_disagreement", db.reader_disagreement ? 1 : 0);
    w.u32_array(p + ".signal_instances", db.signal_instances);
    w.u8_array(p + ".presence", db.bag.presence);
    w.matrix(p + ".features", db.bag.features);
  }
  return w.finish();
}

void split_from_container(const std::string& bytes, const std::string& origin, Split s,
                          SynthDataset& dataset) {
  const auto r = io::RecordReader::from_bytes(bytes, origin);
  if (r.string("kind") != "milgrad-dataset-split") {
    throw std::runtime_error("not a dataset split container: " + origin);
  }
  const auto count = r.u64("bag_count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string p = "bag." + std::to_string(i);
    DatasetBag db;
    db.split = s;
    db.bag.id = static_cast<std::uint32_t>(r.u64(p + ".id"));
    db.bag.reader1_label = static_cast<int>(r.u64(p + ".reader1"));
    if (r.u64(p + ".has_reader2") != 0) {
      db.bag.reader2_label = static_cast<int>(r.u64(p + ".reader2"));
    }
    db.bag.latent_severity = r.f64(p + ".latent_severity");
    db.spurious_corrupted = r.u64(p + ".spurious_corrupted") != 0;
    db.reader_disagreement = r.u64(p + ".reader_disagreement") != 0;
    db.signal_instances = r.u32_array(p + ".signal_instances");
    db.bag.presence = r.u8_array(p + ".presence");
    db.bag.features = r.matrix(p + ".features");
    dataset.bags.push_back(std::move(db));
  }
}

nlohmann::json synth_config_to_json_impl(const SynthConfig& c) {
  nlohmann::json j;
  j["bag_count"] = c.bag_count;
  j["instances_per_bag"] = c.instances_per_bag;
  j["feature_dim"] = c.feature_dim;
  j["signal_instances"] = c.signal_instances;
  j["spurious_rate"] = c.spurious_rate;
  j["spurious_strength"] = c.spurious_strength;
  j["reader2_disagreement_rate"] = c.reader2_disagreement_rate;
  j["split_fractions"] = c.split_fractions;
  j["seed"] = c.seed;
  j["background_noise"] = c.background_noise;
  j["signal_marker"] = c.signal_marker;
  j["severity_scale"] = c.severity_scale;
  j["background_severity_leak"] = c.background_severity_leak;
  j["class_margin"] = c.class_margin;
  j["class_mix"] = c.class_mix;
  return j;
}

SynthConfig synth_config_from_json_impl(const nlohmann::json& j, const std::string& section,
                                        bool allow_seed) {
  JsonSection s(j, section);
  SynthConfig c;
  c.bag_count = s.uinteger("bag_count", c.bag_count);
  c.instances_per_bag = s.integer("instances_per_bag", c.instances_per_bag);
  c.feature_dim = s.integer("feature_dim", c.feature_dim);
  c.signal_instances = s.integer("signal_instances", c.signal_instances);
  c.spurious_rate = s.number("spurious_rate", c.spurious_rate);
  c.spurious_strength = s.number("spurious_strength", c.spurious_strength);
  c.reader2_disagreement_rate =
      s.number("reader2_disagreement_rate", c.reader2_disagreement_rate);
  const auto fractions = s.array("split_fractions");
  if (!fractions.empty()) {
    if (fractions.size() != 3) {
      throw ConfigError("key '" + section + ".split_fractions' must have 3 entries");
    }
    for (int i = 0; i < 3; ++i) {
      c.split_fractions[static_cast<std::size_t>(i)] = fractions[i].get<double>();
    }
  }
  if (allow_seed) {
    c.seed = s.uinteger("seed", c.seed);
  }
  c.background_noise = s.number("background_noise", c.background_noise);
  c.signal_marker = s.number("signal_marker", c.signal_marker);
  c.severity_scale = s.number("severity_scale", c.severity_scale);
  c.background_severity_leak = s.number("background_severity_leak", c.background_severity_leak);
  c.class_margin = s.number("class_margin", c.class_margin);
  const auto mix = s.array("class_mix");
  if (!mix.empty()) {
    if (mix.size() != 3) {
      throw ConfigError("key '" + section + ".class_mix' must have 3 entries");
    }
    for (int i = 0; i < 3; ++i) {
      c.class_mix[static_cast<std::size_t>(i)] = mix[i].get<double>();
    }
  }
  s.done();
  c.validate();
  return c;
}

}  // namespace

nlohmann::json synth_config_to_json(const SynthConfig& c) { return synth_config_to_json_impl(c); }

SynthConfig synth_config_from_json(const nlohmann::json& j, const std::string& section,
                                   bool allow_seed) {
  return synth_config_from_json_impl(j, section, allow_seed);
}

std::string dataset_fingerprint(const SynthDataset& dataset) {
  Sha256 h;
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    h.update(split_container_bytes(dataset, s));
  }
  return h.hex_digest();
}

std::string write_dataset(const std::filesystem::path& dir, const SynthDataset& dataset,
                          const std::string& config_hash) {
  std::filesystem::create_directories(dir);
  Sha256 h;
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    const std::string bytes = split_container_bytes(dataset, s);
    h.update(bytes);
    const auto path = dir / (std::string("dataset_") + split_name(s) + ".mgds");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw std::runtime_error("cannot write dataset split: " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  const std::string fingerprint = h.hex_digest();

  nlohmann::json manifest;
  manifest["format"] = kDatasetFormat;
  manifest["synth"] = synth_config_to_json_impl(dataset.config);
  manifest["config_hash"] = config_hash;
  manifest["fingerprint"] = fingerprint;
  nlohmann::json counts;
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    counts[split_name(s)] = dataset.split_view(s).size();
  }
  manifest["counts"] = counts;
  std::ofstream out(dir / "dataset_manifest.json", std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write dataset manifest in " + dir.string());
  }
  out << manifest.dump(2) << "\n";
  return fingerprint;
}

SynthDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "dataset_manifest.json", std::ios::binary);
  if (!in) {
    throw ConfigError("no dataset manifest in " + dir.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("malformed dataset manifest in " + dir.string() + ": " + e.what());
  }
  JsonSection s(manifest, "dataset_manifest");
  if (s.required_text("format") != kDatasetFormat) {
    throw std::runtime_error("unsupported dataset format in " + dir.string());
  }
  SynthDataset dataset;
  dataset.config = synth_config_from_json_impl(s.object("synth"), "synth", true);
  const std::string recorded = s.required_text("fingerprint");
  s.text("config_hash", "");
  s.object("counts");
  s.done();

  for (Split split : {Split::kTrain, Split::kVal, Split::kTest}) {
    const auto path = dir / (std::string("dataset_") + split_name(split) + ".mgds");
    std::ifstream sp(path, std::ios::binary);
    if (!sp) {
      throw std::runtime_error("missing dataset split: " + path.string());
    }
    std::ostringstream sbuf;
    sbuf << sp.rdbuf();
    split_from_container(sbuf.str(), path.string(), split, dataset);
  }
  std::sort(dataset.bags.begin(), dataset.bags.end(),
            [](const DatasetBag& a, const DatasetBag& b) { return a.bag.id < b.bag.id; });
  const std::string recomputed = dataset_fingerprint(dataset);
  if (recomputed != recorded) {
    throw std::runtime_error("dataset fingerprint mismatch in " + dir.string());
  }
  return dataset;
}

}  // namespace milgrad
