#include "milgrad/model.hpp"

#include <cmath>
#include <stdexcept>

namespace milgrad {

const char* activation_name(Activation a) {
  return a == Activation::kTanh ? "tanh" : "relu";
}

Activation parse_activation(const std::string& name) {
  if (name == "tanh") {
    return Activation::kTanh;
  }
  if (name == "relu") {
    return Activation::kRelu;
  }
  throw ConfigError("unknown activation '" + name + "' (expected tanh or relu)");
}

void ModelConfig::validate() const {
  if (feature_dim < 1 || embed_dim < 1 || attention_dim < 1 || head_hidden < 1) {
    throw ConfigError("model dimensions must be positive");
  }
  if (encoder_hidden < 0) {
    throw ConfigError("encoder_hidden must be >= 0");
  }
}

namespace {

struct BlockSpec {
  const char* name;
  Index rows;
  Index cols;
  Matrix ModelParams::* member;
  bool bias;
};

std::vector<BlockSpec> block_specs(const ModelConfig& c) {
  std::vector<BlockSpec> specs;
  if (c.encoder_hidden > 0) {
    specs.push_back({"enc.w1", c.feature_dim, c.encoder_hidden, &ModelParams::enc_w1, false});
    specs.push_back({"enc.b1", 1, c.encoder_hidden, &ModelParams::enc_b1, true});
    specs.push_back({"enc.w2", c.encoder_hidden, c.embed_dim, &ModelParams::enc_w2, false});
    specs.push_back({"enc.b2", 1, c.embed_dim, &ModelParams::enc_b2, true});
  } else {
    specs.push_back({"enc.w1", c.feature_dim, c.embed_dim, &ModelParams::enc_w1, false});
    specs.push_back({"enc.b1", 1, c.embed_dim, &ModelParams::enc_b1, true});
  }
  specs.push_back({"attn.v", c.embed_dim, c.attention_dim, &ModelParams::attn_v, false});
  specs.push_back({"attn.w", c.attention_dim, 1, &ModelParams::attn_w, false});
  specs.push_back({"head.w1", c.embed_dim, c.head_hidden, &ModelParams::head_w1, false});
  specs.push_back({"head.b1", 1, c.head_hidden, &ModelParams::head_b1, true});
  specs.push_back({"head.w2", c.head_hidden, kNumClasses, &ModelParams::head_w2, false});
  specs.push_back({"head.b2", 1, kNumClasses, &ModelParams::head_b2, true});
  return specs;
}

}  // namespace

std::shared_ptr<const ad::ParamLayout> ModelParams::layout() const {
  auto layout = std::make_shared<ad::ParamLayout>();
  for (const auto& s : block_specs(config)) {
    layout->add(s.name, s.rows, s.cols);
  }
  return layout;
}

Index ModelParams::param_count() const {
  Index total = 0;
  for (const auto& s : block_specs(config)) {
    total += s.rows * s.cols;
  }
  return total;
}

Vector ModelParams::to_flat() const {
  Vector flat(param_count());
  Index at = 0;
  for (const auto& s : block_specs(config)) {
    const Matrix& m = this->*s.member;
    if (m.rows() != s.rows || m.cols() != s.cols) {
      throw std::runtime_error(std::string("parameter block '") + s.name + "' has wrong shape");
    }
    for (Index r = 0; r < m.rows(); ++r) {
      for (Index c = 0; c < m.cols(); ++c) {
        flat(at++) = m(r, c);
      }
    }
  }
  return flat;
}

ModelParams ModelParams::from_flat(const ModelConfig& config, const Vector& flat) {
  ModelParams params;
  params.config = config;
  Index at = 0;
  for (const auto& s : block_specs(config)) {
    Matrix& m = params.*s.member;
    m.resize(s.rows, s.cols);
    for (Index r = 0; r < s.rows; ++r) {
      for (Index c = 0; c < s.cols; ++c) {
        m(r, c) = flat(at++);
      }
    }
  }
  if (at != flat.size()) {
    throw std::runtime_error("flat parameter vector has wrong length");
  }
  return params;
}

ModelParams init_model_params(const ModelConfig& config, Rng& rng) {
  config.validate();
  ModelParams params;
  params.config = config;
  for (const auto& s : block_specs(config)) {
    Matrix& m = params.*s.member;
    m.resize(s.rows, s.cols);
    const double scale = s.bias ? 0.0 : 1.0 / std::sqrt(static_cast<double>(s.rows));
    for (Index r = 0; r < s.rows; ++r) {
      for (Index c = 0; c < s.cols; ++c) {
        m(r, c) = s.bias ? 0.0 : scale * rng.normal();
      }
    }
  }
  return params;
}

namespace {

ad::NodeId apply_activation(ad::Graph& g, ad::NodeId x, Activation a) {
  return a == Activation::kTanh ? g.tanh(x) : g.relu(x);
}

void check_bag(const ModelParams& params, const Bag& bag) {
  if (bag.num_instances() < 1) {
    throw std::runtime_error("empty bag");
  }
  if (bag.features.cols() != params.config.feature_dim) {
    throw std::runtime_error("feature dimension mismatch: bag has " +
                             std::to_string(bag.features.cols()) + ", model expects " +
                             std::to_string(params.config.feature_dim));
  }
  if (static_cast<Index>(bag.presence.size()) != bag.num_instances()) {
    throw std::runtime_error("presence mask length does not match instance count");
  }
  if (bag.num_present() == 0) {
    throw std::runtime_error("empty bag");
  }
}

}  // namespace

BagGraph build_bag_graph(const ModelParams& params, const Bag& bag, std::optional<int> label) {
  check_bag(params, bag);
  const ModelConfig& cfg = params.config;
  if (label && (*label < 0 || *label >= kNumClasses)) {
    throw std::runtime_error("invalid label " + std::to_string(*label));
  }

  BagGraph bg;
  ad::Graph& g = bg.graph;
  bg.features = g.input("features", bag.features);

  const ad::NodeId w1 = g.param("enc.w1", params.enc_w1);
  const ad::NodeId b1 = g.param("enc.b1", params.enc_b1);
  ad::NodeId embed;
  if (cfg.encoder_hidden > 0) {
    const ad::NodeId w2 = g.param("enc.w2", params.enc_w2);
    const ad::NodeId b2 = g.param("enc.b2", params.enc_b2);
    const ad::NodeId h1 = apply_activation(g, g.affine(bg.features, w1, b1), cfg.activation);
    embed = apply_activation(g, g.affine(h1, w2, b2), cfg.activation);
  } else {
    embed = apply_activation(g, g.affine(bg.features, w1, b1), cfg.activation);
  }

  const ad::NodeId attn_v = g.param("attn.v", params.attn_v);
  const ad::NodeId attn_w = g.param("attn.w", params.attn_w);
  const ad::NodeId zero_a = g.input("zero.a", Matrix::Zero(1, cfg.attention_dim));
  const ad::NodeId zero_s = g.input("zero.s", Matrix::Zero(1, 1));
  const ad::NodeId gate = g.tanh(g.affine(embed, attn_v, zero_a));
  const ad::NodeId scores = g.affine(gate, attn_w, zero_s);
  bg.attention = g.softmax_masked(scores, bag.presence);
  bg.embedding = g.weighted_sum(bg.attention, embed);

  const ad::NodeId hw1 = g.param("head.w1", params.head_w1);
  const ad::NodeId hb1 = g.param("head.b1", params.head_b1);
  const ad::NodeId hw2 = g.param("head.w2", params.head_w2);
  const ad::NodeId hb2 = g.param("head.b2", params.head_b2);
  const ad::NodeId h = apply_activation(g, g.affine(bg.embedding, hw1, hb1), cfg.activation);
  bg.logits = g.affine(h, hw2, hb2);
  bg.probabilities =
      g.softmax_masked(bg.logits, std::vector<std::uint8_t>(kNumClasses, std::uint8_t{1}));
  if (label) {
    bg.loss = g.cross_entropy_logits(bg.logits, *label);
  }
  return bg;
}

Vector encode_instance(const ModelParams& params, const Vector& features) {
  if (features.size() != params.config.feature_dim) {
    throw std::runtime_error("feature dimension mismatch: got " + std::to_string(features.size()) +
                             ", model expects " + std::to_string(params.config.feature_dim));
  }
  Bag bag;
  bag.features = features.transpose();
  bag.presence = {1};
  BagGraph bg = build_bag_graph(params, bag);
  bg.graph.forward();
  return bg.graph.value(bg.embedding).row(0).transpose();
}

std::pair<Vector, Vector> attention_pool(const ModelParams& params, const Matrix& embeddings,
                                         const std::vector<std::uint8_t>& presence) {
  if (embeddings.cols() != params.config.embed_dim) {
    throw std::runtime_error("embedding dimension mismatch");
  }
  if (static_cast<Index>(presence.size()) != embeddings.rows()) {
    throw std::runtime_error("presence mask length does not match embedding rows");
  }
  bool any = false;
  for (auto f : presence) {
    any = any || (f != 0);
  }
  if (!any) {
    throw std::runtime_error("empty bag");
  }
  ad::Graph g;
  const ad::NodeId embed = g.input("embeddings", embeddings);
  const ad::NodeId attn_v = g.param("attn.v", params.attn_v);
  const ad::NodeId attn_w = g.param("attn.w", params.attn_w);
  const ad::NodeId zero_a = g.input("zero.a", Matrix::Zero(1, params.config.attention_dim));
  const ad::NodeId zero_s = g.input("zero.s", Matrix::Zero(1, 1));
  const ad::NodeId gate = g.tanh(g.affine(embed, attn_v, zero_a));
  const ad::NodeId scores = g.affine(gate, attn_w, zero_s);
  const ad::NodeId attention = g.softmax_masked(scores, presence);
  const ad::NodeId pooled = g.weighted_sum(attention, embed);
  g.forward();
  return {g.value(pooled).row(0).transpose(), g.value(attention).col(0)};
}

BagOutput classify_bag(const ModelParams& params, const Bag& bag) {
  BagGraph bg = build_bag_graph(params, bag);
  bg.graph.forward();
  BagOutput out;
  out.probabilities = bg.graph.value(bg.probabilities).row(0).transpose();
  out.attention = bg.graph.value(bg.attention).col(0);
  out.bag_embedding = bg.graph.value(bg.embedding).row(0).transpose();
  return out;
}

LossAndGrad bag_loss_and_grad(const ModelParams& params, const Bag& bag, int label) {
  if (label < 0 || label >= kNumClasses) {
    throw std::runtime_error("invalid label " + std::to_string(label));
  }
  BagGraph bg = build_bag_graph(params, bag, label);
  bg.graph.forward();
  LossAndGrad out;
  out.loss = bg.graph.value(bg.loss)(0, 0);
  out.grad = bg.graph.backward(bg.loss);
  return out;
}

Index most_attended_instance(const ModelParams& params, const Bag& bag) {
  const BagOutput out = classify_bag(params, bag);
  Index best = -1;
  double best_weight = -1.0;
  for (Index i = 0; i < bag.num_instances(); ++i) {
    if (bag.is_present(i) && out.attention(i) > best_weight) {
      best = i;
      best_weight = out.attention(i);
    }
  }
  return best;
}

Bag as_singleton_bag(const Bag& bag, Index instance) {
  if (instance < 0 || instance >= bag.num_instances()) {
    throw std::runtime_error("instance " + std::to_string(instance) + " out of range for bag " +
                             std::to_string(bag.id));
  }
  if (!bag.is_present(instance)) {
    throw std::runtime_error("instance " + std::to_string(instance) + " is absent from bag " +
                             std::to_string(bag.id));
  }
  Bag out = bag;
  std::fill(out.presence.begin(), out.presence.end(), std::uint8_t{0});
  out.presence[static_cast<std::size_t>(instance)] = 1;
  return out;
}

}  // namespace milgrad
