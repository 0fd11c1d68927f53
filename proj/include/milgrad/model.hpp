#pragma once

#include <memory>
#include <optional>
#include <string>

#include "milgrad/autodiff.hpp"
#include "milgrad/bag.hpp"
#include "milgrad/rng.hpp"
#include "milgrad/types.hpp"

namespace milgrad {

enum class Activation { kTanh, kRelu };

const char* activation_name(Activation a);
Activation parse_activation(const std::string& name);

struct ModelConfig {
  Index feature_dim = 24;     // F
  Index encoder_hidden = 32;  // 0 = single-layer encoder F -> D
  Index embed_dim = 32;       // D
  Index attention_dim = 16;   // A
  Index head_hidden = 16;
  Activation activation = Activation::kTanh;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Trainable parameters. Weight matrices are stored input x output, so the
// forward pass is a row of instances times the matrix; biases are 1 x out.
//
// Canonical flat ordering (declaration order, row-major within a block):
// enc.w1, enc.b1, [enc.w2, enc.b2,] attn.v, attn.w, head.w1, head.b1,
// head.w2, head.b2.
struct ModelParams {
  ModelConfig config;
  Matrix enc_w1, enc_b1;
  Matrix enc_w2, enc_b2;  // empty when encoder_hidden == 0
  Matrix attn_v;          // D x A
  Matrix attn_w;          // A x 1
  Matrix head_w1, head_b1;
  Matrix head_w2, head_b2;

  std::shared_ptr<const ad::ParamLayout> layout() const;
  Vector to_flat() const;
  static ModelParams from_flat(const ModelConfig& config, const Vector& flat);
  Index param_count() const;
};

// Gaussian init scaled by 1/sqrt(fan_in); biases zero.
ModelParams init_model_params(const ModelConfig& config, Rng& rng);

struct BagOutput {
  Vector probabilities;  // kNumClasses, sums to 1
  Vector attention;      // N; absent instances exactly 0, present sum to 1
  Vector bag_embedding;  // D
};

// The assembled tape for one (params, bag) pair, with handles to the nodes
// the pipeline reads back.
struct BagGraph {
  ad::Graph graph;
  ad::NodeId features = -1;
  ad::NodeId attention = -1;
  ad::NodeId embedding = -1;
  ad::NodeId logits = -1;
  ad::NodeId probabilities = -1;
  ad::NodeId loss = -1;  // -1 when built without a label
};

// Encoder -> gated tanh attention over present instances -> classifier head.
// Scores are w' tanh(h V); absent instances are masked out before the
// softmax, so their attention weights are exactly zero and present weights
// renormalize over the present subset.
BagGraph build_bag_graph(const ModelParams& params, const Bag& bag,
                         std::optional<int> label = std::nullopt);

Vector encode_instance(const ModelParams& params, const Vector& features);

// (bag_embedding, attention weights) from explicit embeddings; standalone
// surface for the pooling stage.
std::pair<Vector, Vector> attention_pool(const ModelParams& params, const Matrix& embeddings,
                                         const std::vector<std::uint8_t>& presence);

BagOutput classify_bag(const ModelParams& params, const Bag& bag);

struct LossAndGrad {
  double loss = 0.0;
  ad::GradientVector grad;
};

LossAndGrad bag_loss_and_grad(const ModelParams& params, const Bag& bag, int label);

// Present instance with the largest attention weight; ties break to the
// lowest instance index.
Index most_attended_instance(const ModelParams& params, const Bag& bag);

// Same bag with the presence mask narrowed to exactly one instance; the
// per-image gradient surrogate for bag-level labels.
Bag as_singleton_bag(const Bag& bag, Index instance);

}  // namespace milgrad
