#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "milgrad/types.hpp"

namespace milgrad::ad {

// Reverse-mode automatic differentiation over dense double matrices.
//
// The operation set is closed: affine map, elementwise tanh/relu, softmax
// with a presence mask, fused log-softmax cross-entropy, row concatenation
// and weighted sum. That is exactly what the attention-MIL model needs, and
// keeping the set small keeps every backward rule auditable against finite
// differences.
enum class Op {
  kInput,
  kParam,
  kAffine,
  kTanh,
  kRelu,
  kSoftmaxMasked,
  kCrossEntropyLogits,
  kConcatRows,
  kWeightedSum,
};

const char* op_name(Op op);

using NodeId = std::int32_t;

// One named parameter block inside the canonical flat ordering.
struct ParamBlock {
  std::string name;
  Index offset = 0;
  Index rows = 0;
  Index cols = 0;

  Index size() const { return rows * cols; }
};

// Canonical parameter ordering: blocks in declaration order, entries
// row-major within each block. Gradient inner products over this layout are
// reproducible term for term.
class ParamLayout {
 public:
  Index add(std::string name, Index rows, Index cols);

  Index size() const { return total_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  const ParamBlock& block(std::string_view name) const;

  bool operator==(const ParamLayout& other) const;

 private:
  std::vector<ParamBlock> blocks_;
  Index total_ = 0;
};

// Flat gradient (or parameter) vector aligned to a canonical layout.
struct GradientVector {
  Vector values;
  std::shared_ptr<const ParamLayout> layout;
};

// A tape of matrix nodes. Construction order is the topological order; a
// graph is single-writer and forward/backward run single-threaded, while
// distinct graphs share nothing and may be evaluated concurrently.
class Graph {
 public:
  Graph();

  NodeId input(std::string name, Matrix value);
  NodeId param(std::string name, Matrix value);

  // Y = X * W + 1 * b  with X: N x K, W: K x M, b: 1 x M.
  NodeId affine(NodeId x, NodeId w, NodeId b);
  NodeId tanh(NodeId x);
  NodeId relu(NodeId x);
  // Softmax over the entries whose mask flag is nonzero, treating the value
  // matrix as one flat vector; masked-out entries get weight exactly 0.
  // Equivalent to adding -inf to masked scores before a plain softmax.
  NodeId softmax_masked(NodeId x, std::vector<std::uint8_t> mask);
  // loss = -log softmax(logits)[label], logits 1 x C. Scalar output.
  NodeId cross_entropy_logits(NodeId logits, int label);
  NodeId concat_rows(std::span<const NodeId> parts);
  // (weights: N x 1, items: N x D) -> 1 x D, i.e. weights' * items.
  NodeId weighted_sum(NodeId weights, NodeId items);

  void set_input(std::string_view name, Matrix value);

  // Evaluates every node in topological order. Throws naming the offending
  // node on shape mismatch or a non-finite intermediate.
  void forward();

  // d(loss)/d(params) in canonical order. Requires forward() first and a
  // scalar (1x1) loss node.
  GradientVector backward(NodeId loss);

  const Matrix& value(NodeId id) const;
  const Matrix& value(std::string_view name) const;
  // Gradient of the last backward() pass with respect to any node.
  const Matrix& grad(NodeId id) const;

  std::shared_ptr<const ParamLayout> layout() const { return layout_; }
  Index num_nodes() const { return static_cast<Index>(nodes_.size()); }

  // Mutable access to a parameter's value (invalidates forward results);
  // finite_diff_check perturbs coordinates through this.
  Matrix& param_value(std::string_view name);

 private:
  struct Node {
    Op op;
    std::string name;
    std::vector<NodeId> inputs;
    Matrix value;
    Matrix grad;
    std::vector<std::uint8_t> mask;  // kSoftmaxMasked
    int label = -1;                  // kCrossEntropyLogits
  };

  NodeId add_node(Node node);
  const Node& node_checked(NodeId id) const;
  void eval_node(Node& n);
  void backprop_node(const Node& n);
  [[noreturn]] void fail(const Node& n, const std::string& message) const;

  std::vector<Node> nodes_;
  std::vector<NodeId> param_ids_;
  std::shared_ptr<ParamLayout> layout_;
  bool forward_done_ = false;
};

struct FiniteDiffBlock {
  std::string name;
  double max_rel_error = 0.0;
};

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::string worst_block;
  std::vector<FiniteDiffBlock> blocks;
};

// Central-difference check of backward() against forward-only evaluations.
// Relative error per coordinate is |ad - fd| / max(|ad|, |fd|, scale_floor);
// the floor keeps coordinates whose true gradient is essentially zero from
// drowning the report in finite-difference roundoff.
FiniteDiffReport finite_diff_check(Graph& graph, NodeId loss, double step,
                                   double scale_floor = 1e-3);

}  // namespace milgrad::ad
