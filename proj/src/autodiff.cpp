#include "milgrad/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace milgrad::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::kInput:
      return "input";
    case Op::kParam:
      return "param";
    case Op::kAffine:
      return "affine";
    case Op::kTanh:
      return "tanh";
    case Op::kRelu:
      return "relu";
    case Op::kSoftmaxMasked:
      return "softmax_masked";
    case Op::kCrossEntropyLogits:
      return "cross_entropy_logits";
    case Op::kConcatRows:
      return "concat_rows";
    case Op::kWeightedSum:
      return "weighted_sum";
  }
  return "?";
}

Index ParamLayout::add(std::string name, Index rows, Index cols) {
  for (const auto& b : blocks_) {
    if (b.name == name) {
      throw std::runtime_error("duplicate parameter block '" + name + "'");
    }
  }
  const Index offset = total_;
  blocks_.push_back(ParamBlock{std::move(name), offset, rows, cols});
  total_ += rows * cols;
  return offset;
}

const ParamBlock& ParamLayout::block(std::string_view name) const {
  for (const auto& b : blocks_) {
    if (b.name == name) {
      return b;
    }
  }
  throw std::runtime_error("unknown parameter block '" + std::string(name) + "'");
}

bool ParamLayout::operator==(const ParamLayout& other) const {
  if (blocks_.size() != other.blocks_.size() || total_ != other.total_) {
    return false;
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& a = blocks_[i];
    const auto& b = other.blocks_[i];
    if (a.name != b.name || a.offset != b.offset || a.rows != b.rows || a.cols != b.cols) {
      return false;
    }
  }
  return true;
}

Graph::Graph() : layout_(std::make_shared<ParamLayout>()) {}

NodeId Graph::add_node(Node node) {
  forward_done_ = false;
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size() - 1);
}

const Graph::Node& Graph::node_checked(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw std::runtime_error("invalid node id " + std::to_string(id));
  }
  return nodes_[static_cast<std::size_t>(id)];
}

void Graph::fail(const Node& n, const std::string& message) const {
  throw std::runtime_error("node '" + n.name + "' (" + op_name(n.op) + "): " + message);
}

NodeId Graph::input(std::string name, Matrix value) {
  Node n;
  n.op = Op::kInput;
  n.name = std::move(name);
  n.value = std::move(value);
  return add_node(std::move(n));
}

NodeId Graph::param(std::string name, Matrix value) {
  layout_->add(name, value.rows(), value.cols());
  Node n;
  n.op = Op::kParam;
  n.name = std::move(name);
  n.value = std::move(value);
  const NodeId id = add_node(std::move(n));
  param_ids_.push_back(id);
  return id;
}

NodeId Graph::affine(NodeId x, NodeId w, NodeId b) {
  Node n;
  n.op = Op::kAffine;
  n.inputs = {x, w, b};
  n.name = "affine#" + std::to_string(nodes_.size());
  node_checked(x);
  node_checked(w);
  node_checked(b);
  return add_node(std::move(n));
}

NodeId Graph::tanh(NodeId x) {
  Node n;
  n.op = Op::kTanh;
  n.inputs = {x};
  n.name = "tanh#" + std::to_string(nodes_.size());
  node_checked(x);
  return add_node(std::move(n));
}

NodeId Graph::relu(NodeId x) {
  Node n;
  n.op = Op::kRelu;
  n.inputs = {x};
  n.name = "relu#" + std::to_string(nodes_.size());
  node_checked(x);
  return add_node(std::move(n));
}

NodeId Graph::softmax_masked(NodeId x, std::vector<std::uint8_t> mask) {
  Node n;
  n.op = Op::kSoftmaxMasked;
  n.inputs = {x};
  n.mask = std::move(mask);
  n.name = "softmax_masked#" + std::to_string(nodes_.size());
  node_checked(x);
  return add_node(std::move(n));
}

NodeId Graph::cross_entropy_logits(NodeId logits, int label) {
  Node n;
  n.op = Op::kCrossEntropyLogits;
  n.inputs = {logits};
  n.label = label;
  n.name = "cross_entropy#" + std::to_string(nodes_.size());
  node_checked(logits);
  return add_node(std::move(n));
}

NodeId Graph::concat_rows(std::span<const NodeId> parts) {
  if (parts.empty()) {
    throw std::runtime_error("concat_rows: no inputs");
  }
  Node n;
  n.op = Op::kConcatRows;
  n.inputs.assign(parts.begin(), parts.end());
  n.name = "concat_rows#" + std::to_string(nodes_.size());
  for (NodeId id : parts) {
    node_checked(id);
  }
  return add_node(std::move(n));
}

NodeId Graph::weighted_sum(NodeId weights, NodeId items) {
  Node n;
  n.op = Op::kWeightedSum;
  n.inputs = {weights, items};
  n.name = "weighted_sum#" + std::to_string(nodes_.size());
  node_checked(weights);
  node_checked(items);
  return add_node(std::move(n));
}

void Graph::set_input(std::string_view name, Matrix value) {
  for (auto& n : nodes_) {
    if (n.op == Op::kInput && n.name == name) {
      n.value = std::move(value);
      forward_done_ = false;
      return;
    }
  }
  throw std::runtime_error("no input named '" + std::string(name) + "'");
}

Matrix& Graph::param_value(std::string_view name) {
  for (auto& n : nodes_) {
    if (n.op == Op::kParam && n.name == name) {
      forward_done_ = false;
      return n.value;
    }
  }
  throw std::runtime_error("no parameter named '" + std::string(name) + "'");
}

void Graph::eval_node(Node& n) {
  const auto in = [&](std::size_t i) -> const Matrix& {
    return nodes_[static_cast<std::size_t>(n.inputs[i])].value;
  };
  switch (n.op) {
    case Op::kInput:
    case Op::kParam:
      if (n.value.size() == 0) {
        fail(n, "value not bound");
      }
      break;
    case Op::kAffine: {
      const Matrix& x = in(0);
      const Matrix& w = in(1);
      const Matrix& b = in(2);
      if (x.cols() != w.rows()) {
        fail(n, "shape mismatch: x is " + std::to_string(x.rows()) + "x" +
                    std::to_string(x.cols()) + ", w is " + std::to_string(w.rows()) + "x" +
                    std::to_string(w.cols()));
      }
      if (b.rows() != 1 || b.cols() != w.cols()) {
        fail(n, "shape mismatch: bias must be 1x" + std::to_string(w.cols()));
      }
      n.value.noalias() = x * w;
      n.value.rowwise() += b.row(0);
      break;
    }
    case Op::kTanh:
      n.value = in(0).array().tanh();
      break;
    case Op::kRelu:
      n.value = in(0).array().max(0.0);
      break;
    case Op::kSoftmaxMasked: {
      const Matrix& x = in(0);
      if (static_cast<std::size_t>(x.size()) != n.mask.size()) {
        fail(n, "mask length " + std::to_string(n.mask.size()) + " does not match " +
                    std::to_string(x.size()) + " entries");
      }
      const Index count = x.size();
      double max_present = -std::numeric_limits<double>::infinity();
      Index present = 0;
      for (Index i = 0; i < count; ++i) {
        if (n.mask[static_cast<std::size_t>(i)]) {
          ++present;
          // flat index walks the matrix row-major
          const double v = x(i / x.cols(), i % x.cols());
          max_present = std::max(max_present, v);
        }
      }
      if (present == 0) {
        fail(n, "empty bag");
      }
      n.value.setZero(x.rows(), x.cols());
      double denom = 0.0;
      for (Index i = 0; i < count; ++i) {
        if (n.mask[static_cast<std::size_t>(i)]) {
          const double e = std::exp(x(i / x.cols(), i % x.cols()) - max_present);
          n.value(i / x.cols(), i % x.cols()) = e;
          denom += e;
        }
      }
      for (Index i = 0; i < count; ++i) {
        if (n.mask[static_cast<std::size_t>(i)]) {
          n.value(i / x.cols(), i % x.cols()) /= denom;
        }
      }
      break;
    }
    case Op::kCrossEntropyLogits: {
      const Matrix& logits = in(0);
      if (logits.rows() != 1) {
        fail(n, "logits must be a single row");
      }
      if (n.label < 0 || n.label >= logits.cols()) {
        fail(n, "label " + std::to_string(n.label) + " out of range");
      }
      const double max_logit = logits.maxCoeff();
      double sum = 0.0;
      for (Index c = 0; c < logits.cols(); ++c) {
        sum += std::exp(logits(0, c) - max_logit);
      }
      n.value.resize(1, 1);
      n.value(0, 0) = -(logits(0, n.label) - max_logit - std::log(sum));
      break;
    }
    case Op::kConcatRows: {
      Index rows = 0;
      const Index cols = in(0).cols();
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        if (in(i).cols() != cols) {
          fail(n, "column mismatch between concatenated parts");
        }
        rows += in(i).rows();
      }
      n.value.resize(rows, cols);
      Index at = 0;
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        n.value.middleRows(at, in(i).rows()) = in(i);
        at += in(i).rows();
      }
      break;
    }
    case Op::kWeightedSum: {
      const Matrix& w = in(0);
      const Matrix& items = in(1);
      if (w.cols() != 1 || w.rows() != items.rows()) {
        fail(n, "weights must be Nx1 matching item rows");
      }
      n.value.noalias() = w.transpose() * items;
      break;
    }
  }
  if (!n.value.allFinite()) {
    fail(n, "non-finite intermediate");
  }
}

void Graph::forward() {
  for (auto& n : nodes_) {
    eval_node(n);
  }
  forward_done_ = true;
}

void Graph::backprop_node(const Node& n) {
  auto grad_of = [&](std::size_t i) -> Matrix& {
    return nodes_[static_cast<std::size_t>(n.inputs[i])].grad;
  };
  const auto value_of = [&](std::size_t i) -> const Matrix& {
    return nodes_[static_cast<std::size_t>(n.inputs[i])].value;
  };
  switch (n.op) {
    case Op::kInput:
    case Op::kParam:
      break;
    case Op::kAffine: {
      const Matrix& x = value_of(0);
      const Matrix& w = value_of(1);
      grad_of(0).noalias() += n.grad * w.transpose();
      grad_of(1).noalias() += x.transpose() * n.grad;
      grad_of(2).row(0) += n.grad.colwise().sum();
      break;
    }
    case Op::kTanh:
      grad_of(0).array() += n.grad.array() * (1.0 - n.value.array().square());
      break;
    case Op::kRelu:
      grad_of(0).array() += n.grad.array() * (value_of(0).array() > 0.0).cast<double>();
      break;
    case Op::kSoftmaxMasked: {
      // dx_i = y_i * (dy_i - sum_j dy_j * y_j) over present entries.
      const Matrix& y = n.value;
      double inner = 0.0;
      for (Index i = 0; i < y.size(); ++i) {
        if (n.mask[static_cast<std::size_t>(i)]) {
          inner += n.grad(i / y.cols(), i % y.cols()) * y(i / y.cols(), i % y.cols());
        }
      }
      Matrix& dx = grad_of(0);
      for (Index i = 0; i < y.size(); ++i) {
        if (n.mask[static_cast<std::size_t>(i)]) {
          const Index r = i / y.cols();
          const Index c = i % y.cols();
          dx(r, c) += y(r, c) * (n.grad(r, c) - inner);
        }
      }
      break;
    }
    case Op::kCrossEntropyLogits: {
      const Matrix& logits = value_of(0);
      const double max_logit = logits.maxCoeff();
      double sum = 0.0;
      for (Index c = 0; c < logits.cols(); ++c) {
        sum += std::exp(logits(0, c) - max_logit);
      }
      const double upstream = n.grad(0, 0);
      Matrix& dl = grad_of(0);
      for (Index c = 0; c < logits.cols(); ++c) {
        const double softmax = std::exp(logits(0, c) - max_logit) / sum;
        dl(0, c) += upstream * (softmax - (c == n.label ? 1.0 : 0.0));
      }
      break;
    }
    case Op::kConcatRows: {
      Index at = 0;
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        grad_of(i) += n.grad.middleRows(at, value_of(i).rows());
        at += value_of(i).rows();
      }
      break;
    }
    case Op::kWeightedSum: {
      const Matrix& w = value_of(0);
      const Matrix& items = value_of(1);
      grad_of(0).noalias() += items * n.grad.transpose();
      grad_of(1).noalias() += w * n.grad;
      break;
    }
  }
}

GradientVector Graph::backward(NodeId loss) {
  if (!forward_done_) {
    throw std::runtime_error("backward: forward has not been evaluated");
  }
  const Node& loss_node = node_checked(loss);
  if (loss_node.value.rows() != 1 || loss_node.value.cols() != 1) {
    throw std::runtime_error("backward: loss node '" + loss_node.name + "' is not scalar");
  }
  for (auto& n : nodes_) {
    n.grad.setZero(n.value.rows(), n.value.cols());
  }
  nodes_[static_cast<std::size_t>(loss)].grad(0, 0) = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    backprop_node(*it);
  }

  GradientVector out;
  out.layout = layout_;
  out.values.resize(layout_->size());
  Index at = 0;
  for (NodeId id : param_ids_) {
    const Matrix& g = nodes_[static_cast<std::size_t>(id)].grad;
    for (Index r = 0; r < g.rows(); ++r) {
      for (Index c = 0; c < g.cols(); ++c) {
        out.values(at++) = g(r, c);
      }
    }
  }
  return out;
}

const Matrix& Graph::value(NodeId id) const {
  if (!forward_done_) {
    throw std::runtime_error("value: forward has not been evaluated");
  }
  return node_checked(id).value;
}

const Matrix& Graph::value(std::string_view name) const {
  if (!forward_done_) {
    throw std::runtime_error("value: forward has not been evaluated");
  }
  for (const auto& n : nodes_) {
    if (n.name == name) {
      return n.value;
    }
  }
  throw std::runtime_error("no node named '" + std::string(name) + "'");
}

const Matrix& Graph::grad(NodeId id) const { return node_checked(id).grad; }

FiniteDiffReport finite_diff_check(Graph& graph, NodeId loss, double step, double scale_floor) {
  if (!(step > 0.0)) {
    throw std::runtime_error("step must be positive");
  }
  graph.forward();
  const GradientVector analytic = graph.backward(loss);
  const auto layout = graph.layout();

  FiniteDiffReport report;
  for (const auto& block : layout->blocks()) {
    Matrix& value = graph.param_value(block.name);
    FiniteDiffBlock entry{block.name, 0.0};
    for (Index r = 0; r < block.rows; ++r) {
      for (Index c = 0; c < block.cols; ++c) {
        const double saved = value(r, c);
        value(r, c) = saved + step;
        graph.forward();
        const double plus = graph.value(loss)(0, 0);
        value(r, c) = saved - step;
        graph.forward();
        const double minus = graph.value(loss)(0, 0);
        value(r, c) = saved;
        const double fd = (plus - minus) / (2.0 * step);
        const double ad = analytic.values(block.offset + r * block.cols + c);
        const double scale = std::max({std::abs(ad), std::abs(fd), scale_floor});
        entry.max_rel_error = std::max(entry.max_rel_error, std::abs(ad - fd) / scale);
      }
    }
    if (entry.max_rel_error >= report.max_rel_error) {
      if (entry.max_rel_error > report.max_rel_error || report.worst_block.empty()) {
        report.max_rel_error = entry.max_rel_error;
        report.worst_block = entry.name;
      }
    }
    report.blocks.push_back(std::move(entry));
  }
  graph.forward();  // restore evaluated state
  return report;
}

}  // namespace milgrad::ad
