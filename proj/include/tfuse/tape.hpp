#pragma once

#include "tfuse/tensor.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tfuse {

using NodeId = std::int64_t;

enum class OpKind {
  kConstant,
  kVariable,
  kParameter,
  kMatmul,
  kAddBias,
  kConv2d,
  kAvgPool,
  kRelu,
  kSigmoid,
  kAdd,
  kSub,
  kMul,
  kScale,
  kOffset,
  kSum,
  kMean,
  kMax,
  kSoftmax,
  kConcat,
  kReshape,
  kGatherRows,
  kPairwiseDistance,
  kNormalizeSum,
  kSoftmaxCrossEntropy,
};

std::string_view op_name(OpKind kind);

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Index dim(Index axis) const { return value().dim(axis); }
  NodeId id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  NodeId id_ = -1;
};

/// Result of a backward pass: gradients of every requires-grad leaf.
class Gradients {
 public:
  /// Gradient of a leaf; zeros of the leaf's shape when the loss does not depend on it.
  const Tensor& of(const Var& leaf) const;
  const Tensor& of_parameter(const std::string& path) const;
  bool has_parameter(const std::string& path) const { return by_path_.count(path) != 0; }
  const std::map<std::string, Tensor>& parameters() const { return by_path_; }

 private:
  friend class Tape;
  std::unordered_map<NodeId, Tensor> by_node_;
  std::map<std::string, Tensor> by_path_;
};

/// Append-only record of a computation for reverse-mode differentiation.
///
/// Nodes are stored in creation order, so every input id precedes its
/// consumer and the reverse sweep is a single pass from the back. A tape is
/// single-writer; use one tape per thread.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, NodeId)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  /// Leaf bound to a named model parameter. Repeated requests for the same
  /// path return the same node, so every use accumulates into one gradient.
  Var parameter(const std::string& path, const Tensor& value);

  Var record(OpKind kind, std::vector<NodeId> inputs, Tensor value, BackwardFn backward);

  bool grad_enabled() const { return grad_enabled_; }
  bool requires_grad(NodeId id) const { return node(id).requires_grad; }
  bool any_requires_grad(std::initializer_list<Var> vars) const;
  const Tensor& value(NodeId id) const { return node(id).value; }
  OpKind kind(NodeId id) const { return node(id).kind; }
  const std::vector<NodeId>& inputs(NodeId id) const { return node(id).inputs; }
  std::size_t size() const { return nodes_.size(); }

  /// Incoming gradient of a node during the reverse sweep.
  const Tensor& grad(NodeId id) const;
  /// Gradient accumulator of an input; allocated as zeros on first use.
  Tensor& grad_buffer(NodeId id);

  Gradients backward(const Var& loss);
  Gradients backward(const Var& output, const Tensor& seed);

  /// Hash of every piecewise-linear branch taken in the forward pass (relu
  /// signs, max winners, zero distances). Two evaluations with the same
  /// signature are on the same smooth piece.
  std::uint64_t piecewise_signature() const;

 private:
  struct Node {
    OpKind kind;
    std::vector<NodeId> inputs;
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::string path;
    BackwardFn backward;
  };

  const Node& node(NodeId id) const;
  Node& node(NodeId id);
  Var push_leaf(OpKind kind, Tensor value, bool requires_grad, std::string path);

  bool grad_enabled_;
  std::deque<Node> nodes_;
  std::unordered_map<std::string, NodeId> parameter_ids_;
};

}  // namespace tfuse
