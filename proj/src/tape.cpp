#include "tfuse/tape.hpp"

#include <stdexcept>

namespace tfuse {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConstant: return "constant";
    case OpKind::kVariable: return "variable";
    case OpKind::kParameter: return "parameter";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAddBias: return "add_bias";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kAvgPool: return "avg_pool";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kOffset: return "offset";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kMax: return "max";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kConcat: return "concat";
    case OpKind::kReshape: return "reshape";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kPairwiseDistance: return "pairwise_distance";
    case OpKind::kNormalizeSum: return "normalize_sum";
    case OpKind::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("use of an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

const Tensor& Gradients::of(const Var& leaf) const {
  auto it = by_node_.find(leaf.id());
  if (it == by_node_.end()) throw std::out_of_range("no gradient recorded for node " + std::to_string(leaf.id()));
  return it->second;
}

const Tensor& Gradients::of_parameter(const std::string& path) const {
  auto it = by_path_.find(path);
  if (it == by_path_.end()) throw std::out_of_range("no gradient for parameter '" + path + "'");
  return it->second;
}

const Tape::Node& Tape::node(NodeId id) const {
  if (id < 0 || id >= static_cast<NodeId>(nodes_.size())) throw std::out_of_range("node id out of range");
  return nodes_[static_cast<std::size_t>(id)];
}

Tape::Node& Tape::node(NodeId id) {
  if (id < 0 || id >= static_cast<NodeId>(nodes_.size())) throw std::out_of_range("node id out of range");
  return nodes_[static_cast<std::size_t>(id)];
}

Var Tape::push_leaf(OpKind kind, Tensor value, bool requires_grad, std::string path) {
  if (!value.all_finite()) throw std::domain_error("non-finite value in " + std::string(op_name(kind)) + " leaf");
  const auto id = static_cast<NodeId>(nodes_.size());
  nodes_.push_back(Node{kind, {}, std::move(value), Tensor(), false, requires_grad && grad_enabled_, std::move(path), {}});
  return Var(this, id);
}

Var Tape::constant(Tensor value) { return push_leaf(OpKind::kConstant, std::move(value), false, {}); }

Var Tape::variable(Tensor value) { return push_leaf(OpKind::kVariable, std::move(value), true, {}); }

Var Tape::parameter(const std::string& path, const Tensor& value) {
  if (auto it = parameter_ids_.find(path); it != parameter_ids_.end()) return Var(this, it->second);
  Var v = push_leaf(OpKind::kParameter, value, true, path);
  parameter_ids_.emplace(path, v.id());
  return v;
}

Var Tape::record(OpKind kind, std::vector<NodeId> inputs, Tensor value, BackwardFn backward) {
  const auto id = static_cast<NodeId>(nodes_.size());
  bool needs_grad = false;
  for (NodeId in : inputs) {
    if (in < 0 || in >= id) {
      throw std::logic_error("cycle in tape: " + std::string(op_name(kind)) + " consumes node " + std::to_string(in) +
                             " which does not precede it");
    }
    needs_grad = needs_grad || node(in).requires_grad;
  }
  if (!value.all_finite()) {
    throw std::domain_error(std::string(op_name(kind)) + " produced a non-finite value");
  }
  needs_grad = needs_grad && grad_enabled_;
  nodes_.push_back(Node{kind, std::move(inputs), std::move(value), Tensor(), false, needs_grad, {},
                        needs_grad ? std::move(backward) : BackwardFn{}});
  return Var(this, id);
}

bool Tape::any_requires_grad(std::initializer_list<Var> vars) const {
  if (!grad_enabled_) return false;
  for (const Var& v : vars) {
    if (&v.tape() != this) throw std::logic_error("Var belongs to a different tape");
    if (node(v.id()).requires_grad) return true;
  }
  return false;
}

const Tensor& Tape::grad(NodeId id) const {
  const Node& n = node(id);
  if (!n.has_grad) throw std::logic_error("gradient of node " + std::to_string(id) + " was never seeded");
  return n.grad;
}

Tensor& Tape::grad_buffer(NodeId id) {
  Node& n = node(id);
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

Gradients Tape::backward(const Var& loss) {
  if (loss.value().size() != 1) {
    throw std::invalid_argument("backward needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  return backward(loss, Tensor::ones(loss.shape()));
}

Gradients Tape::backward(const Var& output, const Tensor& seed) {
  if (&output.tape() != this) throw std::logic_error("output belongs to a different tape");
  if (seed.shape() != output.shape()) throw std::invalid_argument("seed shape does not match output");
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  if (node(output.id()).requires_grad) {
    grad_buffer(output.id()).values() = seed.values();
  }
  for (NodeId id = output.id(); id >= 0; --id) {
    Node& n = node(id);
    if (!n.has_grad || !n.backward) continue;
    for (NodeId in : n.inputs) {
      if (in >= id) throw std::logic_error("cycle in tape at node " + std::to_string(id));
    }
    n.backward(*this, id);
  }

  Gradients out;
  for (NodeId id = 0; id < static_cast<NodeId>(nodes_.size()); ++id) {
    Node& n = node(id);
    if (!n.requires_grad || !n.inputs.empty()) continue;
    Tensor g = n.has_grad ? n.grad : Tensor(n.value.shape());
    if (n.kind == OpKind::kParameter) out.by_path_.emplace(n.path, g);
    out.by_node_.emplace(id, std::move(g));
  }
  return out;
}

std::uint64_t Tape::piecewise_signature() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  };
  for (const Node& n : nodes_) {
    switch (n.kind) {
      case OpKind::kRelu: {
        const Tensor& x = node(n.inputs[0]).value;
        for (Index i = 0; i < x.size(); ++i) mix(x[i] > 0.0 ? 1 : 0);
        break;
      }
      case OpKind::kMax:
      case OpKind::kPairwiseDistance: {
        // max: winners are recovered from value equality with the input;
        // distance: exact zeros are the non-smooth points.
        const Tensor& y = n.value;
        for (Index i = 0; i < y.size(); ++i) mix(std::hash<double>{}(y[i] == 0.0 ? 0.0 : 1.0));
        if (n.kind == OpKind::kMax) {
          const Tensor& x = node(n.inputs[0]).value;
          for (Index i = 0; i < x.size(); ++i) {
            bool winner = false;
            for (Index j = 0; j < y.size() && !winner; ++j) winner = x[i] == y[j];
            mix(winner ? 3 : 5);
          }
        }
        break;
      }
      default:
        break;
    }
  }
  return h;
}

}  // namespace tfuse
