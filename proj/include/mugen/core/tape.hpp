#pragma once

#include <unordered_set>
#include <utility>
#include <vector>

#include "mugen/core/tensor.hpp"

namespace mugen {

/// Topologically ordered record of every node reachable from a root tensor.
/// Inputs always precede the ops that consume them.
template <typename T>
class Tape {
 public:
  static Tape record(const Tensor<T>& root) {
    Tape tape;
    if (!root.defined()) return tape;
    std::unordered_set<const Node<T>*> seen;
    // Iterative post-order DFS; graphs can be a few thousand ops deep.
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        Node<T>* child = node->inputs[next++].get();
        if (child && seen.insert(child).second) stack.emplace_back(child, 0);
      } else {
        tape.nodes_.push_back(node);
        stack.pop_back();
      }
    }
    return tape;
  }

  const std::vector<Node<T>*>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

  /// Populates grad of every requires_grad leaf reachable from `loss`. Leaf gradients
  /// accumulate across calls; intermediate gradients are reset first.
  void backward(const Tensor<T>& loss) const {
    if (loss.numel() != 1) {
      throw ContractError("backward needs a scalar loss, got " + shape_string(loss.dims()));
    }
    if (!loss.requires_grad()) {
      throw ContractError("backward: loss does not depend on any requires_grad tensor");
    }
    for (auto* node : nodes_) {
      if (node->backward) node->grad.assign(node->data.size(), T(0));
    }
    loss.node()->grad_buffer()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<T>* node = *it;
      if (node->requires_grad && node->backward) node->backward(*node);
    }
  }

  /// Name of the first op (in execution order) whose output holds NaN/Inf, or empty.
  /// Leaves are skipped; a bad parameter or input is reported as the op that reads it.
  std::string first_nonfinite_op() const {
    for (auto* node : nodes_) {
      if (node->inputs.empty()) continue;
      if (!detail::all_finite<T>(node->data)) return node->op;
    }
    return {};
  }

 private:
  std::vector<Node<T>*> nodes_;
};

template <typename T>
void backward(const Tensor<T>& loss) {
  Tape<T>::record(loss).backward(loss);
}

}  // namespace mugen
