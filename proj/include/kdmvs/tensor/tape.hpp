#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "kdmvs/tensor/grid.hpp"

namespace kdmvs {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// tape that produced it is alive and has not been reset.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Grid& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Receives the node's forward value and the gradient of its output, and
// accumulates into the gradients of its parents. A null entry means that
// parent needs no gradient.
using BackwardFn =
    std::function<void(const Grid& value, const Grid& grad_out, std::span<Grid* const> parent_grads)>;

// Eager computation record for one forward pass. Nodes are appended in
// evaluation order, so reverse insertion order is a valid topological order
// for the backward sweep. A tape supports exactly one backward pass; call
// reset() before recording the next step.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Grid value) { return push(std::move(value), false, {}, nullptr); }
  Var leaf(Grid value) { return push(std::move(value), true, {}, nullptr); }

  // Records an op result. The backward closure is dropped when no parent
  // requires a gradient, which makes inference passes cheap.
  Var record(Grid value, std::vector<Var> parents, BackwardFn backward) {
    bool needs = false;
    std::vector<std::size_t> ids;
    ids.reserve(parents.size());
    for (const Var& p : parents) {
      if (p.tape() != this) throw Error("Tape::record: parent belongs to a different tape");
      ids.push_back(p.id());
      needs = needs || nodes_[p.id()]->requires_grad;
    }
    if (!needs) return push(std::move(value), false, {}, nullptr);
    return push(std::move(value), true, std::move(ids), std::move(backward));
  }

  void backward(const Var& loss) {
    if (loss.tape() != this) throw Error("Tape::backward: loss belongs to a different tape");
    if (backward_done_) throw Error("Tape::backward: second backward pass without reset");
    Node& root = *nodes_[loss.id()];
    if (root.value.size() != 1)
      throw ShapeError("Tape::backward: root must be scalar, got " + to_string(root.value.shape()));
    backward_done_ = true;
    if (!root.requires_grad) return;
    root.grad = Grid(root.value.shape(), 1.0);
    std::vector<Grid*> parent_grads;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& node = *nodes_[i];
      if (!node.backward || node.grad.empty()) continue;
      parent_grads.clear();
      for (std::size_t pid : node.parents) {
        Node& parent = *nodes_[pid];
        if (!parent.requires_grad) {
          parent_grads.push_back(nullptr);
          continue;
        }
        if (parent.grad.empty()) parent.grad = Grid(parent.value.shape());
        parent_grads.push_back(&parent.grad);
      }
      node.backward(node.value, node.grad, parent_grads);
      // Interior gradients are not needed once propagated.
      if (!node.parents.empty() && i != loss.id()) node.grad = Grid();
    }
  }

  // Gradient of the last backward root w.r.t. v; zeros if v did not
  // influence the root.
  Grid grad(const Var& v) const {
    const Node& node = *nodes_.at(v.id());
    if (node.grad.empty()) return Grid(node.value.shape());
    return node.grad;
  }

  void reset() {
    nodes_.clear();
    backward_done_ = false;
  }

  bool backward_done() const { return backward_done_; }
  std::size_t size() const { return nodes_.size(); }
  const Grid& value(std::size_t id) const { return nodes_.at(id)->value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id)->requires_grad; }

 private:
  struct Node {
    Grid value;
    Grid grad;
    bool requires_grad = false;
    std::vector<std::size_t> parents;
    BackwardFn backward;
  };

  Var push(Grid value, bool requires_grad, std::vector<std::size_t> parents, BackwardFn backward) {
    if (backward_done_) throw Error("Tape: recording after backward; call reset() first");
    auto node = std::make_unique<Node>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
  }

  std::vector<std::unique_ptr<Node>> nodes_;
  bool backward_done_ = false;
};

inline const Grid& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

}  // namespace kdmvs
