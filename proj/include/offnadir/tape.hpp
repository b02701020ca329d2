#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "offnadir/tensor.hpp"

namespace offnadir {

template <typename T>
class Tape;

// Lightweight handle into a tape. Valid only while its tape is alive.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const TensorT<T>& val() const;
};

// Reverse-mode tape. Nodes are appended in evaluation order; creation order is
// a topological order, so backward() walks ids in reverse.
template <typename T>
class Tape {
 public:
  struct Node {
    TensorT<T> value;
    TensorT<T> grad;  // allocated lazily during backward
    bool requires_grad = false;
    std::function<void(Tape&, int)> backward;  // pulls this node's grad into parents
  };

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  Var<T> leaf(TensorT<T> value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = grad_enabled_ && requires_grad;
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  Var<T> constant(TensorT<T> value) { return leaf(std::move(value), false); }

  // Record an op node. requires_grad is inherited from parents; the backward
  // closure is dropped when grads are disabled or no parent needs them.
  Var<T> record(TensorT<T> value, std::vector<int> parents,
                std::function<void(Tape&, int)> backward) {
    Node n;
    n.value = std::move(value);
    if (grad_enabled_) {
      for (int p : parents)
        if (nodes_[p].requires_grad) {
          n.requires_grad = true;
          break;
        }
      if (n.requires_grad) n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  const TensorT<T>& value(Var<T> v) const { return nodes_[v.id].value; }

  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  // Accumulate into a node's grad buffer, allocating on first touch.
  TensorT<T>& grad_buffer(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty()) n.grad = TensorT<T>::zeros(n.value.shape());
    return n.grad;
  }

  void backward(Var<T> loss) {
    if (!grad_enabled_) throw std::logic_error("backward on a no-grad tape");
    Node& ln = nodes_[loss.id];
    if (!ln.requires_grad) throw std::logic_error("loss does not require grad");
    if (ln.value.size() != 1) throw std::logic_error("backward expects a scalar loss");
    grad_buffer(loss.id).fill(T(1));
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(*this, id);
    }
  }

  // Grad of a leaf after backward; zeros if the leaf was never reached.
  TensorT<T> grad(Var<T> v) {
    Node& n = nodes_[v.id];
    if (n.grad.empty()) return TensorT<T>::zeros(n.value.shape());
    return n.grad;
  }

  size_t node_count() const { return nodes_.size(); }

 private:
  bool grad_enabled_ = true;
  std::vector<Node> nodes_;
};

template <typename T>
const TensorT<T>& Var<T>::val() const {
  return tape->value(*this);
}

}  // namespace offnadir
