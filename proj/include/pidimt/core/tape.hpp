#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pidimt/core/tensor.hpp"

namespace pidimt {

// Reverse-mode tape: an ordered record of primitive applications. Each node
// stores the forward value and a closure that routes the node's output
// gradient to its parents via Tape::add_grad. Nodes are appended in forward
// order, so a single reverse sweep visits children before parents.
template <typename T>
class Tape {
 public:
  using BackFn = std::function<void(const Tensor<T>& grad_out, Tape& tape)>;

  int leaf(std::shared_ptr<const Tensor<T>> v) { return push(std::move(v), BackFn{}); }

  int record(std::shared_ptr<const Tensor<T>> v, BackFn back) {
    return push(std::move(v), std::move(back));
  }

  const Tensor<T>& value(int id) const { return *nodes_[static_cast<std::size_t>(id)].value; }

  std::size_t size() const { return nodes_.size(); }

  // Seeds d(root)/d(root) = 1 and runs the reverse sweep. The root must be a
  // scalar (one element); loss construction reduces before calling this.
  void backward(int root) {
    if (root < 0 || static_cast<std::size_t>(root) >= nodes_.size())
      throw std::invalid_argument("Tape::backward: node id out of range");
    const Tensor<T>& rv = *nodes_[static_cast<std::size_t>(root)].value;
    if (rv.numel() != 1)
      throw std::invalid_argument("Tape::backward: root must be scalar, shape " +
                                  shape_str(rv.shape()));
    grads_.assign(nodes_.size(), Tensor<T>());
    grads_[static_cast<std::size_t>(root)] = Tensor<T>::full(rv.shape(), T(1));
    for (int i = root; i >= 0; --i) {
      auto& node = nodes_[static_cast<std::size_t>(i)];
      if (node.back && grads_[static_cast<std::size_t>(i)].numel() > 0)
        node.back(grads_[static_cast<std::size_t>(i)], *this);
    }
  }

  bool has_grad(int id) const {
    return id >= 0 && static_cast<std::size_t>(id) < grads_.size() &&
           grads_[static_cast<std::size_t>(id)].numel() > 0;
  }

  const Tensor<T>& grad(int id) const {
    if (!has_grad(id)) throw std::runtime_error("Tape::grad: no gradient for node");
    return grads_[static_cast<std::size_t>(id)];
  }

  // Accumulates a partial derivative into a node's gradient slot.
  void add_grad(int id, Tensor<T>&& g) {
    if (id < 0) return;
    auto& slot = grads_[static_cast<std::size_t>(id)];
    if (slot.numel() == 0) {
      slot = std::move(g);
      return;
    }
    check_same_shape(slot, g, "Tape::add_grad");
    T* a = slot.data();
    const T* b = g.data();
    for (std::size_t i = 0; i < slot.numel(); ++i) a[i] += b[i];
  }

 private:
  struct Node {
    std::shared_ptr<const Tensor<T>> value;
    BackFn back;
  };

  int push(std::shared_ptr<const Tensor<T>> v, BackFn back) {
    nodes_.push_back(Node{std::move(v), std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
};

// A tensor value optionally attached to a tape node. Untracked values
// (tape == nullptr) flow through the same ops without recording.
template <typename T>
struct Value {
  std::shared_ptr<const Tensor<T>> data;
  Tape<T>* tape = nullptr;
  int id = -1;

  const Tensor<T>& val() const { return *data; }
  bool tracked() const { return tape != nullptr && id >= 0; }
};

template <typename T>
inline Value<T> make_untracked(Tensor<T> t) {
  return Value<T>{std::make_shared<const Tensor<T>>(std::move(t)), nullptr, -1};
}

template <typename T>
inline Tape<T>* common_tape(const Value<T>& a) {
  return a.tape;
}

template <typename T, typename... Rest>
inline Tape<T>* common_tape(const Value<T>& a, const Rest&... rest) {
  Tape<T>* t = common_tape(rest...);
  if (a.tape && t && a.tape != t)
    throw std::invalid_argument("op: operands belong to different tapes");
  return a.tape ? a.tape : t;
}

// Per-forward-pass context. Parameters are registered as leaves once per
// graph (cached by address) so their gradients can be fetched after
// backward(); with gradients disabled every wrapper returns untracked
// values that alias the caller's storage.
template <typename T>
class Graph {
 public:
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }
  Tape<T>& tape() { return tape_; }

  Value<T> param(const Tensor<T>& t) {
    std::shared_ptr<const Tensor<T>> alias(std::shared_ptr<const void>(), &t);
    if (!grad_enabled_) return Value<T>{alias, nullptr, -1};
    auto it = leaf_ids_.find(&t);
    if (it != leaf_ids_.end()) return Value<T>{alias, &tape_, it->second};
    int id = tape_.leaf(alias);
    leaf_ids_.emplace(&t, id);
    return Value<T>{alias, &tape_, id};
  }

  Value<T> input(Tensor<T> t) {
    auto p = std::make_shared<const Tensor<T>>(std::move(t));
    if (!grad_enabled_) return Value<T>{p, nullptr, -1};
    int id = tape_.leaf(p);
    return Value<T>{p, &tape_, id};
  }

  Value<T> constant(Tensor<T> t) { return make_untracked(std::move(t)); }

  void backward(const Value<T>& scalar_loss) {
    if (!scalar_loss.tracked())
      throw std::invalid_argument("Graph::backward: loss is not tracked");
    tape_.backward(scalar_loss.id);
  }

  // Gradient of a registered parameter, or nullptr if it never influenced
  // the loss on this graph.
  const Tensor<T>* grad_of(const Tensor<T>& t) const {
    auto it = leaf_ids_.find(&t);
    if (it == leaf_ids_.end() || !tape_.has_grad(it->second)) return nullptr;
    return &tape_.grad(it->second);
  }

  const Tensor<T>* grad_of_value(const Value<T>& v) const {
    if (!v.tracked() || !tape_.has_grad(v.id)) return nullptr;
    return &tape_.grad(v.id);
  }

 private:
  bool grad_enabled_;
  Tape<T> tape_;
  std::unordered_map<const Tensor<T>*, int> leaf_ids_;
};

}  // namespace pidimt
