// Copyright 2026 The SPNet Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef SPNET_TAPE_HPP_
#define SPNET_TAPE_HPP_

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "spnet/tensor.hpp"

namespace spnet {

/// Trainable tensor with its gradient accumulator. Gradients from every
/// backward pass are added into `grad` until zero_grad().
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor<T>::zeros_like(value)) {}

  void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
class Tape;

/// Handle to a value recorded on a tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<T>& value() const;
  const Tensor<T>& grad() const;
  bool requires_grad() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape<T>& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Linear record of executed operations. backward() walks the record in exact
/// reverse order, so each node's gradient is complete before it propagates.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr, nullptr); }

  /// Leaf that receives a gradient readable through Var::grad().
  Var<T> leaf(Tensor<T> value) { return push(std::move(value), grad_enabled_, nullptr, nullptr); }

  /// Leaf whose gradient is added into `p.grad` during backward.
  Var<T> param(Parameter<T>& p) {
    return push(p.value, grad_enabled_, nullptr, grad_enabled_ ? &p : nullptr);
  }

  /// Records an op output. `fn` runs only if some input requires a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& v : inputs) needs = needs || requires_grad(v.id());
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr, nullptr);
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  const Tensor<T>& grad(std::size_t id) {
    auto& n = nodes_.at(id);
    if (!n.has_grad) {
      n.grad = Tensor<T>::zeros_like(n.value);
      n.has_grad = true;
    }
    return n.grad;
  }

  /// Mutable gradient slot for `id`, zero-initialized on first use.
  Tensor<T>& grad_buffer(std::size_t id) {
    auto& n = nodes_.at(id);
    if (!n.has_grad) {
      n.grad = Tensor<T>::zeros_like(n.value);
      n.has_grad = true;
    }
    return n.grad;
  }

  void accumulate(std::size_t id, const Tensor<T>& g) {
    if (!requires_grad(id)) return;
    auto& buf = grad_buffer(id);
    require_same_shape(buf, g, "gradient accumulate");
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
  }

  /// Seeds d(root)/d(root) = 1 (root must be a scalar) and back-propagates.
  void backward(const Var<T>& root) {
    if (root.value().size() != 1) {
      throw ShapeError("backward without a seed needs a scalar root, got " +
                       shape_str(root.value().shape()));
    }
    backward(root, Tensor<T>(root.value().shape(), T(1)));
  }

  void backward(const Var<T>& root, const Tensor<T>& seed) {
    require_same_shape(root.value(), seed, "backward seed");
    if (!requires_grad(root.id())) return;
    accumulate(root.id(), seed);
    visit_order_.clear();
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.has_grad) continue;
      visit_order_.push_back(i);
      if (n.backward) n.backward(*this, n.grad);
      if (n.param) {
        for (std::size_t j = 0; j < n.grad.size(); ++j) n.param->grad[j] += n.grad[j];
      }
    }
  }

  /// Node ids visited by the most recent backward(), in visit order.
  const std::vector<std::size_t>& last_backward_order() const { return visit_order_; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, BackwardFn fn, Parameter<T>* p) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(fn);
    n.param = p;
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::vector<std::size_t> visit_order_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
const Tensor<T>& Var<T>::grad() const {
  return tape_->grad(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

}  // namespace spnet

#endif  // SPNET_TAPE_HPP_
