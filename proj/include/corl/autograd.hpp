#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <utility>

#include "corl/tensor.hpp"

namespace corl {

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor<Scalar>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  Index dim(Index axis) const { return value().dim(axis); }
  Index size() const { return value().size(); }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode gradient tape.
///
/// Nodes are appended in evaluation order, so replaying them backwards is a
/// valid topological order. Node storage is a deque: references to recorded
/// values stay valid while later nodes are appended. One tape per thread.
template <typename Scalar>
class Tape {
 public:
  /// Propagates the node's output gradient into its parents via grad_sink().
  using BackwardFn = std::function<void(Tape&, const Tensor<Scalar>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(Tensor<Scalar> value) { return push(std::move(value), false, {}); }

  Var<Scalar> variable(Tensor<Scalar> value) { return push(std::move(value), true, {}); }

  /// Records an op result. The node requires a gradient iff any parent does.
  Var<Scalar> record(Tensor<Scalar> value, std::initializer_list<Var<Scalar>> parents,
                     BackwardFn backward) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || nodes_[p.id()].requires_grad;
    return push(std::move(value), needs, needs ? std::move(backward) : BackwardFn{});
  }

  const Tensor<Scalar>& value(std::size_t id) const { return nodes_.at(id).value; }

  bool requires_grad(const Var<Scalar>& v) const { return nodes_.at(v.id()).requires_grad; }

  /// Gradient buffer of a node, zero-initialized on first use; nullptr when the
  /// node does not participate in differentiation.
  Array<Scalar>* grad_sink(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.size() == 0) n.grad = Tensor<Scalar>::zeros(n.value.shape());
    return &n.grad.array();
  }

  /// Accumulated gradient of `v`; zeros if nothing reached it.
  Tensor<Scalar> grad(const Var<Scalar>& v) const {
    const Node& n = nodes_.at(v.id());
    if (n.grad.size() == 0) return Tensor<Scalar>::zeros(n.value.shape());
    return n.grad;
  }

  /// Seeds d(loss)/d(loss) = 1 and replays the tape backwards.
  void backward(const Var<Scalar>& loss) {
    if (loss.size() != 1) {
      throw DimensionError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
    }
    Array<Scalar>* seed = grad_sink(loss.id());
    if (seed == nullptr) return;
    (*seed)[0] += Scalar(1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.grad);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<Scalar> push(Tensor<Scalar> value, bool requires_grad, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), Tensor<Scalar>{}, requires_grad, std::move(backward)});
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
};

}  // namespace corl
