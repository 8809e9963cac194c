#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <unordered_map>
#include <vector>

#include "uniclin/ad/tensor.hpp"

namespace uniclin::ad {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
// lives.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::span<const float> value() const;
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

// Reverse-mode tape. Nodes are appended in creation order, which is a
// topological order, so backward() is a single reverse sweep.
//
// One tape per forward pass; tapes share nothing, so independent passes may
// run on separate threads as long as the parameters are not being updated.
class Tape {
 public:
  // Receives the tape and the id of the node being back-propagated.
  using BackwardFn = std::function<void(Tape&, std::uint32_t)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Shape shape, std::vector<float> value);
  Var constant(const Tensor& t) {
    return constant(t.shape(), std::vector<float>(t.values().begin(), t.values().end()));
  }

  // Leaf reading `p` in place. If p.requires_grad(), backward() adds this
  // leaf's gradient into p.grad().
  Var param(Tensor& p);

  // Records an op result. The node requires grad iff any input does; `fn` is
  // kept only in that case. `fn` reads grad(self) and accumulates into the
  // inputs via grad().
  Var record(Shape shape, std::vector<float> value, std::initializer_list<Var> inputs,
             BackwardFn fn);
  Var record(Shape shape, std::vector<float> value, std::span<const Var> inputs,
             BackwardFn fn);

  void backward(Var scalar_loss);

  const Shape& shape(std::uint32_t id) const { return nodes_[id].shape; }
  std::span<const float> value(std::uint32_t id) const;
  std::span<const float> value(Var v) const { return value(v.id()); }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return requires_grad(v.id()); }

  // Gradient accumulator, zero-allocated on first touch.
  std::span<float> grad(std::uint32_t id);
  std::span<float> grad(Var v) { return grad(v.id()); }
  // Gradient after backward(); empty when nothing flowed into the node.
  std::span<const float> grad_of(Var v) const { return nodes_[v.id()].grad; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Shape shape;
    std::vector<float> value;
    const float* external = nullptr;
    std::vector<float> grad;
    bool requires_grad = false;
    Tensor* sink = nullptr;
    BackwardFn fn;
  };

  Var push(Node node);

  bool grad_enabled_;
  std::deque<Node> nodes_;
  std::unordered_map<const Tensor*, std::uint32_t> param_ids_;
};

}  // namespace uniclin::ad
