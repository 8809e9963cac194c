#include "uniclin/ad/tape.hpp"

#include "uniclin/error.hpp"

namespace uniclin::ad {

const Shape& Var::shape() const { return tape_->shape(id_); }
std::size_t Var::numel() const { return ad::numel(shape()); }
std::span<const float> Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Shape shape, std::vector<float> value) {
  if (numel(shape) != value.size()) {
    fail(ErrorKind::kShape, "constant: shape " + shape_str(shape) + " vs " +
                                std::to_string(value.size()) + " values");
  }
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::param(Tensor& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) {
    return Var(this, it->second);
  }
  Node n;
  n.shape = p.shape();
  n.external = p.data();
  n.requires_grad = grad_enabled_ && p.requires_grad();
  n.sink = n.requires_grad ? &p : nullptr;
  Var v = push(std::move(n));
  param_ids_.emplace(&p, v.id());
  return v;
}

Var Tape::record(Shape shape, std::vector<float> value, std::initializer_list<Var> inputs,
                 BackwardFn fn) {
  return record(std::move(shape), std::move(value),
                std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::record(Shape shape, std::vector<float> value, std::span<const Var> inputs,
                 BackwardFn fn) {
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(value);
  if (numel(n.shape) != n.value.size()) {
    fail(ErrorKind::kShape, "record: shape " + shape_str(n.shape) + " vs " +
                                std::to_string(n.value.size()) + " values");
  }
  if (grad_enabled_) {
    for (const Var& in : inputs) {
      if (nodes_[in.id()].requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
  }
  if (n.requires_grad) n.fn = std::move(fn);
  return push(std::move(n));
}

std::span<const float> Tape::value(std::uint32_t id) const {
  const Node& n = nodes_[id];
  if (n.external) return {n.external, numel(n.shape)};
  return n.value;
}

std::span<float> Tape::grad(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(numel(n.shape), 0.0f);
  return n.grad;
}

void Tape::backward(Var scalar_loss) {
  if (scalar_loss.tape_ != this) fail(ErrorKind::kUsage, "backward: foreign var");
  Node& root = nodes_[scalar_loss.id()];
  if (numel(root.shape) != 1) {
    fail(ErrorKind::kShape, "backward: loss must be scalar, got " + shape_str(root.shape));
  }
  if (!root.requires_grad) return;
  grad(scalar_loss.id())[0] = 1.0f;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.fn) n.fn(*this, static_cast<std::uint32_t>(i));
  }
  for (Node& n : nodes_) {
    if (!n.sink || n.grad.empty()) continue;
    auto dst = n.sink->grad();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += n.grad[j];
  }
}

}  // namespace uniclin::ad
