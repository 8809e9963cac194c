#include "uniclin/ad/tensor.hpp"

#include <algorithm>

#include "uniclin/error.hpp"

namespace uniclin::ad {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, bool requires_grad)
    : shape_(std::move(shape)),
      values_(ad::numel(shape_), 0.0f),
      requires_grad_(requires_grad) {}

Tensor::Tensor(Shape shape, std::vector<float> values, bool requires_grad)
    : shape_(std::move(shape)),
      values_(std::move(values)),
      requires_grad_(requires_grad) {
  if (ad::numel(shape_) != values_.size()) {
    fail(ErrorKind::kShape, "tensor: shape " + shape_str(shape_) + " does not hold " +
                                std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return Tensor(std::move(shape), requires_grad);
}

Tensor Tensor::filled(Shape shape, float value, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  std::fill(t.values_.begin(), t.values_.end(), value);
  return t;
}

Tensor Tensor::randn(Shape shape, float stddev, std::mt19937_64& rng,
                     bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  std::normal_distribution<float> dist(0.0f, stddev);
  for (auto& v : t.values_) v = dist(rng);
  return t;
}

void Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  if (!on) grad_.clear();
}

std::span<float> Tensor::grad() {
  if (grad_.empty()) grad_.assign(values_.size(), 0.0f);
  return grad_;
}

void Tensor::zero_grad() {
  std::fill(grad_.begin(), grad_.end(), 0.0f);
}

}  // namespace uniclin::ad
