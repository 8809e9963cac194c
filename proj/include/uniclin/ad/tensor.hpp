#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace uniclin::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major float32 tensor. Learned weights live in these; activations
// inside a forward pass live on a Tape instead.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<float> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, float value, bool requires_grad = false);
  // Normal(0, stddev) entries.
  static Tensor randn(Shape shape, float stddev, std::mt19937_64& rng,
                      bool requires_grad = false);

  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return values_.size(); }

  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }
  float* data() { return values_.data(); }
  const float* data() const { return values_.data(); }
  float& operator[](std::size_t i) { return values_[i]; }
  float operator[](std::size_t i) const { return values_[i]; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on);

  bool has_grad() const { return !grad_.empty(); }
  // Allocates a zero accumulator on first use.
  std::span<float> grad();
  std::span<const float> grad() const { return grad_; }
  void zero_grad();
  void drop_grad() { grad_.clear(); }

 private:
  Shape shape_;
  std::vector<float> values_;
  bool requires_grad_ = false;
  std::vector<float> grad_;
};

}  // namespace uniclin::ad
