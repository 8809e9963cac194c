#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "uniclin/ad/tensor.hpp"

namespace uniclin::ad {

// Named weights of one model component. Iteration is in name order and
// references stay valid for the store's lifetime.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  std::size_t size() const { return tensors_.size(); }
  std::size_t total_values() const;

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  void set_requires_grad(bool on);
  void zero_grad();
  // Pointers to every tensor with requires_grad, in name order.
  std::vector<Tensor*> trainable();

 private:
  std::map<std::string, Tensor> tensors_;
};

// FNV-1a over names, shapes and raw bytes. Used to prove weights did not move.
std::uint64_t fingerprint(const ParamStore& store);

}  // namespace uniclin::ad
