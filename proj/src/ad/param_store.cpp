#include "uniclin/ad/param_store.hpp"

#include <cstring>

#include "uniclin/error.hpp"
#include "uniclin/hash.hpp"

namespace uniclin::ad {

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  auto [it, inserted] = tensors_.emplace(name, std::move(t));
  if (!inserted) fail(ErrorKind::kUsage, "param store: duplicate name " + name);
  return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) fail(ErrorKind::kUsage, "param store: no tensor named " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) fail(ErrorKind::kUsage, "param store: no tensor named " + name);
  return it->second;
}

std::size_t ParamStore::total_values() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.numel();
  return n;
}

void ParamStore::set_requires_grad(bool on) {
  for (auto& [_, t] : tensors_) t.set_requires_grad(on);
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : tensors_) t.zero_grad();
}

std::vector<Tensor*> ParamStore::trainable() {
  std::vector<Tensor*> out;
  for (auto& [_, t] : tensors_)
    if (t.requires_grad()) out.push_back(&t);
  return out;
}

std::uint64_t fingerprint(const ParamStore& store) {
  Fnv1a h;
  for (const auto& [name, t] : store) {
    h.update(name);
    for (auto d : t.shape()) h.update_pod(static_cast<std::uint64_t>(d));
    h.update_bytes(t.data(), t.numel() * sizeof(float));
  }
  return h.digest();
}

}  // namespace uniclin::ad
