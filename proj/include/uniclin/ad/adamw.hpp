#pragma once

#include <cstdint>
#include <vector>

#include "uniclin/ad/tensor.hpp"

namespace uniclin::ad {

struct AdamWConfig {
  float lr = 3e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.0f;
};

// AdamW with decoupled weight decay and bias-corrected moments. Constant
// learning rate; there is no scheduler.
class AdamW {
 public:
  AdamW(std::vector<Tensor*> params, AdamWConfig config);

  // Applies one update from each parameter's accumulated grad, then zeroes
  // the grads. Parameters without a grad are treated as having grad 0.
  void step();
  void zero_grad();

  std::uint64_t step_count() const { return step_; }
  const AdamWConfig& config() const { return config_; }
  const std::vector<Tensor*>& params() const { return params_; }
  const std::vector<float>& first_moment(std::size_t i) const { return m_[i]; }
  const std::vector<float>& second_moment(std::size_t i) const { return v_[i]; }

 private:
  std::vector<Tensor*> params_;
  AdamWConfig config_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
};

}  // namespace uniclin::ad
