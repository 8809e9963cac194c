#include "uniclin/ad/adamw.hpp"

#include <cmath>

namespace uniclin::ad {

AdamW::AdamW(std::vector<Tensor*> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  for (Tensor* p : params_) {
    m_.emplace_back(p->numel(), 0.0f);
    v_.emplace_back(p->numel(), 0.0f);
  }
}

void AdamW::step() {
  ++step_;
  const auto& c = config_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(c.beta1), static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(c.beta2), static_cast<double>(step_));
  for (std::size_t n = 0; n < params_.size(); ++n) {
    Tensor& p = *params_[n];
    auto w = p.values();
    auto& m = m_[n];
    auto& v = v_[n];
    const bool has = p.has_grad();
    auto g = p.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const float gi = has ? g[i] : 0.0f;
      m[i] = c.beta1 * m[i] + (1.0f - c.beta1) * gi;
      v[i] = c.beta2 * v[i] + (1.0f - c.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      const double update = mhat / (std::sqrt(vhat) + c.eps) + c.weight_decay * w[i];
      w[i] = static_cast<float>(w[i] - c.lr * update);
    }
  }
  zero_grad();
}

void AdamW::zero_grad() {
  for (Tensor* p : params_) p->zero_grad();
}

}  // namespace uniclin::ad
