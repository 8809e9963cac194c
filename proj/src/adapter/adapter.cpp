#include "uniclin/adapter/adapter.hpp"

#include <cmath>
#include <random>

#include "uniclin/ad/ops.hpp"
#include "uniclin/error.hpp"

namespace uniclin::adapter {

ad::Var unfold_pad(ad::Var x, std::size_t d_lm) {
  if (x.rank() != 3) fail(ErrorKind::kAdapter, "unfold_pad: expected [t x k x d], got " + ad::shape_str(x.shape()));
  const std::size_t t = x.dim(0), kd = x.dim(1) * x.dim(2);
  if (kd > d_lm) {
    fail(ErrorKind::kAdapter, "k*d = " + std::to_string(kd) + " exceeds LM width " + std::to_string(d_lm));
  }
  return ad::pad_cols(ad::reshape(x, {t, kd}), d_lm);
}

ad::Var refold(ad::Var embeds, std::size_t k, std::size_t d) {
  if (embeds.rank() != 2 || k * d > embeds.dim(1)) fail(ErrorKind::kAdapter, "refold: shape mismatch");
  return ad::reshape(ad::slice_cols(embeds, 0, k * d), {embeds.dim(0), k, d});
}

Adapter::Adapter(AdapterConfig config, std::size_t k, std::size_t d, std::uint64_t seed)
    : config_(config), k_(k), d_(d) {
  if (config_.learned_bridge) {
    std::mt19937_64 rng(seed);
    const float sd = 1.0f / std::sqrt(static_cast<float>(k * d));
    params_.add("bridge.w", ad::Tensor::randn({config_.d_lm, k * d}, sd, rng, true));
    params_.add("bridge.b", ad::Tensor::zeros({config_.d_lm}, true));
  } else if (k * d > config_.d_lm) {
    fail(ErrorKind::kAdapter, "k*d = " + std::to_string(k * d) + " exceeds LM width " +
                                  std::to_string(config_.d_lm));
  }
}

ad::Var Adapter::apply(ad::Tape& tape, ad::Var x) {
  if (x.rank() != 3 || x.dim(1) != k_ || x.dim(2) != d_) {
    fail(ErrorKind::kAdapter, "adapter input " + ad::shape_str(x.shape()) + " does not match k, d");
  }
  if (!config_.learned_bridge) return unfold_pad(x, config_.d_lm);
  ad::Var flat = ad::reshape(x, {x.dim(0), k_ * d_});
  return ad::add_row(ad::matmul_nt(flat, tape.param(params_.at("bridge.w"))),
                     tape.param(params_.at("bridge.b")));
}

}  // namespace uniclin::adapter
