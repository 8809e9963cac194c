#pragma once

#include <cstdint>

#include "uniclin/ad/param_store.hpp"
#include "uniclin/ad/tape.hpp"

namespace uniclin::adapter {

// x[t × k × d] -> [t × D_lm]: row i is x[i,0,:] ∥ ... ∥ x[i,k−1,:] followed by
// zeros. Throws an adapter error when k·d > D_lm.
ad::Var unfold_pad(ad::Var x, std::size_t d_lm);

// Inverse of the occupied region: embeds[t × D_lm] -> [t × k × d].
ad::Var refold(ad::Var embeds, std::size_t k, std::size_t d);

struct AdapterConfig {
  std::size_t d_lm = 128;
  // Replace zero padding by a learned [D_lm × k·d] projection.
  bool learned_bridge = false;

  bool operator==(const AdapterConfig&) const = default;
};

class Adapter {
 public:
  Adapter(AdapterConfig config, std::size_t k, std::size_t d, std::uint64_t seed);

  const AdapterConfig& config() const { return config_; }
  ad::Var apply(ad::Tape& tape, ad::Var x);
  // Empty unless the learned bridge is on.
  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }

 private:
  AdapterConfig config_;
  std::size_t k_, d_;
  ad::ParamStore params_;
};

}  // namespace uniclin::adapter
