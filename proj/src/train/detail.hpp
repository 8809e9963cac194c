#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "uniclin/ad/tensor.hpp"

namespace uniclin::train::detail {

// Copy of parameter values, restored in place.
class Snapshot {
 public:
  explicit Snapshot(const std::vector<ad::Tensor*>& params) { take(params); }

  void take(const std::vector<ad::Tensor*>& params) {
    values_.clear();
    for (const auto* p : params) values_.emplace_back(p->values().begin(), p->values().end());
  }
  void restore(const std::vector<ad::Tensor*>& params) const {
    for (std::size_t i = 0; i < params.size(); ++i) {
      std::copy(values_[i].begin(), values_[i].end(), params[i]->values().begin());
    }
  }

 private:
  std::vector<std::vector<float>> values_;
};

inline bool improves(std::optional<double> score, std::optional<double> best, bool first) {
  if (first) return true;
  return score && (!best || *score > *best);
}

// Sigmoid for a single logit, softmax otherwise.
inline void append_head_scores(const float* row, std::size_t width, std::vector<double>& out) {
  if (width == 1) {
    out.push_back(1.0 / (1.0 + std::exp(-static_cast<double>(row[0]))));
    return;
  }
  const double mx = *std::max_element(row, row + width);
  double z = 0.0;
  for (std::size_t c = 0; c < width; ++c) z += std::exp(row[c] - mx);
  for (std::size_t c = 0; c < width; ++c) out.push_back(std::exp(row[c] - mx) / z);
}

}  // namespace uniclin::train::detail
