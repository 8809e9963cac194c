#pragma once

#include <cmath>
#include <cstddef>
#include <span>

namespace uniclin {

// Linear interpolation between order statistics at rank p·(n−1).
// `sorted` must be ascending and non-empty.
inline double quantile_sorted(std::span<const double> sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = lo + 1 < sorted.size() ? lo + 1 : lo;
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace uniclin
